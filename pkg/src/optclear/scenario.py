"""Discrete scenario sets and the statistics defined on them.

Everything downstream (dispatch, option settlement, clearing) works on a
finite weighted scenario set. Uncertain quantities are carried as one value
per scenario (:class:`RandomSample`); expectation, variance, covariance and
CVaR are weighted sums over the set.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

__all__ = [
    "ScenarioSet",
    "RandomSample",
    "RiskPreference",
    "make_uniform_grid",
    "common_uniform_grid",
    "explicit_scenarios",
    "expectation",
    "variance",
    "covariance",
    "cvar",
]

_WEIGHT_TOL = 1e-12


def _as_readonly(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class ScenarioSet:
    """Finite probability space: weights plus per-scenario sampled quantities.

    ``wind`` maps a variable producer id to its per-scenario available
    capacity (MW). ``demand`` optionally maps a bus index to per-scenario
    demand (MW); deterministic demand lives on the participants instead.
    """

    weights: np.ndarray
    wind: Mapping[str, np.ndarray] = field(default_factory=dict)
    demand: Mapping[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        w = _as_readonly(self.weights)
        if w.ndim != 1 or w.size < 1:
            raise ValueError("scenario set needs at least one scenario")
        if np.any(w < 0):
            raise ValueError("scenario weights must be nonnegative")
        if abs(float(w.sum()) - 1.0) > _WEIGHT_TOL:
            raise ValueError(f"scenario weights sum to {w.sum()!r}, not 1")
        object.__setattr__(self, "weights", w)
        wind = {}
        for key, vals in dict(self.wind).items():
            v = _as_readonly(vals)
            if v.shape != w.shape:
                raise ValueError(f"wind series {key!r} has wrong length")
            if np.any(v < 0):
                raise ValueError(f"wind series {key!r} has negative availability")
            wind[key] = v
        object.__setattr__(self, "wind", wind)
        dem = {}
        for bus, vals in dict(self.demand).items():
            v = _as_readonly(vals)
            if v.shape != w.shape:
                raise ValueError(f"demand series for bus {bus} has wrong length")
            dem[int(bus)] = v
        object.__setattr__(self, "demand", dem)

    @property
    def n(self) -> int:
        return self.weights.size

    def sample(self, values) -> "RandomSample":
        return RandomSample(values=np.asarray(values, dtype=float), scen=self)

    def constant(self, value: float) -> "RandomSample":
        return self.sample(np.full(self.n, float(value)))


@dataclass(frozen=True)
class RandomSample:
    """One real value per scenario of a referenced :class:`ScenarioSet`."""

    values: np.ndarray
    scen: ScenarioSet

    def __post_init__(self):
        v = _as_readonly(self.values)
        if v.shape != (self.scen.n,):
            raise ValueError(
                f"sample has {v.size} values for a {self.scen.n}-scenario set"
            )
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class RiskPreference:
    """CVaR level alpha in [0, 1); alpha = 0 is risk-neutral."""

    alpha: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError(f"alpha must be in [0, 1), got {self.alpha}")


def _same_space(*samples: RandomSample) -> ScenarioSet:
    base = samples[0].scen
    for s in samples[1:]:
        if s.scen is base:
            continue
        if s.scen.n != base.n or not np.array_equal(s.scen.weights, base.weights):
            raise ValueError("samples live on different scenario sets")
    return base


def make_uniform_grid(mu: float, sigma: float, n: int, producer: str = "wind") -> ScenarioSet:
    """Midpoint-rule discretization of uniform wind on [mu-sqrt(3)sigma, mu+sqrt(3)sigma].

    Equal weights; the grid is symmetric around ``mu`` so the sample mean is
    ``mu`` up to float roundoff, and the sample variance converges to
    ``sigma**2`` as n grows.
    """
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    if n < 1:
        raise ValueError("n must be at least 1")
    half = np.sqrt(3.0) * sigma
    if mu - half < 0:
        raise ValueError(
            f"uniform support [{mu - half:.6g}, {mu + half:.6g}] extends below zero wind"
        )
    # Offsets built antisymmetric by construction so the grid mean has no bias.
    h = 2.0 * half / n
    k = np.arange(n // 2)
    pos = half - h * (k + 0.5)
    offsets = np.concatenate([-pos, [0.0] if n % 2 else [], pos[::-1]])
    points = mu + offsets
    weights = np.full(n, 1.0 / n)
    return ScenarioSet(weights=weights, wind={producer: points})


def common_uniform_grid(params: Mapping[str, tuple[float, float]], n: int) -> ScenarioSet:
    """Uniform midpoint grid with one shared shock driving several producers.

    Each producer ``r`` with ``(mu_r, sigma_r)`` sees
    ``mu_r + sqrt(3) sigma_r * u`` where ``u`` is the common standardized
    uniform on [-1, 1]; producers are perfectly correlated.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    base = make_uniform_grid(1.0, 1.0 / np.sqrt(3.0), n, producer="_u")
    u = (base.wind["_u"] - 1.0)  # standardized shock in [-1, 1]
    wind = {}
    for pid, (mu, sigma) in params.items():
        if mu - np.sqrt(3.0) * sigma < 0:
            raise ValueError(f"producer {pid!r}: negative wind support")
        wind[pid] = mu + np.sqrt(3.0) * sigma * u
    return ScenarioSet(weights=base.weights, wind=wind)


def explicit_scenarios(
    wind: Mapping[str, Sequence[float]],
    weights: Sequence[float] | None = None,
    demand: Mapping[int, Sequence[float]] | None = None,
) -> ScenarioSet:
    """Scenario set from explicit per-scenario values (equal weights by default)."""
    first = next(iter(wind.values()))
    n = len(first)
    w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=float)
    return ScenarioSet(weights=w, wind=wind, demand=demand or {})


def expectation(x: RandomSample) -> float:
    return float(np.dot(x.scen.weights, x.values))


def covariance(x: RandomSample, y: RandomSample) -> float:
    scen = _same_space(x, y)
    w = scen.weights
    xc = x.values - np.dot(w, x.values)
    yc = y.values - np.dot(w, y.values)
    return float(np.dot(w, xc * yc))


def variance(x: RandomSample) -> float:
    return covariance(x, x)


def cvar(loss: RandomSample, pref: RiskPreference | float = 0.0) -> float:
    """Expected loss over the worst (1 - alpha) probability mass.

    Sort-based with a fractional weight on the boundary atom, which is exact
    for discrete distributions. When the tail mass fits inside the largest
    loss atom this degenerates to the maximum loss. alpha = 0 returns the
    plain expectation.
    """
    alpha = pref.alpha if isinstance(pref, RiskPreference) else float(pref)
    if not 0.0 <= alpha < 1.0:
        raise ValueError(f"alpha must be in [0, 1), got {alpha}")
    if alpha == 0.0:
        return expectation(loss)
    w = loss.scen.weights
    order = np.argsort(-loss.values, kind="stable")
    vals = loss.values[order]
    wts = w[order]
    tail = 1.0 - alpha
    acc = 0.0
    mass = 0.0
    for v, p in zip(vals, wts):
        take = min(p, tail - mass)
        if take <= 0.0:
            break
        acc += take * v
        mass += take
    return acc / tail
