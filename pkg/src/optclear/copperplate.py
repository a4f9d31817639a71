"""Closed forms for the single-bus benchmark system.

Three participants serve a fixed demand d: an inflexible base-load unit B
(true marginal cost epsilon, offers 1), a fully flexible peaker P (true
marginal cost 1, offers 1/rho) and a wind producer W whose availability is
uniform on [mu - sqrt(3) sigma, mu + sqrt(3) sigma]. Everything the two-stage
market computes numerically for this system has an analytic counterpart here,
which doubles as the test oracle: dispatch, prices, profits, the loss region,
the leader-follower equilibria of the bilateral option trade, and the
centrally cleared optimum with its aggregate variance reduction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .scenario import RiskPreference, cvar

__all__ = [
    "CopperplateInstance",
    "AnalyticDispatch",
    "analytic_dispatch",
    "analytic_profits",
    "loss_region",
    "stackelberg_classify",
    "bilateral_variance_delta",
    "central_optimum",
    "acceptability_boundary",
]

SQRT3 = math.sqrt(3.0)


@dataclass(frozen=True)
class CopperplateInstance:
    """Parameters of the single-bus system; defaults match the reference case."""

    mu: float = 10.0
    sigma: float = 1.0
    rho: float = SQRT3 / 20.0
    epsilon: float = 0.5
    d: float = 20.0

    def __post_init__(self):
        if not 0.0 < self.rho <= 1.0:
            raise ValueError(f"rho must be in (0, 1], got {self.rho}")
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError(f"epsilon must be in (0, 1), got {self.epsilon}")
        if self.mu - SQRT3 * self.sigma < 0:
            raise ValueError("wind support extends below zero")
        if self.d < self.mu + SQRT3 * self.sigma:
            raise ValueError("demand must cover the maximum available wind")

    @property
    def omega_lo(self) -> float:
        return self.mu - SQRT3 * self.sigma

    @property
    def omega_hi(self) -> float:
        return self.mu + SQRT3 * self.sigma

    @property
    def peak_price(self) -> float:
        return 1.0 / self.rho

    def check_omega(self, omega) -> np.ndarray:
        omega = np.asarray(omega, dtype=float)
        if np.any(omega < self.omega_lo - 1e-9) or np.any(omega > self.omega_hi + 1e-9):
            raise ValueError(f"scenario outside [{self.omega_lo:.6g}, {self.omega_hi:.6g}]")
        return omega


@dataclass(frozen=True)
class AnalyticDispatch:
    forward: dict[str, float]
    forward_price: float
    realtime: dict[str, np.ndarray]
    realtime_price: np.ndarray


def analytic_dispatch(inst: CopperplateInstance, omega) -> AnalyticDispatch:
    """Forward and per-scenario real-time dispatch and prices.

    Real-time price convention at the kink: the peak price 1/rho applies on
    the closed interval omega <= mu (a zero-measure point, but tests pin it).
    """
    omega = inst.check_omega(omega)
    shortfall = np.maximum(inst.mu - omega, 0.0)
    return AnalyticDispatch(
        forward={"B": inst.d - inst.mu, "P": 0.0, "W": inst.mu},
        forward_price=1.0,
        realtime={
            "B": np.full_like(omega, inst.d - inst.mu),
            "P": shortfall,
            "W": np.minimum(omega, inst.mu),
        },
        realtime_price=np.where(omega <= inst.mu, inst.peak_price, 0.0),
    )


def analytic_profits(inst: CopperplateInstance, omega):
    """(pi_B, pi_P, pi_W) per scenario."""
    omega = inst.check_omega(omega)
    shortfall = np.maximum(inst.mu - omega, 0.0)
    pi_b = np.full_like(omega, (inst.d - inst.mu) * (1.0 - inst.epsilon))
    pi_p = shortfall * (inst.peak_price - 1.0)
    pi_w = inst.mu - shortfall * inst.peak_price
    return pi_b, pi_p, pi_w


def loss_region(inst: CopperplateInstance) -> tuple[float, float] | None:
    """Half-open interval of scenarios where W loses money, or None if empty."""
    if inst.rho >= SQRT3 * inst.sigma / inst.mu:
        return None
    return (inst.omega_lo, inst.mu * (1.0 - inst.rho))


def stackelberg_classify(inst: CopperplateInstance, q: float, K: float, tol: float = 1e-9):
    """Classify (q, K) for the bilateral leader-follower trade.

    Returns ``(label, best_response)`` where the follower's best response is
    the purchased volume: 0 above the manifold 2q + K = 1/rho ("degenerate"
    equilibrium), anything in [0, sqrt(3) sigma] on it ("equilibrium"), and
    the full sqrt(3) sigma below it ("not_equilibrium").
    """
    if q < 0 or K < 0:
        raise ValueError("q and K must be nonnegative")
    cap = SQRT3 * inst.sigma
    s = 2.0 * q + K
    level = inst.peak_price
    if s > level + tol * max(1.0, level):
        return "degenerate", 0.0
    if s >= level - tol * max(1.0, level):
        return "equilibrium", (0.0, cap)
    return "not_equilibrium", cap


def bilateral_variance_delta(inst: CopperplateInstance, q: float, K: float, delta: float, tol: float = 1e-6):
    """Variance change (delta_W, delta_P) of an on-manifold trade of volume delta.

    Requires 2q + K = 1/rho. At delta = sqrt(3) sigma these collapse to
    -(3/2) q K sigma^2 and -(3/2) q (K - 1) sigma^2.
    """
    level = inst.peak_price
    if abs(2.0 * q + K - level) > tol * max(1.0, level):
        raise ValueError(f"trade off the equilibrium manifold: 2q+K={2*q+K:.6g} vs {level:.6g}")
    cap = SQRT3 * inst.sigma
    if not -1e-9 <= delta <= cap + 1e-9:
        raise ValueError(f"delta must lie in [0, {cap:.6g}]")
    base = q * q * delta * (delta - cap)
    d_w = base - q * K * delta * cap / 2.0
    d_p = base - q * (K - 1.0) * delta * cap / 2.0
    return d_w, d_p


def central_optimum(inst: CopperplateInstance, delta: float):
    """Optimal shared trade (q*, K*) at volume ``delta`` plus the objective value.

    Valid for delta in [sqrt(3) sigma (2 - rho) / 4, sqrt(3) sigma], on which
    the aggregate variance change is the constant
    -(3 sigma^2 / 8)(1/rho - 1/2)^2. Returns
    ``(q, K, (delta_lo, delta_hi), aggregate_delta)``.
    """
    cap = SQRT3 * inst.sigma
    lo = cap * (2.0 - inst.rho) / 4.0
    if not lo - 1e-9 <= delta <= cap + 1e-9:
        raise ValueError(
            f"delta {delta:.6g} outside [{lo:.6g}, {cap:.6g}]; below the range the "
            f"option fee would exceed the 1/(2 rho) cap"
        )
    q = (cap / (4.0 * inst.rho * delta)) - cap / (8.0 * delta)
    K = inst.peak_price * (2.0 * delta - cap) / (2.0 * delta) + cap / (4.0 * delta)
    agg = -(3.0 * inst.sigma**2 / 8.0) * (inst.peak_price - 0.5) ** 2
    return q, K, (lo, cap), agg


def _profiles(inst: CopperplateInstance, n: int):
    """Even midpoint grid over the wind support with profits and prices."""
    from .scenario import make_uniform_grid

    scen = make_uniform_grid(inst.mu, inst.sigma, n, producer="W")
    omega = scen.wind["W"]
    _, pi_p, pi_w = analytic_profits(inst, omega)
    price = np.where(omega <= inst.mu, inst.peak_price, 0.0)
    return scen, pi_p, pi_w, price


def acceptability_boundary(
    inst: CopperplateInstance,
    alpha: float,
    role: str,
    delta_grid,
    q_grid,
    n_scenarios: int = 400,
    k_max: float | None = None,
):
    """Strike boundary K(q, delta) where CVaR acceptability switches.

    For the seller P the boundary is the smallest acceptable strike; for the
    buyer W the largest. Monotonicity of the profit in K makes bisection
    valid. Entries are NaN where no strike in [0, k_max] is acceptable.
    Returns an array of shape (len(q_grid), len(delta_grid)).
    """
    if role not in ("seller", "buyer"):
        raise ValueError("role must be 'seller' or 'buyer'")
    pref = RiskPreference(alpha)
    scen, pi_p, pi_w, price = _profiles(inst, n_scenarios)
    pi = pi_p if role == "seller" else pi_w
    base = cvar(scen.sample(-pi), pref)
    k_hi = inst.peak_price if k_max is None else k_max

    def acceptable(q, K, delta) -> bool:
        payoff = np.maximum(price - K, 0.0) * delta
        after = pi + q * delta - payoff if role == "seller" else pi - q * delta + payoff
        return cvar(scen.sample(-after), pref) <= base + 1e-12

    out = np.full((len(q_grid), len(delta_grid)), np.nan)
    for i, q in enumerate(q_grid):
        for j, delta in enumerate(delta_grid):
            if delta == 0.0:
                # Degenerate trade: any strike acceptable; boundary at the box edge.
                out[i, j] = 0.0 if role == "seller" else k_hi
                continue
            lo_ok = acceptable(q, 0.0, delta)
            hi_ok = acceptable(q, k_hi, delta)
            if role == "seller":
                if lo_ok:
                    out[i, j] = 0.0
                    continue
                if not hi_ok:
                    continue
                lo, hi = 0.0, k_hi  # unacceptable at lo, acceptable at hi
                for _ in range(60):
                    mid = 0.5 * (lo + hi)
                    if acceptable(q, mid, delta):
                        hi = mid
                    else:
                        lo = mid
                out[i, j] = hi
            else:
                if not lo_ok:
                    continue
                if hi_ok:
                    out[i, j] = k_hi
                    continue
                lo, hi = 0.0, k_hi  # acceptable at lo, unacceptable at hi
                for _ in range(60):
                    mid = 0.5 * (lo + hi)
                    if acceptable(q, mid, delta):
                        lo = mid
                    else:
                        hi = mid
                out[i, j] = lo
    return out
