"""Centralized clearing of the options market.

Three modes share one engine:

* ``social``      minimize the sum of profit variances subject to volume
                  balance, acceptability, per-scenario exercise balance and a
                  zero merchandising surplus in every scenario;
* ``so``          the same with one (q, K) shared by every participant, the
                  restriction a system operator faces;
* ``selfish``     maximize the expected merchandising surplus without the
                  zero-surplus requirement.

The per-scenario exercise quantities are not outer decision variables: given
the trades, :func:`allocate_exercise` resolves them scenario by scenario
(zeroing the surplus where attainable in social mode, maximizing it in
selfish mode). The outer problem over the trade triples is solved by SLSQP on
a smoothed objective (sigmoid surrogates for the indicator and positive
part), multi-started from a fixed seed list that always contains the zero
trade. Every candidate is re-evaluated with exact payoffs and the exact
allocation, and the final selection is a deterministic argmin over those
exact values, so the returned result never does worse than trading nothing.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit

from ._autodiff import Dual, dpos, dwsum, sigmoid, smooth_clamp, softplus_linear
from .market import MarketOutcome, Participant
from .options import (
    AcceptabilitySet,
    ExerciseAllocation,
    TradeBounds,
    TradeTriple,
    is_acceptable,
    ms_samples,
)
from .scenario import RandomSample, covariance, variance

__all__ = [
    "SmoothingConfig",
    "ClearingResult",
    "AllocationError",
    "smooth_indicator",
    "smooth_plus",
    "allocate_exercise",
    "clear_social",
    "clear_so",
    "clear_selfish",
    "volatility_diagnostic",
    "aggregate_report",
    "default_acceptability",
    "smoothed_objective_fn",
    "sample_feasible_points",
]


class AllocationError(RuntimeError):
    """Exercise demand cannot be covered by the sold volumes."""


def smooth_indicator(x, beta: float):
    """Sigmoid surrogate of 1{x >= 0}: (1 + exp(-beta x))^-1."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    return expit(beta * np.asarray(x, dtype=float))


def smooth_plus(x, beta: float):
    """Smooth surrogate of max(x, 0): x (1 + exp(-beta x))^-1."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    x = np.asarray(x, dtype=float)
    return x * expit(beta * x)


@dataclass(frozen=True)
class SmoothingConfig:
    """Smoothing and solver knobs; ``None`` fields resolve per instance.

    ``beta`` defaults to 50 / (price scale); ``ms_tol`` to 1e-4 * (max price
    * max volume). The penalty on the squared surplus residual escalates by
    ``ms_escalation`` per round until the exact residual drops below
    ``ms_tight_factor * ms_tol`` or the round budget is exhausted.
    """

    beta: float | None = None
    ms_tol: float | None = None
    eq_tol: float = 1e-6
    maxiter: int = 120
    n_random_starts: int = 4
    seed: int = 0
    ms_rounds: int = 6
    ms_escalation: float = 10.0
    ms_tight_factor: float = 0.05

    def __post_init__(self):
        if self.beta is not None and self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.eq_tol <= 0:
            raise ValueError("eq_tol must be positive")


@dataclass(frozen=True)
class ClearingResult:
    mode: str
    trades: dict[str, TradeTriple]
    roles: dict[str, str]
    allocation: ExerciseAllocation
    ms: RandomSample
    variance_before: dict[str, float]
    variance_after: dict[str, float]
    aggregate_delta: float
    objective: float
    expected_ms: float
    profits_after: dict[str, RandomSample]
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        eq_tol = self.diagnostics.get("eq_tol", 1e-6)
        bought = sum(t.delta for i, t in self.trades.items() if self.roles[i] == "buyer")
        sold = sum(t.delta for i, t in self.trades.items() if self.roles[i] == "seller")
        if abs(bought - sold) > eq_tol:
            raise ValueError(f"volume balance violated: bought {bought} vs sold {sold}")


# ---------------------------------------------------------------------------
# exercise allocation
# ---------------------------------------------------------------------------


def allocate_exercise(
    sell_trades: Mapping[str, TradeTriple],
    exercised_demand: np.ndarray,
    option_cash: np.ndarray,
    seller_prices: Mapping[str, np.ndarray],
    mode: str = "social",
    eq_tol: float = 1e-6,
) -> ExerciseAllocation:
    """Resolve per-scenario exercise among sellers.

    ``exercised_demand`` is the bought volume cashable in each scenario;
    ``option_cash`` is the surplus before seller settlements (fees minus
    buyer payouts), so the social target for the sellers' settlement total is
    its negation. Social mode steers |MS| to its per-scenario minimum by a
    greedy fill (cheapest settlement weight first) followed by volume
    transfers toward costlier sellers; selfish mode fills costliest first.
    Ties in weight are filled at the highest participant index first, which
    returns the lexicographically smallest vertex of the feasibility
    polytope. Raises :class:`AllocationError` when demand exceeds the total
    sold volume beyond ``eq_tol``.
    """
    if mode not in ("social", "selfish"):
        raise ValueError(f"unknown allocation mode {mode!r}")
    ids = list(sell_trades)
    caps = np.array([sell_trades[g].delta for g in ids])
    strikes = np.array([sell_trades[g].K for g in ids])
    demand = np.asarray(exercised_demand, dtype=float)
    cash = np.asarray(option_cash, dtype=float)
    n_scen = demand.size
    n_g = len(ids)
    total_cap = float(caps.sum())
    if np.any(demand > total_cap + eq_tol):
        worst = int(np.argmax(demand))
        raise AllocationError(
            f"scenario {worst}: exercise demand {demand[worst]:.6g} exceeds sold volume {total_cap:.6g}"
        )
    price_mat = np.array([np.asarray(seller_prices[g], dtype=float) for g in ids])
    weights = np.maximum(price_mat - strikes[:, None], 0.0)  # (n_g, n_scen)
    out = np.zeros((n_g, n_scen))
    tiny = 1e-12 * max(1.0, total_cap)
    for k in range(n_scen):
        e = min(demand[k], total_cap)
        if e <= 0.0 or n_g == 0:
            continue
        w = weights[:, k]
        if mode == "selfish":
            order = sorted(range(n_g), key=lambda g: (-w[g], -g))
        else:
            order = sorted(range(n_g), key=lambda g: (w[g], -g))
        delta = np.zeros(n_g)
        rem = e
        for g in order:
            take = min(caps[g], rem)
            delta[g] = take
            rem -= take
            if rem <= tiny:
                break
        if mode == "social":
            need = (-cash[k]) - float(w @ delta)
            if need > tiny:
                donors = [g for g in order if delta[g] > tiny]
                receivers = [g for g in reversed(order) if caps[g] - delta[g] > tiny]
                di = 0
                for r in receivers:
                    while need > tiny and di < len(donors):
                        d = donors[di]
                        gain = w[r] - w[d]
                        if gain <= tiny:
                            di = len(donors)
                            break
                        move = min(delta[d], caps[r] - delta[r], need / gain)
                        delta[d] -= move
                        delta[r] += move
                        need -= move * gain
                        if delta[d] <= tiny:
                            di += 1
                        if caps[r] - delta[r] <= tiny:
                            break
                    if need <= tiny:
                        break
        out[:, k] = delta
    return ExerciseAllocation(delta={g: out[i] for i, g in enumerate(ids)})


# ---------------------------------------------------------------------------
# problem assembly
# ---------------------------------------------------------------------------


@dataclass
class _Spec:
    mode: str
    buyers: list[str]
    sellers: list[str]
    sets: dict[str, AcceptabilitySet]
    weights: np.ndarray
    pi: dict[str, np.ndarray]
    price: dict[str, np.ndarray]
    beta: float
    beta_mw: float
    ms_tol: float
    eq_tol: float
    cfg: SmoothingConfig
    obj_scale: float
    price_scale: float
    dbar: float

    @property
    def ids(self) -> list[str]:
        return self.buyers + self.sellers

    @property
    def n_z(self) -> int:
        n = len(self.ids)
        return 2 + n if self.mode == "so" else 3 * n

    def box(self, pid: str) -> TradeBounds:
        return self.sets[pid].bounds

    def bounds_vector(self):
        if self.mode == "so":
            q_hi = min(self.box(i).q_max for i in self.ids)
            k_hi = min(self.box(i).K_max for i in self.ids)
            lo = np.zeros(self.n_z)
            hi = np.array([q_hi, k_hi] + [self.box(i).delta_max for i in self.ids])
        else:
            lo = np.zeros(self.n_z)
            hi = np.array(
                [v for i in self.ids for v in (self.box(i).q_max, self.box(i).K_max, self.box(i).delta_max)]
            )
        return lo, hi

    def unpack(self, z):
        z = np.asarray(z, dtype=float)
        n = len(self.ids)
        if self.mode == "so":
            q = np.full(n, z[0])
            K = np.full(n, z[1])
            d = z[2:]
        else:
            q, K, d = z[0::3], z[1::3], z[2::3]
        return q, K, d

    def unpack_dual(self, z):
        n = len(self.ids)
        n_z = self.n_z
        if self.mode == "so":
            q = [Dual.seed(z[0], 0, n_z) for _ in range(n)]
            K = [Dual.seed(z[1], 1, n_z) for _ in range(n)]
            d = [Dual.seed(z[2 + i], 2 + i, n_z) for i in range(n)]
        else:
            q = [Dual.seed(z[3 * i], 3 * i, n_z) for i in range(n)]
            K = [Dual.seed(z[3 * i + 1], 3 * i + 1, n_z) for i in range(n)]
            d = [Dual.seed(z[3 * i + 2], 3 * i + 2, n_z) for i in range(n)]
        return q, K, d


def _build_spec(mode, parts, outcome, sets, cfg, roles=None) -> _Spec:
    if outcome.infeasible_scenarios:
        raise ValueError(
            f"market outcome has infeasible scenarios {list(outcome.infeasible_scenarios)}; "
            f"cannot clear options against it"
        )
    parts_by_id = {p.id: p for p in parts}
    buyers, sellers = [], []
    for pid in sets:
        p = parts_by_id.get(pid)
        if p is None:
            raise ValueError(f"acceptability set given for unknown participant {pid!r}")
        role = (roles or {}).get(pid)
        if role is None:
            if p.kind == "variable":
                role = "buyer"
            elif p.kind == "dispatchable":
                role = "seller"
            else:
                raise ValueError(
                    f"consumer {pid!r} is excluded from the options market by default; "
                    f"pass an explicit role to include it"
                )
        (buyers if role == "buyer" else sellers).append(pid)
    if not buyers or not sellers:
        raise ValueError("clearing needs at least one buyer and one seller")
    prices = {pid: sets[pid].price.values for pid in sets}
    pis = {pid: sets[pid].baseline.values for pid in sets}
    price_scale = max(1.0, max(float(np.max(np.abs(v))) for v in prices.values()))
    dbar = max(sets[pid].bounds.delta_max for pid in sets)
    beta = cfg.beta if cfg.beta is not None else 50.0 / price_scale
    ms_tol = cfg.ms_tol if cfg.ms_tol is not None else 1e-4 * price_scale * max(dbar, 1e-9)
    obj_scale = max(1.0, sum(float(np.dot(outcome.scen.weights, (v - np.dot(outcome.scen.weights, v)) ** 2)) for v in pis.values()))
    return _Spec(
        mode=mode,
        buyers=buyers,
        sellers=sellers,
        sets=dict(sets),
        weights=outcome.scen.weights,
        pi=pis,
        price=prices,
        beta=beta,
        beta_mw=50.0 / max(1.0, dbar),
        ms_tol=ms_tol,
        eq_tol=cfg.eq_tol,
        cfg=cfg,
        obj_scale=obj_scale,
        price_scale=price_scale,
        dbar=dbar,
    )


# ---------------------------------------------------------------------------
# smoothed objective (forward-mode gradients)
# ---------------------------------------------------------------------------


def _smoothed_parts(spec: _Spec, z):
    """Smoothed per-participant profits and the surplus residual, as Duals.

    Returns ``(pi_after, ms, worst)`` where ``worst`` carries the worst-case
    (full-exercise) seller profiles the acceptability predicates refer to;
    for buyers it aliases ``pi_after``.
    """
    q, K, d = spec.unpack_dual(z)
    n_b = len(spec.buyers)
    n_z = spec.n_z
    beta = spec.beta
    pi_after: list[Dual] = []
    worst: list[Dual] = []
    fees = Dual.const(0.0, n_z)
    payout = Dual.const(np.zeros(spec.weights.size), n_z)
    exercised = Dual.const(np.zeros(spec.weights.size), n_z)
    for i, rid in enumerate(spec.buyers):
        p = Dual.const(spec.price[rid], n_z)
        pay = softplus_linear(p - K[i], beta)
        prof = Dual.const(spec.pi[rid], n_z) - q[i] * d[i] + pay * d[i]
        pi_after.append(prof)
        worst.append(prof)
        fees = fees + q[i] * d[i]
        payout = payout + pay * d[i]
        exercised = exercised + d[i] * sigmoid(p - K[i], beta)
    w_list = []
    for j, gid in enumerate(spec.sellers):
        i = n_b + j
        p = Dual.const(spec.price[gid], n_z)
        w_list.append(softplus_linear(p - K[i], beta))
        fees = fees - q[i] * d[i]
    cash = fees - payout  # fees net of buyer settlements, per scenario
    alloc = _smooth_allocation(spec, w_list, exercised, cash, d)
    settle = Dual.const(np.zeros(spec.weights.size), n_z)
    for j, gid in enumerate(spec.sellers):
        i = n_b + j
        settle = settle + w_list[j] * alloc[j]
        base = Dual.const(spec.pi[gid], n_z) + q[i] * d[i]
        pi_after.append(base - w_list[j] * alloc[j])
        worst.append(base - w_list[j] * d[i])
    ms = cash + settle
    return pi_after, ms, worst


def _smooth_allocation(spec: _Spec, w_list, exercised, cash, d):
    """Differentiable stand-in for :func:`allocate_exercise`.

    Social modes tilt a proportional split toward the zero-surplus target
    (for two sellers this reproduces the exact allocation whenever it is
    interior); selfish mode fills costliest sellers first with the greedy
    order frozen at the current point.
    """
    n_b = len(spec.buyers)
    n_g = len(spec.sellers)
    caps = [d[n_b + j] for j in range(n_g)]
    ones = Dual.const(np.ones(spec.weights.size), spec.n_z)
    if spec.mode == "selfish":
        # Fill costliest sellers first; the greedy order is frozen at the
        # current point and each fill is a smooth clamp at the seller's cap.
        order = sorted(range(n_g), key=lambda j: (-np.mean(w_list[j].v), -j))
        rem = exercised
        alloc: list[Dual] = [None] * n_g  # type: ignore[list-item]
        for j in order:
            take = smooth_clamp(rem, caps[j] * ones, spec.beta_mw)
            alloc[j] = take
            rem = rem - take
        return alloc
    total = caps[0]
    for c in caps[1:]:
        total = total + c
    tiny = 1e-12 * max(1.0, max(spec.box(i).delta_max for i in spec.ids))
    base = [caps[j] * exercised / (total + tiny) for j in range(n_g)]
    if n_g == 1:
        return [smooth_clamp(base[0], caps[0] * ones, spec.beta_mw)]
    wbar = w_list[0]
    for w in w_list[1:]:
        wbar = wbar + w
    wbar = wbar * (1.0 / n_g)
    u = [w_list[j] - wbar for j in range(n_g)]
    denom = u[0].square()
    for uj in u[1:]:
        denom = denom + uj.square()
    ridge = (1e-4 * (1.0 + spec.price_scale)) ** 2
    target = -cash
    got = base[0] * w_list[0]
    for j in range(1, n_g):
        got = got + base[j] * w_list[j]
    shift = (target - got) / (denom + ridge)
    return [
        smooth_clamp(base[j] + shift * u[j], caps[j] * ones, spec.beta_mw)
        for j in range(n_g)
    ]


def _dcvar(loss: Dual, weights: np.ndarray, alpha: float) -> Dual:
    """Sorted-tail CVaR as a linear functional of the loss (a.e. differentiable)."""
    if alpha == 0.0:
        return dwsum(weights, loss)
    order = np.argsort(-loss.v, kind="stable")
    tail = 1.0 - alpha
    coeff = np.zeros(weights.size)
    mass = 0.0
    for k in order:
        take = min(weights[k], tail - mass)
        if take <= 0.0:
            break
        coeff[k] = take / tail
        mass += take
    return Dual(np.dot(coeff, loss.v), np.tensordot(coeff, loss.g, axes=(0, 0)))


def _objective_fn(spec: _Spec, w_ms: float):
    """(value, gradient) of the smoothed clearing objective at z."""
    W = spec.weights
    inv_scale = 1.0 / spec.obj_scale
    cvar_ids = [i for i, pid in enumerate(spec.ids) if spec.sets[pid].mode == "cvar"]
    cvar_base = {}
    for i in cvar_ids:
        pid = spec.ids[i]
        neg = -spec.pi[pid]
        order = np.argsort(-neg, kind="stable")
        tail = 1.0 - spec.sets[pid].alpha
        acc = mass = 0.0
        for k in order:
            take = min(W[k], tail - mass)
            if take <= 0.0:
                break
            acc += take * neg[k]
            mass += take
        cvar_base[i] = acc / tail if spec.sets[pid].alpha > 0 else float(np.dot(W, neg))
    viol_scale = max(1.0, 0.05 * spec.price_scale * spec.dbar)
    w_cvar = 100.0 * spec.obj_scale / viol_scale**2

    def fg(z):
        pi_after, ms, worst = _smoothed_parts(spec, z)
        if spec.mode == "selfish":
            obj = -dwsum(W, ms)
        else:
            obj = Dual.const(0.0, spec.n_z)
            for s in pi_after:
                mean = dwsum(W, s)
                obj = obj + dwsum(W, s.square()) - mean.square()
            obj = obj + w_ms * dwsum(W, ms.square())
        for i in cvar_ids:
            pid = spec.ids[i]
            after = _dcvar(-worst[i], W, spec.sets[pid].alpha)
            obj = obj + w_cvar * dpos(after - cvar_base[i]).square()
        obj = obj * inv_scale
        return float(obj.v), np.asarray(obj.g, dtype=float)

    return fg


def smoothed_objective_fn(parts, outcome, sets, cfg=None, mode="social", ms_penalty=None):
    """Public handle on the smoothed objective used by the optimizer."""
    cfg = cfg or SmoothingConfig()
    spec = _build_spec(mode, parts, outcome, sets, cfg)
    w_ms = ms_penalty if ms_penalty is not None else _initial_penalty(spec)
    return _objective_fn(spec, w_ms)


def sample_feasible_points(parts, outcome, sets, cfg=None, mode="social", count=20, seed=0):
    """Random points inside the trade boxes satisfying the volume balance."""
    cfg = cfg or SmoothingConfig()
    spec = _build_spec(mode, parts, outcome, sets, cfg)
    rng = np.random.default_rng(seed)
    lo, hi = spec.bounds_vector()
    out = []
    for _ in range(count):
        z = rng.uniform(lo + 0.05 * (hi - lo), lo + 0.95 * (hi - lo))
        out.append(_balance_volumes(spec, z))
    return out


def _balance_volumes(spec: _Spec, z):
    """Scale volumes so bought equals sold, staying inside the boxes."""
    q, K, d = spec.unpack(z)
    n_b = len(spec.buyers)
    bought, sold = d[:n_b].sum(), d[n_b:].sum()
    if bought <= 0 or sold <= 0:
        common = 0.0
    else:
        common = min(bought, sold)
    d = d.copy()
    d[:n_b] *= common / bought if bought > 0 else 0.0
    d[n_b:] *= common / sold if sold > 0 else 0.0
    return _pack(spec, q, K, d)


def _pack(spec: _Spec, q, K, d):
    if spec.mode == "so":
        return np.concatenate([[q[0], K[0]], d])
    out = np.empty(3 * len(d))
    out[0::3], out[1::3], out[2::3] = q, K, d
    return out


# ---------------------------------------------------------------------------
# exact evaluation and candidate selection
# ---------------------------------------------------------------------------


def _polish_fees(spec: _Spec, q, K, d):
    """Replace risk-neutral fees by the fair fee E[(p - K)^+].

    Fees cancel out of every profit variance, so this leaves the objective
    untouched while making each risk-neutral acceptability margin bind
    exactly, which pins E[profit] to its baseline and recentres the
    merchandising surplus. Skipped where the fair fee falls outside the
    participant's box on the unfavorable side.
    """
    q = q.copy()
    W = spec.weights
    n_b = len(spec.buyers)
    for i, pid in enumerate(spec.ids):
        if spec.sets[pid].mode != "risk_neutral" or d[i] <= 0.0:
            continue
        fair = float(np.dot(W, np.maximum(spec.price[pid] - K[i], 0.0)))
        clipped = min(max(fair, 0.0), spec.box(pid).q_max)
        if i >= n_b and clipped < fair:
            continue  # a capped fee would leave the seller underpaid
        q[i] = clipped
    return q


@dataclass
class _Candidate:
    index: int
    source: str
    z: np.ndarray
    trades: dict[str, TradeTriple]
    alloc: ExerciseAllocation
    ms: np.ndarray
    profits_after: dict[str, np.ndarray]
    sum_var_after: float
    expected_ms: float
    acceptable: bool
    balance_ok: bool
    ms_ok: bool

    @property
    def admissible(self) -> bool:
        return self.acceptable and self.balance_ok


def _evaluate_exact(spec: _Spec, z, index, source) -> _Candidate:
    lo, hi = spec.bounds_vector()
    z = np.clip(np.asarray(z, dtype=float), lo, hi)
    q, K, d = spec.unpack(z)
    if spec.mode == "social":
        q = _polish_fees(spec, q, K, d)
    trades = {pid: TradeTriple(float(q[i]), float(K[i]), float(d[i])) for i, pid in enumerate(spec.ids)}
    n_b = len(spec.buyers)
    bought = float(d[:n_b].sum())
    sold = float(d[n_b:].sum())
    balance_ok = abs(bought - sold) <= spec.eq_tol
    acceptable = True
    for i, pid in enumerate(spec.ids):
        role = "buyer" if i < n_b else "seller"
        if not is_acceptable(spec.sets[pid], trades[pid], role, tol=1e-7):
            acceptable = False
            break
    n = spec.weights.size
    exercised = np.zeros(n)
    cash = np.zeros(n)
    for rid in spec.buyers:
        t = trades[rid]
        p = spec.price[rid]
        exercised += t.delta * (p >= t.K)
        cash += t.q * t.delta - np.maximum(p - t.K, 0.0) * t.delta
    sell_trades = {gid: trades[gid] for gid in spec.sellers}
    for gid in spec.sellers:
        cash -= trades[gid].q * trades[gid].delta
    alloc_mode = "selfish" if spec.mode == "selfish" else "social"
    alloc = allocate_exercise(
        sell_trades, exercised, cash, {g: spec.price[g] for g in spec.sellers},
        mode=alloc_mode, eq_tol=spec.eq_tol + abs(bought - sold),
    )
    ms = ms_samples(
        {rid: trades[rid] for rid in spec.buyers}, sell_trades, alloc, spec.price
    )
    profits_after: dict[str, np.ndarray] = {}
    sum_var = 0.0
    W = spec.weights
    for i, pid in enumerate(spec.ids):
        t = trades[pid]
        p = spec.price[pid]
        if i < n_b:
            prof = spec.pi[pid] - t.q * t.delta + np.maximum(p - t.K, 0.0) * t.delta
        else:
            prof = spec.pi[pid] + t.q * t.delta - np.maximum(p - t.K, 0.0) * alloc.delta[pid]
        profits_after[pid] = prof
        mean = float(np.dot(W, prof))
        sum_var += float(np.dot(W, (prof - mean) ** 2))
    return _Candidate(
        index=index,
        source=source,
        z=z,
        trades=trades,
        alloc=alloc,
        ms=ms,
        profits_after=profits_after,
        sum_var_after=sum_var,
        expected_ms=float(np.dot(W, ms)),
        acceptable=acceptable,
        balance_ok=balance_ok,
        ms_ok=bool(np.max(np.abs(ms), initial=0.0) <= spec.ms_tol),
    )


# ---------------------------------------------------------------------------
# starts, manifold fast path, SLSQP driver
# ---------------------------------------------------------------------------


def _weighted_quantile(values, weights, frac):
    order = np.argsort(values, kind="stable")
    cw = np.cumsum(weights[order])
    idx = int(np.searchsorted(cw, frac * cw[-1]))
    return float(values[order][min(idx, len(values) - 1)])


def _starts(spec: _Spec) -> list[np.ndarray]:
    n_b = len(spec.buyers)
    ids = spec.ids
    W = spec.weights
    dmax = np.array([spec.box(i).delta_max for i in ids])
    out = [np.zeros(spec.n_z)]

    def heuristic(k_frac, vol_frac):
        qv = np.empty(len(ids))
        kv = np.empty(len(ids))
        for i, pid in enumerate(ids):
            p = spec.price[pid]
            kv[i] = min(_weighted_quantile(p, W, k_frac), spec.box(pid).K_max)
            qv[i] = min(float(np.dot(W, np.maximum(p - kv[i], 0.0))), spec.box(pid).q_max)
        common = vol_frac * min(dmax[:n_b].sum(), dmax[n_b:].sum())
        dv = np.empty(len(ids))
        dv[:n_b] = dmax[:n_b] * common / dmax[:n_b].sum() if dmax[:n_b].sum() > 0 else 0.0
        dv[n_b:] = dmax[n_b:] * common / dmax[n_b:].sum() if dmax[n_b:].sum() > 0 else 0.0
        if spec.mode == "so":
            qv[:] = qv.min()
            kv[:] = kv.min()
        return _pack(spec, qv, kv, dv)

    out.append(heuristic(0.5, 0.5))
    out.append(heuristic(0.25, 0.8))
    rng = np.random.default_rng(spec.cfg.seed)
    lo, hi = spec.bounds_vector()
    for _ in range(spec.cfg.n_random_starts):
        z = rng.uniform(lo, hi)
        out.append(_balance_volumes(spec, z))
    return out


def _manifold_candidate(spec: _Spec):
    """Exact grid-plus-zoom search for instances with one buyer and one seller
    settling against the same price sample.

    On such instances a shared (q, K) with q = E[(p - K)^+] zeroes the
    surplus in every scenario and makes both risk-neutral acceptability
    constraints bind, so the search space collapses to (K, volume).
    """
    if spec.mode not in ("social", "so"):
        return None
    if len(spec.buyers) != 1 or len(spec.sellers) != 1:
        return None
    rid, gid = spec.buyers[0], spec.sellers[0]
    if not np.array_equal(spec.price[rid], spec.price[gid]):
        return None
    if any(spec.sets[i].mode not in ("risk_neutral", "box_only") for i in (rid, gid)):
        return None
    p = spec.price[rid]
    W = spec.weights
    q_hi = min(spec.box(rid).q_max, spec.box(gid).q_max)
    k_hi = min(spec.box(rid).K_max, spec.box(gid).K_max)
    d_hi = min(spec.box(rid).delta_max, spec.box(gid).delta_max)
    pi_r, pi_g = spec.pi[rid], spec.pi[gid]
    var_r0 = float(np.dot(W, (pi_r - np.dot(W, pi_r)) ** 2))
    var_g0 = float(np.dot(W, (pi_g - np.dot(W, pi_g)) ** 2))

    def objective(k_grid, d_grid):
        pay = np.maximum(p[None, :] - k_grid[:, None], 0.0)  # (nK, n)
        qv = pay @ W
        mask = qv <= q_hi + 1e-12
        mean_pay = qv
        var_pay = (pay**2) @ W - mean_pay**2
        cov_r = ((pay * pi_r[None, :]) @ W) - mean_pay * np.dot(W, pi_r)
        cov_g = ((pay * pi_g[None, :]) @ W) - mean_pay * np.dot(W, pi_g)
        d2 = d_grid[None, :] ** 2
        d1 = d_grid[None, :]
        total = (
            var_r0 + 2.0 * d1 * cov_r[:, None] + d2 * var_pay[:, None]
            + var_g0 - 2.0 * d1 * cov_g[:, None] + d2 * var_pay[:, None]
        )
        total = np.where(mask[:, None], total, np.inf)
        return total, qv

    k_lo, k_span = 0.0, k_hi
    d_lo, d_span = 0.0, d_hi
    best = None
    for _ in range(4):
        k_grid = np.linspace(k_lo, k_lo + k_span, 61)
        d_grid = np.linspace(d_lo, d_lo + d_span, 41)
        total, qv = objective(k_grid, d_grid)
        flat = int(np.argmin(total))
        ik, idx = divmod(flat, d_grid.size)
        best = (float(k_grid[ik]), float(qv[ik]), float(d_grid[idx]))
        k_span = max(k_span / 5.0, 1e-9)
        d_span = max(d_span / 5.0, 1e-9)
        k_lo = min(max(best[0] - k_span / 2.0, 0.0), k_hi - k_span)
        d_lo = min(max(best[2] - d_span / 2.0, 0.0), d_hi - d_span)
    K, q, d = best[0], best[1], best[2]
    return _pack(spec, np.full(2, q), np.full(2, K), np.array([d, d]))


def _initial_penalty(spec: _Spec) -> float:
    # Mild at first so the variance term shapes the early search; escalation
    # rounds then tighten the surplus residual as far as the instance permits.
    return 1e-3 * spec.obj_scale / max(spec.ms_tol, 1e-12) ** 2


def _constraints(spec: _Spec):
    n_b = len(spec.buyers)
    n = len(spec.ids)

    def bal(z):
        _, _, d = spec.unpack(z)
        return float(d[n_b:].sum() - d[:n_b].sum())

    def bal_jac(z):
        g = np.zeros(spec.n_z)
        if spec.mode == "so":
            g[2: 2 + n_b] = -1.0
            g[2 + n_b:] = 1.0
        else:
            for i in range(n):
                g[3 * i + 2] = 1.0 if i >= n_b else -1.0
        return g

    cons = [{"type": "eq", "fun": bal, "jac": bal_jac}]
    for i, pid in enumerate(spec.ids):
        if spec.sets[pid].mode != "risk_neutral":
            continue
        role_sign = 1.0 if i < n_b else -1.0
        price = spec.price[pid]
        W = spec.weights

        def margin(z, i=i, price=price, sign=role_sign):
            q, K, d = spec.unpack(z)
            epay = float(np.dot(W, np.maximum(price - K[i], 0.0)))
            return float(d[i] * sign * (epay - q[i]))

        def margin_jac(z, i=i, price=price, sign=role_sign):
            q, K, d = spec.unpack(z)
            epay = float(np.dot(W, np.maximum(price - K[i], 0.0)))
            dK = -float(np.dot(W, (price > K[i]).astype(float)))
            g = np.zeros(spec.n_z)
            gq, gk, gd = -sign * d[i], sign * d[i] * dK, sign * (epay - q[i])
            if spec.mode == "so":
                g[0] += gq
                g[1] += gk
                g[2 + i] += gd
            else:
                g[3 * i] = gq
                g[3 * i + 1] = gk
                g[3 * i + 2] = gd
            return g

        cons.append({"type": "ineq", "fun": margin, "jac": margin_jac})
    return cons


def _clear(mode: str, parts, outcome: MarketOutcome, sets, cfg=None, roles=None) -> ClearingResult:
    cfg = cfg or SmoothingConfig()
    spec = _build_spec(mode, parts, outcome, sets, cfg, roles=roles)
    lo, hi = spec.bounds_vector()
    constraints = _constraints(spec)
    candidates: list[_Candidate] = []
    candidates.append(_evaluate_exact(spec, np.zeros(spec.n_z), 0, "zero"))
    manifold_z = _manifold_candidate(spec)
    if manifold_z is not None:
        candidates.append(_evaluate_exact(spec, manifold_z, len(candidates), "manifold"))
    iterations = 0
    ms_tight = spec.cfg.ms_tight_factor * spec.ms_tol
    for z0 in _starts(spec):
        z = np.clip(z0, lo, hi)
        w_ms = _initial_penalty(spec)
        rounds = spec.cfg.ms_rounds if mode in ("social", "so") else 1
        for _ in range(max(rounds, 1)):
            with warnings.catch_warnings():
                # SLSQP steps slightly outside the bounds and clips internally.
                warnings.filterwarnings("ignore", message="Values in x were outside bounds",
                                        category=RuntimeWarning)
                res = minimize(
                    _objective_fn(spec, w_ms),
                    z,
                    jac=True,
                    method="SLSQP",
                    bounds=list(zip(lo, hi)),
                    constraints=constraints,
                    options={"maxiter": spec.cfg.maxiter, "ftol": 1e-12},
                )
            iterations += int(res.get("nit", 0))
            z = np.clip(res.x, lo, hi)
            cand = _evaluate_exact(spec, z, len(candidates), f"slsqp@{w_ms:.3g}")
            candidates.append(cand)
            if mode == "selfish" or spec.cfg.maxiter == 0:
                break
            if np.max(np.abs(cand.ms), initial=0.0) <= ms_tight:
                break
            w_ms *= spec.cfg.ms_escalation
    chosen = _select(spec, candidates)
    return _finalize(spec, outcome, chosen, candidates, iterations)


def _select(spec: _Spec, candidates: list[_Candidate]) -> _Candidate:
    admissible = [c for c in candidates if c.admissible]
    if spec.mode == "selfish":
        best = max(admissible, key=lambda c: (c.expected_ms, -c.index))
        return best
    strict = [c for c in admissible if c.ms_ok]
    pool = strict if strict else admissible
    best = min(pool, key=lambda c: (c.sum_var_after, c.index))
    zero = candidates[0]
    manifold = next((c for c in pool if c.source == "manifold"), None)
    if (
        manifold is not None
        and manifold.sum_var_after <= zero.sum_var_after
        and manifold.sum_var_after <= best.sum_var_after * (1.0 + 1e-4) + 1e-12 * spec.obj_scale
    ):
        # Prefer the structured exact-surplus candidate within solver resolution.
        return manifold
    return best


def _finalize(spec, outcome, chosen: _Candidate, candidates, iterations) -> ClearingResult:
    W = spec.weights
    var_before = {}
    var_after = {}
    for pid in spec.ids:
        b = spec.pi[pid]
        var_before[pid] = float(np.dot(W, (b - np.dot(W, b)) ** 2))
        a = chosen.profits_after[pid]
        var_after[pid] = float(np.dot(W, (a - np.dot(W, a)) ** 2))
    aggregate = sum(var_after.values()) - sum(var_before.values())
    roles = {pid: ("buyer" if pid in spec.buyers else "seller") for pid in spec.ids}
    ms_flags = [int(k) for k in np.nonzero(np.abs(chosen.ms) > spec.ms_tol)[0]]
    demand = np.zeros(spec.weights.size)
    for rid in spec.buyers:
        t = chosen.trades[rid]
        demand += t.delta * (spec.price[rid] >= t.K)
    sold = sum(chosen.trades[g].delta for g in spec.sellers)
    exercise_residual = float(np.max(np.abs(np.minimum(demand, sold) - chosen.alloc.total()), initial=0.0))
    diagnostics = {
        "eq_tol": spec.eq_tol,
        "ms_tol": spec.ms_tol,
        "beta": spec.beta,
        "exercise_balance_max": exercise_residual,
        "iterations": iterations,
        "ms_max": float(np.max(np.abs(chosen.ms), initial=0.0)),
        "ms_flagged_scenarios": ms_flags,
        "chosen_source": chosen.source,
        "zero_trade_fallback": all(t.delta == 0.0 for t in chosen.trades.values())
        and len(candidates) > 1,
        "volatility_guarantee": spec.mode in ("social", "so"),
        "candidates": [
            {
                "index": c.index,
                "source": c.source,
                "sum_var_after": c.sum_var_after,
                "expected_ms": c.expected_ms,
                "admissible": c.admissible,
                "ms_ok": c.ms_ok,
            }
            for c in candidates
        ],
    }
    scen = outcome.scen
    return ClearingResult(
        mode=spec.mode,
        trades=chosen.trades,
        roles=roles,
        allocation=chosen.alloc,
        ms=scen.sample(chosen.ms),
        variance_before=var_before,
        variance_after=var_after,
        aggregate_delta=float(aggregate),
        objective=float(chosen.sum_var_after if spec.mode != "selfish" else chosen.expected_ms),
        expected_ms=chosen.expected_ms,
        profits_after={pid: scen.sample(v) for pid, v in chosen.profits_after.items()},
        diagnostics=diagnostics,
    )


def clear_social(parts, outcome: MarketOutcome, sets, cfg=None, roles=None) -> ClearingResult:
    """Socially cleared trades: minimize total profit variance at zero surplus."""
    return _clear("social", parts, outcome, sets, cfg, roles)


def clear_so(parts, outcome: MarketOutcome, sets, cfg=None, roles=None) -> ClearingResult:
    """Social clearing under one shared (q, K) for all participants."""
    return _clear("so", parts, outcome, sets, cfg, roles)


def clear_selfish(parts, outcome: MarketOutcome, sets, cfg=None, roles=None) -> ClearingResult:
    """Profit-maximizing intermediary: maximize the expected surplus."""
    return _clear("selfish", parts, outcome, sets, cfg, roles)


# ---------------------------------------------------------------------------
# diagnostics and reporting
# ---------------------------------------------------------------------------


def volatility_diagnostic(
    p: Participant,
    outcome: MarketOutcome,
    trade: TradeTriple,
    alloc: np.ndarray | None = None,
):
    """Covariance test for a strict variance reduction.

    Splits the participant's profit change into the real-time energy margin A
    and the option cash flow B; the cleared variance drops exactly when
    cov(2A + B, B) is negative. Returns ``(cov, reduces)``.
    """
    scen = outcome.scen
    prices = outcome.price_sample(p).values
    X = outcome.forward.dispatch[p.id]
    x = np.array([r.dispatch[p.id] for r in outcome.realtime])
    A = prices * (x - X) - p.true(x)
    payoff = np.maximum(prices - trade.K, 0.0)
    if p.kind == "variable":
        B = payoff * trade.delta
    else:
        exercised = np.full(scen.n, trade.delta) if alloc is None else np.asarray(alloc, dtype=float)
        B = -payoff * exercised
    cov = covariance(scen.sample(2.0 * A + B), scen.sample(B))
    return cov, bool(cov < 0.0)


def aggregate_report(result: ClearingResult, baseline: Mapping[str, RandomSample] | None = None):
    """Per-participant and aggregate variance deltas as a list of rows."""
    rows = []
    for pid, t in result.trades.items():
        before = result.variance_before[pid]
        if baseline is not None and pid in baseline:
            before = variance(baseline[pid])
        after = result.variance_after[pid]
        rows.append(
            {
                "participant": pid,
                "role": result.roles[pid],
                "q": t.q,
                "K": t.K,
                "delta": t.delta,
                "var_before": before,
                "var_after": after,
                "var_delta": after - before,
            }
        )
    rows.append(
        {
            "participant": "TOTAL",
            "role": "",
            "q": "",
            "K": "",
            "delta": "",
            "var_before": sum(result.variance_before.values()),
            "var_after": sum(result.variance_after.values()),
            "var_delta": result.aggregate_delta,
        }
    )
    return rows


def default_acceptability(
    parts,
    outcome: MarketOutcome,
    delta_max: float,
    mode: str = "risk_neutral",
    alpha: float = 0.0,
    price_cap: float | None = None,
    members: Sequence[str] | None = None,
) -> dict[str, AcceptabilitySet]:
    """Acceptability sets with the default allowable box.

    The fee and strike caps default to the maximum real-time price over all
    scenarios and buses; the volume cap is instance-specific.
    """
    cap = price_cap if price_cap is not None else float(np.max(outcome.rt_prices()))
    bounds = TradeBounds(q_max=cap, K_max=cap, delta_max=delta_max)
    out = {}
    for p in parts:
        if members is not None and p.id not in members:
            continue
        if p.kind == "consumer":
            continue
        out[p.id] = AcceptabilitySet(
            bounds=bounds,
            mode=mode,
            baseline=outcome.profits[p.id],
            price=outcome.price_sample(p),
            alpha=alpha,
        )
    return out
