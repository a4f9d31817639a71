"""Two-stage electricity market: forward and real-time dispatch, prices, profits.

The forward stage dispatches against the certainty surrogate (mean) of wind
availability; the real-time stage re-dispatches each scenario subject to ramp
constraints around the forward set-points. Nodal prices are the optimal
multipliers of the nodal energy-balance constraints, recovered from the QP
duals. Profits follow the settlement

    pi_i = P*_n X*_i + p^w_n (x^w_i - X*_i) - c_true(x^w_i)

with offered costs used for dispatch and true costs for profit.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np

from .network import NetworkModel
from .scenario import RandomSample, ScenarioSet

__all__ = [
    "BIG",
    "Participant",
    "ForwardResult",
    "RealtimeResult",
    "MarketOutcome",
    "InfeasibleMarketError",
    "certainty_surrogate",
    "DispatchModel",
    "solve_forward",
    "solve_realtime",
    "solve_market",
    "compute_profits",
    "multi_period_aggregate",
]

# Sentinel for "unbounded" capacity or ramp; bounds at or above it are dropped
# from the programs so they can never bind.
BIG = 1e9

_SOLVER_OPTS = dict(solver="CLARABEL", tol_gap_abs=1e-12, tol_gap_rel=1e-12, tol_feas=1e-12)


class InfeasibleMarketError(RuntimeError):
    """Raised when a dispatch program has no feasible point (or is unbounded)."""


@dataclass(frozen=True)
class Participant:
    """A market participant: dispatchable or variable producer, or a consumer.

    Costs are convex quadratics ``a x^2 + b x`` given as ``(a, b)``.
    ``offered_cost`` drives dispatch and prices; ``true_cost`` (defaulting to
    the offer) drives profits. Variable producers take their per-scenario
    availability from the scenario set under their ``id``; ramps apply to
    dispatchable producers only.
    """

    id: str
    kind: str  # "dispatchable" | "variable" | "consumer"
    bus: int = 0
    offered_cost: tuple[float, float] = (0.0, 0.0)
    true_cost: tuple[float, float] | None = None
    capacity: float = BIG
    ramp: float = BIG
    demand: float = 0.0

    def __post_init__(self):
        if self.kind not in ("dispatchable", "variable", "consumer"):
            raise ValueError(f"unknown participant kind {self.kind!r}")
        a, _ = self.offered_cost
        if a < 0:
            raise ValueError("offered cost must be convex (a >= 0)")
        if self.capacity < 0 or self.ramp < 0 or self.demand < 0:
            raise ValueError("capacity, ramp and demand must be nonnegative")

    @property
    def cost_true(self) -> tuple[float, float]:
        return self.true_cost if self.true_cost is not None else self.offered_cost

    def offered(self, x):
        a, b = self.offered_cost
        return a * x * x + b * x

    def true(self, x):
        a, b = self.cost_true
        return a * x * x + b * x


@dataclass(frozen=True)
class ForwardResult:
    dispatch: dict[str, float]
    prices: np.ndarray  # $/MWh per bus
    objective: float
    kkt_residual: float


@dataclass(frozen=True)
class RealtimeResult:
    scenario: int
    dispatch: dict[str, float]
    prices: np.ndarray
    objective: float
    kkt_residual: float
    feasible: bool = True


@dataclass(frozen=True)
class MarketOutcome:
    """Both dispatch stages plus per-participant profit samples."""

    scen: ScenarioSet
    forward: ForwardResult
    realtime: tuple[RealtimeResult, ...]
    profits: dict[str, RandomSample]
    consumer_payments: dict[str, RandomSample] = field(default_factory=dict)
    infeasible_scenarios: tuple[int, ...] = ()

    def rt_prices(self) -> np.ndarray:
        """Real-time nodal prices, shape (n_scenarios, n_buses)."""
        return np.array([r.prices for r in self.realtime])

    def price_sample(self, p: Participant) -> RandomSample:
        return self.scen.sample(self.rt_prices()[:, p.bus])


def certainty_surrogate(p: Participant, s: ScenarioSet) -> float:
    """Mean availability clipped to [0, capacity]; forward bound for wind."""
    if p.kind != "variable":
        raise ValueError(f"certainty surrogate is only defined for variable producers, not {p.kind}")
    avail = s.wind.get(p.id)
    if avail is None:
        raise ValueError(f"scenario set has no availability series for {p.id!r}")
    mean = float(np.dot(s.weights, avail))
    return min(max(mean, 0.0), p.capacity)


def _bus_demand(parts, scen: ScenarioSet, bus_count: int):
    """(mean demand per bus, per-scenario demand per bus)."""
    det = np.zeros(bus_count)
    for p in parts:
        if p.kind == "consumer":
            det[p.bus] += p.demand
    per = np.tile(det, (scen.n, 1))
    mean = det.copy()
    for bus, series in scen.demand.items():
        per[:, bus] += series
        mean[bus] += float(np.dot(scen.weights, series))
    return mean, per


def _validate_availability(parts, scen):
    for p in parts:
        if p.kind == "variable":
            avail = scen.wind.get(p.id)
            if avail is None:
                raise ValueError(f"no availability series for variable producer {p.id!r}")
            if np.any(avail > p.capacity + 1e-9):
                raise ValueError(f"availability exceeds installed capacity for {p.id!r}")


class DispatchModel:
    """Prebuilt cvxpy programs for one (network, participants, scenarios) instance.

    The real-time program is parametrized in the wind bounds and nodal demand
    so it compiles once and re-solves per scenario. Nodal price convention:
    balance constraints are written ``supply - demand - y == 0`` under
    minimization, whose optimal multiplier is the negated nodal price.
    """

    def __init__(self, net: NetworkModel, parts, scen: ScenarioSet):
        self.net = net
        self.parts = list(parts)
        self.scen = scen
        _validate_availability(self.parts, scen)
        self.producers = [p for p in self.parts if p.kind != "consumer"]
        if not self.producers:
            raise ValueError("instance has no producers")
        self.mean_demand, self.scenario_demand = _bus_demand(self.parts, scen, net.bus_count)
        self._rt_problem = None

    def _network_constraints(self, x_by_bus, y, demand):
        balance = []
        for b in range(self.net.bus_count):
            supply = x_by_bus[b] if x_by_bus[b] is not None else 0.0
            balance.append(supply - demand[b] - y[b] == 0)
        cons = list(balance) + [cp.sum(y) == 0]
        if len(self.net.lines):
            H, L = self.net.shift_factors, self.net.limits
            cons += [H @ y <= L, -(H @ y) <= L]
        return balance, cons

    def _group_by_bus(self, x):
        grouped = []
        for b in range(self.net.bus_count):
            idx = [i for i, p in enumerate(self.producers) if p.bus == b]
            grouped.append(cp.sum(x[idx]) if idx else None)
        return grouped

    def _solve(self, prob) -> None:
        prob.solve(**_SOLVER_OPTS)
        if prob.status not in ("optimal", "optimal_inaccurate"):
            raise InfeasibleMarketError(f"dispatch program ended with status {prob.status!r}")

    # -- forward stage --------------------------------------------------

    def solve_forward(self) -> ForwardResult:
        n_prod = len(self.producers)
        X = cp.Variable(n_prod)
        y = cp.Variable(self.net.bus_count)
        upper = np.empty(n_prod)
        for i, p in enumerate(self.producers):
            upper[i] = certainty_surrogate(p, self.scen) if p.kind == "variable" else p.capacity
        capped = [i for i in range(n_prod) if upper[i] < BIG]
        balance, cons = self._network_constraints(self._group_by_bus(X), y, self.mean_demand)
        lo = X >= 0
        cons.append(lo)
        hi = X[capped] <= upper[capped] if capped else None
        if hi is not None:
            cons.append(hi)
        a = np.array([p.offered_cost[0] for p in self.producers])
        b_lin = np.array([p.offered_cost[1] for p in self.producers])
        prob = cp.Problem(cp.Minimize(cp.sum(cp.multiply(a, cp.square(X)) + cp.multiply(b_lin, X))), cons)
        self._solve(prob)
        prices = -np.array([float(c.dual_value) for c in balance])
        xv = np.asarray(X.value, dtype=float)
        mu_hi = np.zeros(n_prod)
        if hi is not None:
            mu_hi[capped] = np.asarray(hi.dual_value, dtype=float).reshape(len(capped))
        res = _kkt_residual(a, b_lin, xv, prices[[p.bus for p in self.producers]],
                            np.asarray(lo.dual_value, dtype=float), mu_hi)
        return ForwardResult(
            dispatch={p.id: float(xv[i]) for i, p in enumerate(self.producers)},
            prices=prices,
            objective=float(prob.value),
            kkt_residual=res,
        )

    # -- real-time stage -------------------------------------------------

    def _build_realtime(self, forward: ForwardResult):
        n_prod = len(self.producers)
        x = cp.Variable(n_prod)
        y = cp.Variable(self.net.bus_count)
        lower = np.zeros(n_prod)
        fixed_upper = np.full(n_prod, np.inf)
        for i, p in enumerate(self.producers):
            if p.kind == "dispatchable":
                set_point = forward.dispatch[p.id]
                lower[i] = max(0.0, set_point - p.ramp)
                fixed_upper[i] = min(p.capacity, set_point + p.ramp)
        # Upper bounds: per-scenario wind availability for variable producers,
        # min(capacity, set point + ramp) for dispatchables; sentinel bounds dropped.
        capped = [
            i for i, p in enumerate(self.producers)
            if p.kind == "variable" or fixed_upper[i] < BIG
        ]
        param = cp.Parameter(len(capped)) if capped else None
        demand = cp.Parameter(self.net.bus_count)
        balance, cons = self._network_constraints(self._group_by_bus(x), y, demand)
        lo = x >= lower
        cons.append(lo)
        hi = x[capped] <= param if capped else None
        if hi is not None:
            cons.append(hi)
        a = np.array([p.offered_cost[0] for p in self.producers])
        b_lin = np.array([p.offered_cost[1] for p in self.producers])
        prob = cp.Problem(cp.Minimize(cp.sum(cp.multiply(a, cp.square(x)) + cp.multiply(b_lin, x))), cons)
        self._rt_problem = (prob, x, balance, lo, hi, capped, fixed_upper, param, demand, a, b_lin)

    def solve_realtime(self, forward: ForwardResult, k: int) -> RealtimeResult:
        if self._rt_problem is None:
            self._build_realtime(forward)
        prob, x, balance, lo, hi, capped, fixed_upper, param, demand, a, b_lin = self._rt_problem
        if param is not None:
            ub = np.empty(len(capped))
            for j, i in enumerate(capped):
                p = self.producers[i]
                if p.kind == "variable":
                    ub[j] = min(self.scen.wind[p.id][k], p.capacity)
                else:
                    ub[j] = fixed_upper[i]
            param.value = ub
        demand.value = self.scenario_demand[k]
        try:
            self._solve(prob)
        except InfeasibleMarketError:
            nan = float("nan")
            return RealtimeResult(
                scenario=k,
                dispatch={p.id: nan for p in self.producers},
                prices=np.full(self.net.bus_count, nan),
                objective=nan,
                kkt_residual=nan,
                feasible=False,
            )
        prices = -np.array([float(c.dual_value) for c in balance])
        xv = np.asarray(x.value, dtype=float)
        mu_hi = np.zeros(len(self.producers))
        if hi is not None:
            mu_hi[capped] = np.asarray(hi.dual_value, dtype=float).reshape(len(capped))
        res = _kkt_residual(a, b_lin, xv, prices[[p.bus for p in self.producers]],
                            np.asarray(lo.dual_value, dtype=float), mu_hi)
        return RealtimeResult(
            scenario=k,
            dispatch={p.id: float(xv[i]) for i, p in enumerate(self.producers)},
            prices=prices,
            objective=float(prob.value),
            kkt_residual=res,
        )


def _kkt_residual(a, b_lin, x, price_at_bus, mu_lo, mu_hi) -> float:
    """Max relative stationarity residual: c'(x) - P - mu_lo + mu_hi = 0."""
    grad = 2.0 * a * x + b_lin
    stat = grad - price_at_bus - mu_lo + mu_hi
    scale = max(1.0, float(np.max(np.abs(grad))), float(np.max(np.abs(price_at_bus))))
    return float(np.max(np.abs(stat))) / scale


def solve_forward(net: NetworkModel, parts, scen: ScenarioSet) -> ForwardResult:
    """Forward dispatch and prices against certainty-surrogate wind."""
    return DispatchModel(net, parts, scen).solve_forward()


def solve_realtime(net, parts, forward: ForwardResult, scen: ScenarioSet, k: int) -> RealtimeResult:
    """Real-time dispatch and prices for one scenario given the forward result."""
    return DispatchModel(net, parts, scen).solve_realtime(forward, k)


def solve_market(net: NetworkModel, parts, scen: ScenarioSet, threads: int | None = None) -> MarketOutcome:
    """Run both stages for every scenario and settle profits.

    ``threads`` (default: env OPTCLEAR_THREADS or 1) caps parallel scenario
    solves; results are assembled by scenario index so the outcome does not
    depend on completion order. Infeasible scenarios are flagged and the run
    continues; settlement then raises with the offending indices.
    """
    model = DispatchModel(net, parts, scen)
    fwd = model.solve_forward()
    if threads is None:
        threads = int(os.environ.get("OPTCLEAR_THREADS", "1") or 1)
    if threads > 1:
        # Parametrized problems are not reentrant: give each worker its own
        # model and a fixed slice of scenarios, then reassemble by index.
        chunks = [list(range(w, scen.n, threads)) for w in range(threads)]
        models = [DispatchModel(net, parts, scen) for _ in chunks]

        def run_chunk(m, ks):
            return [(k, m.solve_realtime(fwd, k)) for k in ks]

        results: list[RealtimeResult | None] = [None] * scen.n
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for chunk in pool.map(run_chunk, models, chunks):
                for k, r in chunk:
                    results[k] = r
        rt = tuple(results)  # type: ignore[arg-type]
    else:
        rt = tuple(model.solve_realtime(fwd, k) for k in range(scen.n))
    infeasible = tuple(r.scenario for r in rt if not r.feasible)
    profits: dict[str, RandomSample] = {}
    payments: dict[str, RandomSample] = {}
    if not infeasible:
        profits, payments = compute_profits(net, parts, fwd, rt, scen)
    return MarketOutcome(
        scen=scen,
        forward=fwd,
        realtime=rt,
        profits=profits,
        consumer_payments=payments,
        infeasible_scenarios=infeasible,
    )


def compute_profits(net, parts, forward: ForwardResult, realtime, scen: ScenarioSet):
    """Per-scenario profit samples for producers and payment streams for consumers."""
    realtime = tuple(realtime)
    if any(not r.feasible for r in realtime):
        bad = [r.scenario for r in realtime if not r.feasible]
        raise InfeasibleMarketError(f"cannot settle profits; infeasible scenarios {bad}")
    rt_prices = np.array([r.prices for r in realtime])
    profits: dict[str, RandomSample] = {}
    payments: dict[str, RandomSample] = {}
    for p in parts:
        if p.kind == "consumer":
            # Forward charge on expected demand plus the real-time balancing stream.
            stochastic = scen.demand.get(p.bus)
            exp_d = p.demand + (float(np.dot(scen.weights, stochastic)) if stochastic is not None else 0.0)
            d_series = p.demand + (stochastic if stochastic is not None else 0.0)
            pay = forward.prices[p.bus] * exp_d + rt_prices[:, p.bus] * (exp_d - d_series)
            payments[p.id] = scen.sample(pay)
            profits[p.id] = scen.sample(-pay)
            continue
        X = forward.dispatch[p.id]
        x = np.array([r.dispatch[p.id] for r in realtime])
        pr = rt_prices[:, p.bus]
        pi = forward.prices[p.bus] * X + pr * (x - X) - p.true(x)
        profits[p.id] = scen.sample(pi)
    return profits, payments


def multi_period_aggregate(prices: list[RandomSample], profits: list[RandomSample]):
    """Average price and total profit over T periods for one participant."""
    if not prices or not profits:
        raise ValueError("need at least one period")
    if len(prices) != len(profits):
        raise ValueError(f"mismatched period counts: {len(prices)} prices vs {len(profits)} profits")
    scen = prices[0].scen
    for s in prices + profits:
        if s.scen.n != scen.n or not np.array_equal(s.scen.weights, scen.weights):
            raise ValueError("periods live on different scenario sets")
    T = len(prices)
    avg_price = scen.sample(sum(s.values for s in prices) / T)
    total_profit = scen.sample(sum(s.values for s in profits))
    return avg_price, total_profit
