import functools

import numpy as np
import pytest

import optclear as oc

COPPER = oc.CopperplateInstance()


def copperplate_participants(inst: oc.CopperplateInstance = COPPER):
    return [
        oc.Participant(id="B", kind="dispatchable", offered_cost=(0.0, 1.0),
                       true_cost=(0.0, inst.epsilon), ramp=0.0),
        oc.Participant(id="P", kind="dispatchable", offered_cost=(0.0, inst.peak_price),
                       true_cost=(0.0, 1.0)),
        oc.Participant(id="W", kind="variable", capacity=inst.omega_hi),
        oc.Participant(id="load", kind="consumer", demand=inst.d),
    ]


@functools.lru_cache(maxsize=4)
def copperplate_market(n: int) -> oc.MarketOutcome:
    scen = oc.make_uniform_grid(COPPER.mu, COPPER.sigma, n, producer="W")
    return oc.solve_market(oc.NetworkModel.copperplate(), copperplate_participants(), scen)


@pytest.fixture(scope="session")
def copper_outcome_400():
    return copperplate_market(400)


@pytest.fixture(scope="session")
def copper_outcome_64():
    return copperplate_market(64)


def copperplate_sets(outcome, delta_max=None, mode="risk_neutral", alpha=0.0):
    delta_max = delta_max if delta_max is not None else np.sqrt(3.0) * COPPER.sigma
    return oc.default_acceptability(
        copperplate_participants(), outcome, delta_max=delta_max,
        mode=mode, alpha=alpha, members=["P", "W"],
    )


def random_instance(seed: int):
    """Small random market, deterministically regenerated until feasible.

    1-3 buses on a path topology, 1-3 dispatchable sellers, 1-2 wind buyers
    (perfectly correlated uniform availability), consumers sized so both
    stages stay feasible, 24 scenarios.
    """
    for attempt in range(12):
        rng = np.random.default_rng(seed + 100_000 * attempt)
        n_bus = int(rng.integers(1, 4))
        lines = [
            oc.Line(b - 1, b, capacity=float(rng.uniform(30, 80)),
                    reactance=float(rng.uniform(0.05, 0.3)))
            for b in range(1, n_bus)
        ]
        net = (oc.NetworkModel.copperplate() if n_bus == 1
               else oc.NetworkModel.from_reactances(n_bus, lines, slack_bus=0))
        n_sell = int(rng.integers(1, 4))
        n_buy = int(rng.integers(1, 3))
        parts = []
        for j in range(n_sell):
            b_lin = float(rng.uniform(5, 40))
            parts.append(oc.Participant(
                id=f"g{j}", kind="dispatchable", bus=int(rng.integers(0, n_bus)),
                offered_cost=(float(rng.uniform(0, 0.05)), b_lin),
                true_cost=(0.0, float(rng.uniform(1, b_lin))),
                capacity=float(rng.uniform(40, 120)),
                ramp=float(rng.uniform(10, 50)) if rng.random() < 0.5 else oc.BIG,
            ))
        wind = {}
        for j in range(n_buy):
            mu = float(rng.uniform(8, 25))
            sig = float(rng.uniform(0.1, 0.45)) * mu / np.sqrt(3.0)
            parts.append(oc.Participant(id=f"r{j}", kind="variable",
                                        bus=int(rng.integers(0, n_bus)), capacity=2 * mu))
            wind[f"r{j}"] = (mu, sig)
        scen = oc.common_uniform_grid(wind, 24)
        total_mu = sum(m for m, _ in wind.values())
        demand = float(rng.uniform(0.7, 1.0)) * (total_mu + 30.0)
        for b in range(n_bus):
            parts.append(oc.Participant(id=f"load{b}", kind="consumer", bus=b,
                                        demand=demand / n_bus))
        try:
            out = oc.solve_market(net, parts, scen)
        except oc.InfeasibleMarketError:
            continue
        if out.infeasible_scenarios:
            continue
        delta_max = float(rng.uniform(1.0, 6.0))
        return net, parts, scen, out, delta_max
    raise RuntimeError(f"no feasible instance found for seed {seed}")


@functools.lru_cache(maxsize=None)
def random_cleared(seed: int):
    """Random instance plus its social clearing result (shared across tests)."""
    net, parts, scen, out, delta_max = random_instance(seed)
    members = [p.id for p in parts if p.kind in ("dispatchable", "variable")]
    sets = oc.default_acceptability(parts, out, delta_max=delta_max, members=members)
    cfg = oc.SmoothingConfig(maxiter=60, n_random_starts=2)
    res = oc.clear_social(parts, out, sets, cfg)
    return net, parts, scen, out, sets, res


def weighted_var(scen, values):
    w = scen.weights
    m = float(np.dot(w, values))
    return float(np.dot(w, (values - m) ** 2))
