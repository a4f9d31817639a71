import numpy as np
import pytest

import optclear as oc
from _oracles import qp_solve_enumerate
from conftest import COPPER, copperplate_market, copperplate_participants


class TestCertaintySurrogate:
    def test_constant_availability(self):
        scen = oc.ScenarioSet(weights=[0.5, 0.5], wind={"w": [50.0, 50.0]})
        p = oc.Participant(id="w", kind="variable", capacity=100.0)
        assert oc.certainty_surrogate(p, scen) == 50.0

    def test_grid_mean(self):
        scen = oc.make_uniform_grid(50.0, 5.774, 64, producer="w")
        p = oc.Participant(id="w", kind="variable", capacity=100.0)
        assert oc.certainty_surrogate(p, scen) == pytest.approx(50.0, abs=1e-10)

    def test_clipped_to_capacity(self):
        scen = oc.ScenarioSet(weights=[0.5, 0.5], wind={"w": [0.0, 100.0]})
        p = oc.Participant(id="w", kind="variable", capacity=100.0)
        assert oc.certainty_surrogate(p, scen) == 50.0
        p60 = oc.Participant(id="w", kind="variable", capacity=60.0)
        with pytest.raises(ValueError, match="exceeds installed capacity"):
            oc.solve_forward(oc.NetworkModel.copperplate(), [p60], scen)

    def test_rejects_non_variable(self):
        scen = oc.ScenarioSet(weights=[1.0])
        with pytest.raises(ValueError, match="variable"):
            oc.certainty_surrogate(oc.Participant(id="g", kind="dispatchable"), scen)


class TestForward:
    def test_single_marginal_generator_sets_price(self):
        scen = oc.ScenarioSet(weights=[1.0])
        parts = [
            oc.Participant(id="g", kind="dispatchable", offered_cost=(0.0, 1.0)),
            oc.Participant(id="load", kind="consumer", demand=5.0),
        ]
        fwd = oc.solve_forward(oc.NetworkModel.copperplate(), parts, scen)
        assert fwd.dispatch["g"] == pytest.approx(5.0, abs=1e-8)
        assert fwd.prices[0] == pytest.approx(1.0, abs=1e-8)
        assert fwd.kkt_residual < 1e-6

    def test_copperplate_forward(self):
        out = copperplate_market(64)
        assert out.forward.dispatch["B"] == pytest.approx(COPPER.d - COPPER.mu, abs=1e-7)
        assert out.forward.dispatch["P"] == pytest.approx(0.0, abs=1e-7)
        assert out.forward.dispatch["W"] == pytest.approx(COPPER.mu, abs=1e-7)
        assert out.forward.prices[0] == pytest.approx(1.0, abs=1e-7)

    def test_congested_two_bus_nodal_prices(self):
        # Cheap generator at bus 0, expensive at bus 1, line capped below the
        # demand at bus 1: the nodal prices split to the two marginal costs.
        net = oc.NetworkModel.from_reactances(2, [oc.Line(0, 1, 4.0, 0.1)], slack_bus=0)
        parts = [
            oc.Participant(id="cheap", kind="dispatchable", bus=0, offered_cost=(0.0, 1.0)),
            oc.Participant(id="dear", kind="dispatchable", bus=1, offered_cost=(0.0, 5.0)),
            oc.Participant(id="load", kind="consumer", bus=1, demand=10.0),
        ]
        scen = oc.ScenarioSet(weights=[1.0])
        fwd = oc.solve_forward(net, parts, scen)
        assert fwd.dispatch["cheap"] == pytest.approx(4.0, abs=1e-7)
        assert fwd.dispatch["dear"] == pytest.approx(6.0, abs=1e-7)
        assert fwd.prices[0] == pytest.approx(1.0, abs=1e-6)
        assert fwd.prices[1] == pytest.approx(5.0, abs=1e-6)

    def test_congested_two_bus_matches_enumeration_oracle(self):
        # Same instance solved independently: variables (x_cheap, x_dear, y0, y1).
        Q = np.zeros((4, 4))
        c = np.array([1.0, 5.0, 0.0, 0.0])
        A = np.array([
            [1.0, 0.0, -1.0, 0.0],   # bus 0 balance: x_cheap - y0 = 0
            [0.0, 1.0, 0.0, -1.0],   # bus 1 balance: x_dear - y1 = 10
            [0.0, 0.0, 1.0, 1.0],    # system balance
        ])
        b = np.array([0.0, 10.0, 0.0])
        G = np.array([
            [0.0, 0.0, 1.0, 0.0],    # flow = y0 <= 4
            [0.0, 0.0, -1.0, 0.0],   # -flow <= 4
            [-1.0, 0.0, 0.0, 0.0],
            [0.0, -1.0, 0.0, 0.0],
        ])
        h = np.array([4.0, 4.0, 0.0, 0.0])
        x, duals = qp_solve_enumerate(Q, c, A, b, G, h)
        np.testing.assert_allclose(x[:2], [4.0, 6.0], atol=1e-8)
        assert len(duals) == 1  # unique multipliers here
        np.testing.assert_allclose(-duals[0][:2], [1.0, 5.0], atol=1e-8)

    def test_infeasible_raises(self):
        net = oc.NetworkModel.from_reactances(2, [oc.Line(0, 1, 1.0, 0.1)], slack_bus=0)
        parts = [
            oc.Participant(id="g", kind="dispatchable", bus=0, offered_cost=(0.0, 1.0)),
            oc.Participant(id="load", kind="consumer", bus=1, demand=10.0),
        ]
        with pytest.raises(oc.InfeasibleMarketError):
            oc.solve_forward(net, parts, oc.ScenarioSet(weights=[1.0]))


class TestRealtime:
    def test_copperplate_shortfall_scenarios(self):
        out = copperplate_market(64)
        scen = out.scen
        omega = scen.wind["W"]
        ad = oc.analytic_dispatch(COPPER, omega)
        for k, r in enumerate(out.realtime):
            assert r.feasible
            assert r.dispatch["P"] == pytest.approx(ad.realtime["P"][k], abs=1e-7)
            assert r.dispatch["W"] == pytest.approx(ad.realtime["W"][k], abs=1e-7)
            assert r.prices[0] == pytest.approx(ad.realtime_price[k], abs=1e-6)
            assert r.kkt_residual < 1e-6

    def test_forecast_scenario_keeps_forward_point(self):
        scen = oc.ScenarioSet(weights=[1.0], wind={"W": [COPPER.mu]})
        net = oc.NetworkModel.copperplate()
        parts = copperplate_participants()
        out = oc.solve_market(net, parts, scen)
        for pid, X in out.forward.dispatch.items():
            assert out.realtime[0].dispatch[pid] == pytest.approx(X, abs=1e-6)

    def test_standalone_realtime_wrapper(self):
        out = copperplate_market(64)
        net = oc.NetworkModel.copperplate()
        parts = copperplate_participants()
        r = oc.solve_realtime(net, parts, out.forward, out.scen, 5)
        assert r.scenario == 5
        assert r.dispatch["W"] == pytest.approx(out.realtime[5].dispatch["W"], abs=1e-8)
        assert r.prices[0] == pytest.approx(out.realtime[5].prices[0], abs=1e-7)

    def test_stochastic_demand_per_scenario(self):
        # Forward stage sees the mean demand; real-time sees each realization.
        scen = oc.ScenarioSet(weights=[0.5, 0.5], wind={"w": [5.0, 5.0]},
                              demand={0: [2.0, 6.0]})
        parts = [
            oc.Participant(id="g", kind="dispatchable", offered_cost=(0.0, 1.0)),
            oc.Participant(id="w", kind="variable", capacity=6.0),
            oc.Participant(id="load", kind="consumer", demand=10.0),
        ]
        out = oc.solve_market(oc.NetworkModel.copperplate(), parts, scen)
        assert out.forward.dispatch["g"] + out.forward.dispatch["w"] == pytest.approx(14.0, abs=1e-7)
        assert out.realtime[0].dispatch["g"] == pytest.approx(7.0, abs=1e-7)
        assert out.realtime[1].dispatch["g"] == pytest.approx(11.0, abs=1e-7)
        # consumer pays for the mean forward and settles the deviation in real time
        pay = out.consumer_payments["load"].values
        assert pay[0] == pytest.approx(14.0 * 1.0 + 1.0 * (14.0 - 12.0), abs=1e-6)
        assert pay[1] == pytest.approx(14.0 * 1.0 + 1.0 * (14.0 - 16.0), abs=1e-6)

    def test_infeasible_scenario_flagged_and_run_continues(self):
        # Wind collapse beyond what the ramp-limited generator can cover.
        scen = oc.ScenarioSet(weights=[0.5, 0.5], wind={"w": [10.0, 0.0]})
        parts = [
            oc.Participant(id="g", kind="dispatchable", offered_cost=(0.0, 1.0), ramp=2.0),
            oc.Participant(id="w", kind="variable", capacity=10.0),
            oc.Participant(id="load", kind="consumer", demand=15.0),
        ]
        out = oc.solve_market(oc.NetworkModel.copperplate(), parts, scen)
        assert out.infeasible_scenarios == (1,)
        assert out.realtime[0].feasible
        with pytest.raises(oc.InfeasibleMarketError, match="scenarios"):
            oc.compute_profits(oc.NetworkModel.copperplate(), parts, out.forward, out.realtime, scen)


class TestProfits:
    def test_copperplate_profit_formulas(self):
        out = copperplate_market(400)
        omega = out.scen.wind["W"]
        pi_b, pi_p, pi_w = oc.analytic_profits(COPPER, omega)
        np.testing.assert_allclose(out.profits["B"].values, pi_b, atol=1e-7)
        np.testing.assert_allclose(out.profits["P"].values, pi_p, atol=1e-7)
        np.testing.assert_allclose(out.profits["W"].values, pi_w, atol=1e-7)

    def test_base_load_profit_constant(self):
        out = copperplate_market(64)
        expected = (COPPER.d - COPPER.mu) * (1.0 - COPPER.epsilon)
        np.testing.assert_allclose(out.profits["B"].values, expected, atol=1e-7)

    def test_extreme_scenario_values(self):
        # Worst wind scenario: W pays back the whole shortfall at the peak price.
        lo = COPPER.omega_lo
        _, pi_p, pi_w = oc.analytic_profits(COPPER, np.array([lo]))
        assert pi_w[0] == pytest.approx(-10.0, abs=1e-9)
        assert pi_p[0] == pytest.approx(18.26794919243112, abs=1e-9)

    def test_consumer_stream_zero_without_uncertainty(self):
        out = copperplate_market(64)
        pay = out.consumer_payments["load"].values
        np.testing.assert_allclose(pay, pay[0])  # deterministic demand: flat stream
        assert pay[0] == pytest.approx(out.forward.prices[0] * COPPER.d, abs=1e-6)

    def test_zero_uncertainty_profit_identity(self):
        scen = oc.ScenarioSet(weights=[1.0], wind={"W": [COPPER.mu]})
        out = oc.solve_market(oc.NetworkModel.copperplate(), copperplate_participants(), scen)
        for pid in ("B", "P", "W"):
            X = out.forward.dispatch[pid]
            p = next(q for q in copperplate_participants() if q.id == pid)
            fwd_profit = out.forward.prices[0] * X - p.true(X)
            assert out.profits[pid].values[0] == pytest.approx(fwd_profit, abs=1e-6)


class TestSolverQuality:
    def test_kkt_residuals_small(self):
        out = copperplate_market(400)
        assert out.forward.kkt_residual < 1e-6
        assert max(r.kkt_residual for r in out.realtime) < 1e-6

    def test_dispatches_injection_feasible(self):
        net = oc.NetworkModel.from_reactances(
            3,
            [oc.Line(0, 1, 6.0, 0.1), oc.Line(1, 2, 8.0, 0.2), oc.Line(0, 2, 6.0, 0.15)],
            slack_bus=0,
        )
        parts = [
            oc.Participant(id="g0", kind="dispatchable", bus=0, offered_cost=(0.01, 1.0)),
            oc.Participant(id="g2", kind="dispatchable", bus=2, offered_cost=(0.02, 3.0)),
            oc.Participant(id="w", kind="variable", bus=1, capacity=12.0),
            oc.Participant(id="load", kind="consumer", bus=1, demand=14.0),
        ]
        scen = oc.make_uniform_grid(6.0, 1.5, 16, producer="w")
        out = oc.solve_market(net, parts, scen)
        demand = np.zeros(3)
        demand[1] = 14.0
        for r in out.realtime:
            inj = -demand.copy()
            for p in parts:
                if p.kind != "consumer":
                    inj[p.bus] += r.dispatch[p.id]
            assert oc.injection_feasible(inj, net, tol=1e-5)

    def test_quadratic_duality_gap(self):
        # Strictly convex instance cross-checked against the enumeration oracle.
        net = oc.NetworkModel.copperplate()
        parts = [
            oc.Participant(id="a", kind="dispatchable", offered_cost=(0.05, 2.0), capacity=40.0),
            oc.Participant(id="b", kind="dispatchable", offered_cost=(0.02, 3.0), capacity=40.0),
            oc.Participant(id="load", kind="consumer", demand=30.0),
        ]
        scen = oc.ScenarioSet(weights=[1.0])
        fwd = oc.solve_forward(net, parts, scen)
        Q = np.diag([0.1, 0.04, 0.0])
        c = np.array([2.0, 3.0, 0.0])
        A = np.array([[1.0, 1.0, -1.0], [0.0, 0.0, 1.0]])
        b = np.array([30.0, 0.0])
        G = np.array([
            [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0],
            [1.0, 0.0, 0.0], [0.0, 1.0, 0.0],
        ])
        h = np.array([0.0, 0.0, 40.0, 40.0])
        x, duals = qp_solve_enumerate(Q, c, A, b, G, h)
        assert fwd.dispatch["a"] == pytest.approx(x[0], abs=1e-6)
        assert fwd.dispatch["b"] == pytest.approx(x[1], abs=1e-6)
        assert fwd.prices[0] == pytest.approx(-duals[0][0], abs=1e-6)
        # Strong duality: primal objective equals the Lagrangian value.
        primal = fwd.objective
        lagr = 0.5 * x @ Q @ x + c @ x
        assert abs(primal - lagr) <= 1e-6 * max(1.0, abs(primal))


class TestThreads:
    def test_parallel_solve_matches_sequential(self):
        scen = oc.make_uniform_grid(COPPER.mu, COPPER.sigma, 24, producer="W")
        net = oc.NetworkModel.copperplate()
        parts = copperplate_participants()
        seq = oc.solve_market(net, parts, scen, threads=1)
        par = oc.solve_market(net, parts, scen, threads=3)
        for pid in seq.profits:
            np.testing.assert_allclose(par.profits[pid].values, seq.profits[pid].values,
                                       atol=1e-9)
        np.testing.assert_allclose(par.rt_prices(), seq.rt_prices(), atol=1e-9)


class TestMultiPeriod:
    def test_identity_for_single_period(self):
        scen = oc.ScenarioSet(weights=[0.5, 0.5])
        price = scen.sample([2.0, 4.0])
        profit = scen.sample([1.0, -1.0])
        p_avg, p_tot = oc.multi_period_aggregate([price], [profit])
        np.testing.assert_allclose(p_avg.values, price.values)
        np.testing.assert_allclose(p_tot.values, profit.values)

    def test_average_and_total(self):
        scen = oc.ScenarioSet(weights=[0.5, 0.5])
        prices = [scen.sample([2.0, 2.0]), scen.sample([4.0, 4.0])]
        profits = [scen.sample([1.0, 1.0])] * 3
        p_avg, _ = oc.multi_period_aggregate(prices, [scen.sample([0.0, 0.0])] * 2)
        np.testing.assert_allclose(p_avg.values, 3.0)
        _, p_tot = oc.multi_period_aggregate([prices[0]] * 3, profits)
        np.testing.assert_allclose(p_tot.values, 3.0)

    def test_mismatched_periods_rejected(self):
        scen = oc.ScenarioSet(weights=[1.0])
        with pytest.raises(ValueError, match="mismatched"):
            oc.multi_period_aggregate([scen.sample([1.0])] * 2, [scen.sample([1.0])])
        with pytest.raises(ValueError, match="at least one"):
            oc.multi_period_aggregate([], [])
