"""Command-line front end: config ingestion, experiment orchestration, file emission.

Config files are JSON with four sections (see the bundled files under
``optclear/data/`` and the README for the full schema):

* ``network``       bus count, optional slack bus, lines with either a
                    reactance or an explicit shift-factor row plus a
                    capacity; bus numbers are 1-based in files.
* ``participants``  list of participant records (id, kind, bus, costs as
                    ``[a, b]`` for a*x^2 + b*x, capacity_mw, ramp_mw,
                    demand_mw).
* ``scenarios``     either a uniform grid per variable producer
                    (mean_mw plus sigma_mw or half_width_mw, count n,
                    correlated flag) or explicit per-scenario values.
* ``clearing``      mode, member ids, volume cap, acceptability per member,
                    smoothing overrides.

``network`` and ``participants`` may also be path strings pointing at JSON
files with the same content. All CSV output is RFC-4180 with a header row,
'.' decimal separator and UTF-8; floats are written in shortest
round-trip form so re-ingesting a table reproduces the in-memory values
exactly. Outputs are byte-identical for identical config and seed.

Exit codes: 0 success, 2 infeasible model, 3 solver non-convergence,
4 config error.
"""

from __future__ import annotations

import csv
import json
import math
import os
import sys
from importlib import resources
from pathlib import Path

import click
import numpy as np

from . import copperplate as cp
from .clearing import (
    SmoothingConfig,
    aggregate_report,
    clear_selfish,
    clear_so,
    clear_social,
    volatility_diagnostic,
)
from .market import InfeasibleMarketError, Participant, solve_market
from .network import Line, NetworkModel
from .options import AcceptabilitySet, FTRPosition, TradeBounds, ftr_payoff
from .scenario import ScenarioSet, common_uniform_grid, explicit_scenarios

EXIT_INFEASIBLE = 2
EXIT_NO_CONVERGENCE = 3
EXIT_CONFIG = 4


class ConfigError(Exception):
    pass


# ---------------------------------------------------------------------------
# config loading
# ---------------------------------------------------------------------------


def bundled_config(name: str) -> dict:
    """Load one of the packaged reference configs (copperplate, ieee14, ieee14_ftr)."""
    with resources.files("optclear.data").joinpath(f"{name}.json").open("r", encoding="utf-8") as fh:
        return json.load(fh)


def _load_section(cfg: dict, key: str, base: Path):
    section = cfg.get(key)
    if section is None:
        raise ConfigError(f"config is missing the {key!r} section")
    if isinstance(section, str):
        path = (base / section).resolve()
        if not path.exists():
            raise ConfigError(f"{key} file not found: {path}")
        with open(path, "r", encoding="utf-8") as fh:
            loaded = json.load(fh)
        if isinstance(loaded, dict) and key in loaded:
            return loaded[key]
        return loaded
    return section


def load_config(path: str | Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    cfg["_base"] = path.parent
    return cfg


def build_network(cfg: dict) -> NetworkModel:
    section = _load_section(cfg, "network", cfg.get("_base", Path(".")))
    buses = int(section.get("buses", 0))
    if buses < 1:
        raise ConfigError("network needs a positive bus count")
    lines = []
    explicit_rows = []
    for rec in section.get("lines", []):
        try:
            f, t = int(rec["from"]) - 1, int(rec["to"]) - 1
            cap = float(rec["capacity_mw"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad line record {rec!r}: {exc}") from exc
        lines.append(Line(f, t, cap, rec.get("reactance")))
        explicit_rows.append(rec.get("shift_factors"))
    if not lines:
        if buses != 1:
            raise ConfigError("multi-bus networks need lines")
        return NetworkModel.copperplate()
    if all(r is not None for r in explicit_rows):
        H = np.array(explicit_rows, dtype=float)
        return NetworkModel.from_shift_factors(buses, lines, H)
    if any(r is not None for r in explicit_rows):
        raise ConfigError("either give shift_factors for every line or for none")
    slack = int(section.get("slack_bus", 1)) - 1
    try:
        return NetworkModel.from_reactances(buses, lines, slack_bus=slack)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def build_participants(cfg: dict) -> list[Participant]:
    section = _load_section(cfg, "participants", cfg.get("_base", Path(".")))
    parts = []
    for rec in section:
        try:
            kwargs = dict(
                id=str(rec["id"]),
                kind=str(rec["kind"]),
                bus=int(rec.get("bus", 1)) - 1,
            )
            if "offered_cost" in rec:
                a, b = rec["offered_cost"]
                kwargs["offered_cost"] = (float(a), float(b))
            if rec.get("true_cost") is not None:
                a, b = rec["true_cost"]
                kwargs["true_cost"] = (float(a), float(b))
            if rec.get("capacity_mw") is not None:
                kwargs["capacity"] = float(rec["capacity_mw"])
            ramp = rec.get("ramp_mw")
            if ramp is not None:
                kwargs["ramp"] = float(ramp)
            if rec.get("demand_mw") is not None:
                kwargs["demand"] = float(rec["demand_mw"])
            parts.append(Participant(**kwargs))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad participant record {rec!r}: {exc}") from exc
    if not parts:
        raise ConfigError("no participants defined")
    return parts


def build_scenarios(cfg: dict, n_override: int | None = None) -> ScenarioSet:
    section = cfg.get("scenarios")
    if section is None:
        raise ConfigError("config is missing the 'scenarios' section")
    kind = section.get("type", "uniform_grid")
    if kind == "explicit":
        wind = {k: [float(x) for x in v] for k, v in section.get("wind", {}).items()}
        weights = section.get("weights")
        demand = {int(b) - 1: [float(x) for x in v] for b, v in section.get("demand", {}).items()}
        return explicit_scenarios(wind, weights, demand)
    if kind != "uniform_grid":
        raise ConfigError(f"unknown scenario type {kind!r}")
    if not section.get("correlated", True):
        raise ConfigError("independent winds: supply an explicit scenario list instead")
    n = int(n_override or section.get("n", 200))
    params = {}
    for pid, rec in section.get("wind", {}).items():
        mean = float(rec["mean_mw"])
        if "sigma_mw" in rec:
            sigma = float(rec["sigma_mw"])
        elif "half_width_mw" in rec:
            sigma = float(rec["half_width_mw"]) / math.sqrt(3.0)
        else:
            raise ConfigError(f"wind spec for {pid!r} needs sigma_mw or half_width_mw")
        params[pid] = (mean, sigma)
    if not params:
        raise ConfigError("uniform_grid scenarios need at least one wind entry")
    try:
        return common_uniform_grid(params, n)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def build_clearing_inputs(cfg, parts, outcome, beta_override=None, seed_override=None):
    section = cfg.get("clearing")
    if section is None:
        raise ConfigError("config is missing the 'clearing' section")
    members = section.get("members")
    if not members:
        members = [p.id for p in parts if p.kind in ("dispatchable", "variable")]
    delta_max = section.get("delta_max_mw")
    if delta_max is None:
        raise ConfigError("clearing section needs delta_max_mw")
    cap = section.get("price_cap")
    cap = float(cap) if cap is not None else float(np.max(outcome.rt_prices()))
    acc = section.get("acceptability", {})
    by_id = {p.id: p for p in parts}
    sets = {}
    for pid in members:
        if pid not in by_id:
            raise ConfigError(f"clearing member {pid!r} is not a participant")
        p = by_id[pid]
        spec = acc.get(pid, {})
        mode = spec.get("mode", "risk_neutral")
        alpha = float(spec.get("alpha", 0.0))
        bounds = TradeBounds(
            q_max=float(spec.get("q_max", cap)),
            K_max=float(spec.get("k_max", cap)),
            delta_max=float(spec.get("delta_max_mw", delta_max)),
        )
        try:
            sets[pid] = AcceptabilitySet(
                bounds=bounds,
                mode=mode,
                baseline=outcome.profits[pid],
                price=outcome.price_sample(p),
                alpha=alpha,
            )
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"bad acceptability spec for {pid!r}: {exc}") from exc
    smoothing = SmoothingConfig(
        beta=beta_override if beta_override is not None else section.get("beta"),
        ms_tol=section.get("ms_tol"),
        seed=int(seed_override if seed_override is not None else section.get("seed", 0)),
    )
    return sets, smoothing


# ---------------------------------------------------------------------------
# output writers
# ---------------------------------------------------------------------------


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))  # shortest round-trip form
    return str(x)


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_json(path: Path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_csv_column(path: Path, column: str) -> np.ndarray:
    """Re-ingest one numeric column from a CSV written by this tool."""
    with open(path, newline="", encoding="utf-8") as fh:
        rd = csv.DictReader(fh)
        vals = [float(row[column]) for row in rd if row[column] != ""]
    return np.array(vals)


def _write_dispatch_outputs(out_dir: Path, parts, outcome) -> None:
    producers = [p for p in parts if p.kind != "consumer"]
    write_json(
        out_dir / "forward.json",
        {
            "dispatch_mw": {k: outcome.forward.dispatch[k] for k in sorted(outcome.forward.dispatch)},
            "prices": [float(v) for v in outcome.forward.prices],
            "objective": outcome.forward.objective,
            "kkt_residual": outcome.forward.kkt_residual,
        },
    )
    rt_rows = []
    for r in outcome.realtime:
        for p in producers:
            rt_rows.append([r.scenario, p.id, r.dispatch[p.id], r.prices[p.bus], p.bus + 1])
    write_csv(out_dir / "realtime.csv", ["scenario", "participant", "dispatch_mw", "price", "bus"], rt_rows)
    prof_rows = []
    for pid in sorted(outcome.profits):
        vals = outcome.profits[pid].values
        for k in range(len(vals)):
            prof_rows.append([k, pid, vals[k]])
    write_csv(out_dir / "profits.csv", ["scenario", "participant", "profit"], prof_rows)


def _write_clearing_outputs(out_dir: Path, parts, outcome, result, suffix="") -> None:
    write_json(
        out_dir / f"trades{suffix}.json",
        {
            "mode": result.mode,
            "trades": {
                pid: {"q": t.q, "K": t.K, "delta_mw": t.delta, "role": result.roles[pid]}
                for pid, t in result.trades.items()
            },
            "objective": result.objective,
            "aggregate_variance_delta": result.aggregate_delta,
            "expected_ms": result.expected_ms,
            "diagnostics": {
                k: result.diagnostics[k]
                for k in ("chosen_source", "iterations", "ms_max", "ms_flagged_scenarios",
                          "zero_trade_fallback", "volatility_guarantee", "beta", "ms_tol")
            },
        },
    )
    alloc_rows = []
    for gid in sorted(result.allocation.delta):
        series = result.allocation.delta[gid]
        for k in range(len(series)):
            alloc_rows.append([k, gid, series[k]])
    write_csv(out_dir / f"allocation{suffix}.csv", ["scenario", "seller", "exercised_mw"], alloc_rows)
    ms_rows = [[k, v] for k, v in enumerate(result.ms.values)]
    ms_rows.append(["expected", result.expected_ms])
    write_csv(out_dir / f"ms{suffix}.csv", ["scenario", "ms"], ms_rows)
    _write_variance_report(out_dir / f"variance_report{suffix}.csv", parts, outcome, result)


def _write_variance_report(path: Path, parts, outcome, result, extra_profit=None) -> None:
    by_id = {p.id: p for p in parts}
    guaranteed = result.diagnostics.get("volatility_guarantee", False)
    rows = []
    for rec in aggregate_report(result):
        pid = rec["participant"]
        if pid == "TOTAL":
            rows.append([pid, "", "", "", "", rec["var_before"], rec["var_after"], rec["var_delta"], "", guaranteed])
            continue
        alloc = result.allocation.delta.get(pid)
        cov, _ = volatility_diagnostic(by_id[pid], outcome, result.trades[pid], alloc)
        var_after = rec["var_after"]
        delta = rec["var_delta"]
        if extra_profit is not None and pid in extra_profit:
            w = outcome.scen.weights
            v = result.profits_after[pid].values + extra_profit[pid]
            var_after = float(np.dot(w, (v - np.dot(w, v)) ** 2))
            delta = var_after - rec["var_before"]
        rows.append([pid, rec["role"], rec["q"], rec["K"], rec["delta"],
                     rec["var_before"], var_after, delta, cov, guaranteed])
    write_csv(
        path,
        ["participant", "role", "q", "K", "delta_mw", "var_before", "var_after",
         "var_delta", "cov_diagnostic", "guaranteed"],
        rows,
    )


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def _threads() -> int:
    return int(os.environ.get("OPTCLEAR_THREADS", "1") or 1)


def _run_market(cfg, n_override=None):
    net = build_network(cfg)
    parts = build_participants(cfg)
    scen = build_scenarios(cfg, n_override)
    outcome = solve_market(net, parts, scen, threads=_threads())
    if outcome.infeasible_scenarios:
        raise InfeasibleMarketError(
            f"real-time dispatch infeasible in scenarios {list(outcome.infeasible_scenarios)}"
        )
    return net, parts, scen, outcome


_CLEARERS = {"social": clear_social, "so": clear_so, "selfish": clear_selfish}


@click.group()
def main():
    """Two-stage electricity market simulator with centralized option clearing."""


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(), help="Run configuration (JSON).")
@click.option("--scenarios", "n_scen", type=int, default=None, help="Override the scenario count.")
@click.option("--out", "out_dir", type=click.Path(), default="out", show_default=True)
def dispatch(config_path, n_scen, out_dir):
    """Run both market stages and write forward.json, realtime.csv, profits.csv."""
    cfg = load_config(config_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    net, parts, scen, outcome = _run_market(cfg, n_scen)
    _write_dispatch_outputs(out, parts, outcome)
    click.echo(f"dispatch: {scen.n} scenarios, forward objective {outcome.forward.objective:.6g}")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--mode", type=click.Choice(["social", "so", "selfish"]), default=None,
              help="Clearing mode (defaults to the config's).")
@click.option("--scenarios", "n_scen", type=int, default=None)
@click.option("--seed", type=int, default=None, help="Multistart seed override.")
@click.option("--beta", type=float, default=None, help="Smoothing sharpness override.")
@click.option("--out", "out_dir", type=click.Path(), default="out", show_default=True)
def clear(config_path, mode, n_scen, seed, beta, out_dir):
    """Clear the options market and write trades, allocation, surplus and variance reports."""
    cfg = load_config(config_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    net, parts, scen, outcome = _run_market(cfg, n_scen)
    _write_dispatch_outputs(out, parts, outcome)
    sets, smoothing = build_clearing_inputs(cfg, parts, outcome, beta_override=beta, seed_override=seed)
    mode = mode or cfg.get("clearing", {}).get("mode", "social")
    result = _CLEARERS[mode](parts, outcome, sets, smoothing)
    _write_clearing_outputs(out, parts, outcome, result)
    click.echo(
        f"clear[{mode}]: aggregate variance delta {result.aggregate_delta:.6g}, "
        f"E[MS] {result.expected_ms:.3g}, max |MS| {result.diagnostics['ms_max']:.3g}"
    )
    if result.diagnostics["ms_flagged_scenarios"]:
        click.echo(
            f"  note: |MS| above tolerance in {len(result.diagnostics['ms_flagged_scenarios'])} scenarios",
            err=True,
        )


@main.command()
@click.option("--mu", type=float, default=10.0, show_default=True)
@click.option("--sigma", type=float, default=1.0, show_default=True)
@click.option("--rho", type=float, default=math.sqrt(3) / 20, show_default="sqrt(3)/20")
@click.option("--epsilon", type=float, default=0.5, show_default=True)
@click.option("--demand", type=float, default=20.0, show_default=True)
@click.option("--alpha", "alphas", type=float, multiple=True, default=(0.0, 0.5, 0.9),
              show_default=True, help="CVaR levels for the acceptability boundary grids.")
@click.option("--scenarios", "n_scen", type=int, default=400, show_default=True)
@click.option("--out", "out_dir", type=click.Path(), default="out", show_default=True)
def copperplate(mu, sigma, rho, epsilon, demand, alphas, n_scen, out_dir):
    """Closed-form single-bus report plus profit-profile and boundary plot data."""
    try:
        inst = cp.CopperplateInstance(mu=mu, sigma=sigma, rho=rho, epsilon=epsilon, d=demand)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cap = math.sqrt(3) * inst.sigma
    q_star, k_star, delta_range, agg = cp.central_optimum(inst, cap)
    region = cp.loss_region(inst)
    write_json(
        out / "copperplate_report.json",
        {
            "instance": {"mu": inst.mu, "sigma": inst.sigma, "rho": inst.rho,
                         "epsilon": inst.epsilon, "demand": inst.d},
            "forward_dispatch": {"B": inst.d - inst.mu, "P": 0.0, "W": inst.mu},
            "forward_price": 1.0,
            "peak_price": inst.peak_price,
            "loss_region": list(region) if region else None,
            "central_optimum": {
                "q": q_star, "K": k_star, "delta": cap,
                "delta_range": list(delta_range), "aggregate_variance_delta": agg,
            },
        },
    )
    scen_set = cp._profiles(inst, n_scen)[0]
    omega = scen_set.wind["W"]
    pi_b, pi_p, pi_w = cp.analytic_profits(inst, omega)
    price = np.where(omega <= inst.mu, inst.peak_price, 0.0)
    payoff = np.maximum(price - k_star, 0.0)
    with_w = pi_w - q_star * cap + payoff * cap
    with_p = pi_p + q_star * cap - payoff * cap
    rows = [
        [omega[k], pi_b[k], pi_p[k], pi_w[k], with_w[k], with_p[k]]
        for k in range(len(omega))
    ]
    write_csv(out / "profit_profiles.csv",
              ["omega", "profit_base", "profit_peaker", "profit_wind",
               "profit_wind_with_option", "profit_peaker_with_option"], rows)
    q_grid = np.linspace(0.0, inst.peak_price / 2.0, 21)
    d_grid = np.linspace(0.0, cap, 13)
    for role, fname in (("seller", "acceptability_boundary_seller.csv"), ("buyer", "acceptability_boundary_buyer.csv")):
        rows = []
        for alpha in alphas:
            surface = cp.acceptability_boundary(inst, alpha, role, d_grid, q_grid, n_scenarios=n_scen)
            for i, q in enumerate(q_grid):
                for j, dl in enumerate(d_grid):
                    rows.append([alpha, q, dl, surface[i, j]])
        write_csv(out / fname, ["alpha", "q", "delta_mw", "k_boundary"], rows)
    lo, hi = (region if region else (float("nan"), float("nan")))
    click.echo(f"copperplate: loss region [{lo:.6g}, {hi:.6g}), central delta {agg:.6g}")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--mode", type=click.Choice(["social", "so", "selfish"]), default=None)
@click.option("--scenarios", "n_scen", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out", "out_dir", type=click.Path(), default="out", show_default=True)
def ftr(config_path, mode, n_scen, seed, out_dir):
    """Clear the options market and recompute the variance report with FTR payoffs."""
    cfg = load_config(config_path)
    positions = cfg.get("ftr")
    if not positions:
        raise ConfigError("config has no 'ftr' positions")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    net, parts, scen, outcome = _run_market(cfg, n_scen)
    _write_dispatch_outputs(out, parts, outcome)
    sets, smoothing = build_clearing_inputs(cfg, parts, outcome, seed_override=seed)
    mode = mode or cfg.get("clearing", {}).get("mode", "social")
    result = _CLEARERS[mode](parts, outcome, sets, smoothing)
    _write_clearing_outputs(out, parts, outcome, result)
    prices = outcome.rt_prices()
    extra = {}
    for rec in positions:
        try:
            pos = FTRPosition(int(rec["from_bus"]) - 1, int(rec["to_bus"]) - 1, float(rec["volume_mw"]))
            pid = str(rec["participant"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad ftr record {rec!r}: {exc}") from exc
        if pid not in result.trades:
            raise ConfigError(f"ftr participant {pid!r} is not in the options market")
        extra[pid] = extra.get(pid, 0.0) + ftr_payoff(pos, prices)
    _write_variance_report(out / "variance_report_ftr.csv", parts, outcome, result, extra_profit=extra)
    for pid, pay in extra.items():
        w = scen.weights
        v = result.profits_after[pid].values
        before = float(np.dot(w, (v - np.dot(w, v)) ** 2))
        va = v + pay
        after = float(np.dot(w, (va - np.dot(w, va)) ** 2))
        click.echo(f"ftr[{pid}]: variance {before:.6g} -> {after:.6g} with the position")


@main.command()
def selftest():
    """Quick end-to-end check against the built-in closed forms."""
    failures = []

    def check(name, ok):
        click.echo(f"{'PASS' if ok else 'FAIL'}  {name}")
        if not ok:
            failures.append(name)

    cfg = bundled_config("copperplate")
    cfg["_base"] = Path(".")
    net, parts, scen, outcome = _run_market(cfg, 200)
    inst = cp.CopperplateInstance()
    omega = scen.wind["W"]
    pi_b, pi_p, pi_w = cp.analytic_profits(inst, omega)
    err = max(
        float(np.max(np.abs(outcome.profits["B"].values - pi_b))),
        float(np.max(np.abs(outcome.profits["P"].values - pi_p))),
        float(np.max(np.abs(outcome.profits["W"].values - pi_w))),
    )
    check(f"two-stage market matches closed forms (max err {err:.2e})", err < 1e-6)
    sets, smoothing = build_clearing_inputs(cfg, parts, outcome)
    res = clear_social(parts, outcome, sets, smoothing)
    _, _, _, agg = cp.central_optimum(inst, math.sqrt(3) * inst.sigma)
    rel = abs(res.aggregate_delta - agg) / abs(agg)
    check(f"social clearing reproduces the optimal variance delta (rel err {rel:.2e})", rel < 0.01)
    t = res.trades["W"]
    check("cleared trade sits on the equilibrium manifold",
          abs(2 * t.q + t.K - inst.peak_price) < 1e-3)
    selfish = clear_selfish(parts, outcome, sets, smoothing)
    tol = 1e-4 * inst.peak_price * math.sqrt(3) * inst.sigma
    check(f"selfish intermediary earns nothing on average (|E[MS]| {abs(selfish.expected_ms):.2e})",
          abs(selfish.expected_ms) <= tol)
    if failures:
        raise click.ClickException(f"{len(failures)} selftest checks failed")
    click.echo("selftest: all checks passed")


def run():
    try:
        main(standalone_mode=False)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except InfeasibleMarketError as exc:
        click.echo(f"infeasible: {exc}", err=True)
        sys.exit(EXIT_INFEASIBLE)
    except click.UsageError as exc:
        exc.show()
        sys.exit(EXIT_CONFIG)
    except click.exceptions.Exit as exc:
        sys.exit(exc.exit_code)
    except click.ClickException as exc:
        exc.show()
        sys.exit(1)
    except click.Abort:
        sys.exit(1)
    except RuntimeError as exc:
        click.echo(f"solver failure: {exc}", err=True)
        sys.exit(EXIT_NO_CONVERGENCE)


if __name__ == "__main__":
    run()
