"""Command-line front end.

Each subcommand reads a scenario, runs one pipeline stage and writes its
artifacts (CSV, JSON and PNG figures) to the output directory.  Exit codes:
0 success, 1 invalid input, 2 numerical failure, 3 oracle failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import plotting
from .aggregation import (
    aggregated_to_dict,
    ideal_aggregate,
    intermediate_partition,
    is_strongly_lumpable,
    jamming_efficiency_aggregated,
    simplified_partition,
    simplified_rate_matrix,
    simplified_rate_table,
)
from .chains import chain_to_dict
from .config import Scenario, load_scenario
from .detector import (
    SUPERVISED,
    equal_error_rate,
    roc_curve,
    semi_supervised_spec,
    statistic_moments,
    supervised_spec,
)
from .errors import ConfigError, NumericalError
from .ldp import JammerFamily, gaussian_min_mdr, jamming_efficiency, rate_function, sweep_tau
from .oracles import mc_oracles
from .simulation import (
    MODELS,
    ParetoPoint,
    aggregated_experiment,
    empirical_roc,
    hypothesis_chains,
    pareto_frontier,
    partition_for,
)

log = logging.getLogger("rrjdetect")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_ORACLE = 0, 1, 2, 3
SINGULAR_MESSAGE = "singular detection: arbitrarily small error achievable"


# ---------------------------------------------------------------------------
# Output helpers


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return obj


def write_json(path: Path, doc) -> Path:
    path.write_text(json.dumps(_clean(doc), indent=2, sort_keys=True) + "\n")
    return path


def write_csv(path: Path, header: Sequence[str], rows) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _figure(sc: Scenario, fn, *args):
    if sc.figures:
        fn(*args)


# ---------------------------------------------------------------------------
# Subcommands


def cmd_build(sc: Scenario, out: Path, args) -> int:
    """Export the compliant and jammer chains."""
    c0, c1 = hypothesis_chains(sc.experiment_config())
    meta = {"scenario": sc.source}
    write_json(out / "chain_compliant.json", chain_to_dict(c0, meta))
    write_json(out / f"chain_{c1.kind}.json", chain_to_dict(c1, meta))
    eff = jamming_efficiency(c0.pi, c1.pi, c0.space) if c0.space.m >= 2 else None
    summary = {
        "scenario": sc.source, "m": c0.space.m, "states": len(c0.space), "u": c0.u,
        "jammer": {"kind": c1.kind, "p_R": c1.jammer[0], "p_J": c1.jammer[1]},
        "efficiency": eff.as_dict() if eff else None,
        "rate_function": rate_function(c0, c1),
    }
    write_json(out / "build_summary.json", summary)
    labels = [c0.space.label(i) for i in range(len(c0.space))]
    _figure(sc, plotting.plot_stationary, labels, c0.pi, c1.pi, out / "stationary.png")
    return EXIT_OK


def _detect_spec(c0, c1, detector, model):
    part = partition_for(model, c0.space)
    h0, h1 = c0, c1
    if part is not None:
        a0, a1 = ideal_aggregate(c0, part), ideal_aggregate(c1, part)
        h0, h1 = (a0.P, a0.pi), (a1.P, a1.pi)
    return supervised_spec(h0, h1) if detector == SUPERVISED else semi_supervised_spec(h0, h1)


def cmd_detect(sc: Scenario, out: Path, args) -> int:
    """Analytic detector: Gaussian moments, bounds, EER and ROC."""
    c0, c1 = hypothesis_chains(sc.experiment_config())
    spec = _detect_spec(c0, c1, sc.experiment.detector, sc.experiment.model)
    W = sc.experiment.W
    mom = statistic_moments(spec, W)
    summary = {
        "scenario": sc.source, "detector": spec.mode, "model": sc.experiment.model, "W": W,
        "jammer": {"kind": c1.kind, "p_R": c1.jammer[0], "p_J": c1.jammer[1]},
        "singular": mom.singular, "moments": mom.as_dict(),
    }
    if mom.singular:
        summary["message"] = SINGULAR_MESSAGE
        summary["eer"] = 0.0
        print(SINGULAR_MESSAGE)
    else:
        eer, xi = equal_error_rate(mom)
        summary.update(eer=eer, xi_star=xi, min_mdr_far_0_05=gaussian_min_mdr(mom, 0.05),
                       eer_full_covariance=equal_error_rate(mom.with_full_covariance())[0])
        if mom.var0_ub is not None:
            summary["eer_bound"] = equal_error_rate(mom, use_bound=True)[0]
        else:
            summary["bounds_note"] = "variance bounds unavailable: repeated eigenvalues"
    if c0.space.m >= 2:
        summary["efficiency"] = jamming_efficiency(c0.pi, c1.pi, c0.space).as_dict()
    summary["rate_function"] = rate_function(c0, c1)
    pts = roc_curve(mom, 201)
    write_csv(out / "roc.csv", ("threshold", "FAR", "MDR"), pts)
    write_json(out / "summary.json", summary)
    _figure(sc, plotting.plot_roc, {"Gaussian": ([p[1] for p in pts], [p[2] for p in pts])},
            out / "roc.png", f"analytic ROC ({spec.mode})")
    return EXIT_OK


def cmd_simulate(sc: Scenario, out: Path, args) -> int:
    """Monte Carlo ROC and EER with the analytic cross-check."""
    cfg = sc.experiment_config(threads=args.threads)
    res = empirical_roc(cfg)
    roc, ana = res["roc"], res["analytic"]
    gap = abs(roc.eer - ana["eer"])
    summary = {
        "scenario": sc.source, "detector": cfg.detector, "model": cfg.model, "W": cfg.W, "n": cfg.n,
        "seed": cfg.seed, "jammer": {"naive": cfg.naive, "p_R": cfg.jammer[0], "p_J": cfg.jammer[1]},
        "empirical": {"eer": roc.eer, "eer_stderr": roc.eer_stderr, "xi_star": roc.xi_star},
        "analytic": ana, "eer_gap": gap, "eer_gap_within_0_05": gap <= 0.05,
        "aggregate_clock": sc.experiment.clock,
    }
    if ana["singular"]:
        summary["message"] = SINGULAR_MESSAGE
    write_csv(out / "roc.csv", ("threshold", "FAR", "MDR"), zip(roc.thresholds, roc.far, roc.mdr))
    write_json(out / "summary.json", summary)
    curves = {"empirical": (roc.far, roc.mdr)}
    if not ana["singular"]:
        mom = statistic_moments(res["spec"], cfg.W, bounds=False)
        pts = roc_curve(mom, 201)
        curves["Gaussian"] = ([p[1] for p in pts], [p[2] for p in pts])
    _figure(sc, plotting.plot_roc, curves, out / "roc.png", f"ROC, W={cfg.W}, n={cfg.n}")
    _figure(sc, plotting.plot_statistic_histograms, res["z0"], res["z1"], out / "z_hist.png", roc.xi_star)
    return EXIT_OK


def cmd_optimize(sc: Scenario, out: Path, args) -> int:
    """Sweep the efficiency threshold and solve the jammer's design problem."""
    family = JammerFamily(sc.topology, sc.lam, sc.gamma)
    opt = sc.optimizer
    rows = sweep_tau(family, opt.tau_eta, opt.expansion_point, opt.order, True, opt.grid_step)
    header = ("tau_eta", "p_R", "p_J", "rate", "eta_achieved", "eta_linearized", "feasible",
              "kkt_residual", "grid_p_R", "grid_p_J", "grid_agrees")
    nan = float("nan")
    write_csv(out / "strategy.csv", header,
              ([r.get(k, nan) for k in header] for r in rows))
    infeasible = [r for r in rows if not r["feasible"]]
    summary = {
        "scenario": sc.source, "expansion_point": list(opt.expansion_point), "order": opt.order,
        "r0": family.r0, "eta_at_1_1": family.efficiency(1.0, 1.0),
        "grid_agreement": all(r.get("grid_agrees", True) for r in rows if r["feasible"]),
        "infeasible": infeasible,
    }
    write_json(out / "strategy_summary.json", summary)
    _figure(sc, plotting.plot_strategy, rows, out / "strategy.png")
    if infeasible:
        taus = ", ".join(f"{r['tau_eta']:g}" for r in infeasible)
        print(f"infeasible efficiency threshold(s): {taus} "
              f"(largest linearized efficiency {infeasible[0]['eta_linearized_max']:.6g})", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_aggregate(sc: Scenario, out: Path, args) -> int:
    """Aggregated models: exports, lumpability, efficiency and Monte Carlo detection."""
    cfg = sc.experiment_config(threads=args.threads)
    c0, c1 = hypothesis_chains(cfg)
    summary = {"scenario": sc.source, "clock": sc.experiment.clock, "models": {}}
    for name, part in (("intermediate", intermediate_partition(c0.space)),
                       ("simplified", simplified_partition(c0.space))):
        a0, a1 = ideal_aggregate(c0, part), ideal_aggregate(c1, part)
        write_json(out / f"agg_{name}_compliant.json", aggregated_to_dict(a0))
        write_json(out / f"agg_{name}_{c1.kind}.json", aggregated_to_dict(a1))
        lump = is_strongly_lumpable(c0, part)
        eta_full, eta_agg = jamming_efficiency_aggregated((c0, c1), (a0, a1))
        entry = {
            "blocks": len(part), "lumpable": lump.lumpable, "witness": lump.witness,
            "eta_full": eta_full, "eta_aggregated": eta_agg,
        }
        if name == "simplified":
            tables = [simplified_rate_table(c, sc.topology) for c in (c0, c1)]
            entry["table_check_max_abs_diff"] = max(
                float(np.max(np.abs(simplified_rate_matrix(t) - a.Q_hat))) for t, a in zip(tables, (a0, a1)))
            entry["beta"] = {"H0": tables[0]["_beta"], "H1": tables[1]["_beta"]}
        summary["models"][name] = entry
    res = aggregated_experiment(cfg, MODELS, sc.experiment.clock)
    curves = {}
    for model, r in res.items():
        roc = r["roc"]
        write_csv(out / f"roc_{model}.csv", ("threshold", "FAR", "MDR"), zip(roc.thresholds, roc.far, roc.mdr))
        summary["models"].setdefault(model, {}).update(
            empirical_eer=roc.eer, empirical_eer_stderr=roc.eer_stderr, analytic=r["analytic"])
        curves[model] = (roc.far, roc.mdr)
    write_json(out / "aggregate_summary.json", summary)
    _figure(sc, plotting.plot_roc, curves, out / "roc_models.png", "ROC by observation model")
    return EXIT_OK


def cmd_pareto(sc: Scenario, out: Path, args) -> int:
    """Efficiency versus analytic EER over the jammer grid, with Pareto frontiers."""
    grid = sc.jammer.grid
    if not grid:
        raise ConfigError(f"{sc.source}: jammer.grid is required for the pareto command")
    family = JammerFamily(sc.topology, sc.lam, sc.gamma)
    c0 = family.compliant
    parts = {m: partition_for(m, c0.space) for m in MODELS}
    aggs0 = {m: ideal_aggregate(c0, p) for m, p in parts.items() if p is not None}
    W = sc.experiment.W
    points, skipped = [], []
    for p_R, p_J in grid:
        if p_R == 0 and p_J == 0:
            skipped.append([p_R, p_J])
            continue
        c1 = family.chain(p_R, p_J)
        eta = float(c1.pi @ family.t) / family.r0
        for model, part in parts.items():
            if part is None:
                spec = supervised_spec(c0, c1)
            else:
                a1 = ideal_aggregate(c1, part)
                spec = supervised_spec((aggs0[model].P, aggs0[model].pi), (a1.P, a1.pi))
            mom = statistic_moments(spec, W, bounds=False)
            eer = equal_error_rate(mom)[0]
            points.append(ParetoPoint(p_R, p_J, eta, eer, model))
    rows = []
    for model in MODELS:
        pts = [p for p in points if p.model == model]
        on, dist = pareto_frontier(pts)
        for p, o, d in zip(pts, on, dist):
            rows.append({"p_R": p.p_R, "p_J": p.p_J, "eta": p.eta, "eer": p.eer, "model": model,
                         "on_frontier": o, "distance": d})
    header = ("p_R", "p_J", "eta", "eer", "model", "on_frontier", "distance")
    write_csv(out / "pareto.csv", header, ([r[k] for k in header] for r in rows))
    write_json(out / "pareto_summary.json", {
        "scenario": sc.source, "W": W, "points": len(points), "skipped": skipped,
        "frontier": {m: [[r["p_R"], r["p_J"]] for r in rows if r["model"] == m and r["on_frontier"]]
                     for m in MODELS},
    })
    _figure(sc, plotting.plot_pareto, rows, out / "pareto.png")
    return EXIT_OK


def cmd_oracles(sc: Scenario, out: Path, args) -> int:
    """Cross-check closed forms against brute-force computations."""
    report = mc_oracles(sc, threads=args.threads)
    write_json(out / "oracle_report.json", report)
    for c in report["checks"]:
        if not c["passed"]:
            print(f"FAIL {c['name']}: {c['quantity']}: value {c['value']:.6g}, "
                  f"reference {c['reference']:.6g}, tolerance {c['tolerance']:.3g}", file=sys.stderr)
    print(f"{report['n_checks'] - report['n_failed']}/{report['n_checks']} oracle checks passed")
    return EXIT_OK if report["passed"] else EXIT_ORACLE


COMMANDS = {
    "build": cmd_build,
    "detect": cmd_detect,
    "simulate": cmd_simulate,
    "optimize": cmd_optimize,
    "aggregate": cmd_aggregate,
    "pareto": cmd_pareto,
    "oracles": cmd_oracles,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rrjdetect",
        description="Markov-chain detection of random reactive jammers in CSMA networks.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default="m4",
                        help="scenario YAML file, or a built-in name (m4, m6); default: m4")
    common.add_argument("--out", default=None, help="output directory (default: output.dir of the scenario)")
    common.add_argument("--seed", type=int, default=None, help="override experiment.seed")
    common.add_argument("--threads", type=int, default=1, help="worker threads for path simulation")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=fn.__doc__.strip().splitlines()[0])
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        if args.seed is not None and args.seed < 0:
            raise ConfigError("--seed must be non-negative")
        sc = load_scenario(args.config)
        if args.seed is not None:
            sc = sc.with_seed(args.seed)
        out = Path(args.out if args.out is not None else sc.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](sc, out, args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
