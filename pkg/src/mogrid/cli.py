"""Command-line front end.

Subcommands write CSV files, a JSON summary and a ``manifest.json`` holding
the fully resolved configuration; passing that manifest back through
``--config`` repeats the run exactly.  Exit status is 0 only when every
requested solve converged (and, for frontiers, the frontier is monotone),
1 otherwise, and 2 for invalid input.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .admm import WORKERS_ENV, diagnose_convergence, run_admm, write_trace
from .config import ConfigError, ExperimentConfig, from_dict, load
from .dataset import DataError
from .horizon import HorizonProblem
from .mpc import ClosedLoopTrace, run_mpc, write_trace_csv
from .pareto import FrontierSweep, sweep, tradeoff_bound, write_frontier, write_tradeoff

log = logging.getLogger("mogrid")

EXIT_OK, EXIT_UNCONVERGED, EXIT_INVALID = 0, 1, 2


def _sig(x):
    """Round floats (recursively) to 9 significant digits for JSON output."""
    if isinstance(x, float):
        return float(f"{x:.9g}") if math.isfinite(x) else None
    if isinstance(x, dict):
        return {k: _sig(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_sig(v) for v in x]
    if isinstance(x, np.generic):
        return _sig(x.item())
    return x


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_sig(obj), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _tag(x: float) -> str:
    return f"{x:.9g}"


def _csv_list(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


# --------------------------------------------------------------------------
# argument handling


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML/JSON config file or a manifest.json from an earlier run")
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("--seed", type=int, help="seed of the synthetic data generator")
    common.add_argument("--kappa", help="weight (comma list allowed for simulate and admm-diagnose)")
    common.add_argument("--kappa-grid", help="frontier weights: start:stop:step or a comma list")
    common.add_argument("--trace", action="store_true", help="also write per-iteration ADMM traces")
    common.add_argument("--tradeoff", type=float, action="append", help="kappa0 for a trade-off table (repeatable)")
    common.add_argument("--max-iters", type=int, help="ADMM iteration budget")
    common.add_argument("--rho", help="ADMM penalty (comma list allowed for admm-diagnose)")
    common.add_argument("--data", help="net consumption CSV instead of synthetic data")
    common.add_argument("--synth", action="store_true", help="use synthetic data even if the config names a CSV")
    common.add_argument("--households", type=int, help="number of synthetic households")
    common.add_argument("--days", type=float, help="length of the synthetic record in days")
    common.add_argument("--steps", type=int, help="closed-loop steps (simulate)")
    common.add_argument("--axis", choices=["tube_width", "initial_soc"], help="sensitivity axis")
    common.add_argument("--values", help="sensitivity values, comma list")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(
        prog="mogrid",
        description="Distributed two-objective energy management for prosumer communities.",
        epilog=f"Worker threads for the household solves: ${WORKERS_ENV} (default 1).",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="closed-loop receding-horizon run")
    sub.add_parser("pareto", parents=[common], help="frontier sweep over kappa")
    sub.add_parser("sensitivity", parents=[common], help="frontiers for varied tube width or initial charge")
    sub.add_parser("admm-diagnose", parents=[common], help="per-iteration ADMM trace and convergence report")
    return parser


def resolve_config(args) -> ExperimentConfig:
    base = load(args.config) if args.config else ExperimentConfig()
    raw = base.to_dict()
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.kappa is not None:
        vals = _csv_list(args.kappa)
        raw["kappa"] = vals[0] if len(vals) == 1 else vals
    if args.kappa_grid is not None:
        raw["kappa_grid"] = args.kappa_grid
    if args.tradeoff:
        raw["tradeoff"] = list(args.tradeoff)
    if args.max_iters is not None:
        raw["max_iters"] = args.max_iters
    if args.rho is not None:
        vals = _csv_list(args.rho)
        raw["rho"] = vals[0] if len(vals) == 1 else vals
    if args.data is not None:
        raw["data"] = args.data
    if args.synth:
        raw["data"] = None
    if args.trace:
        raw["trace"] = True
    if args.households is not None:
        raw["households"] = args.households
    if args.days is not None:
        raw["days"] = args.days
    if args.steps is not None:
        raw["steps"] = args.steps
    if args.axis is not None:
        raw["axis"] = args.axis
    if args.values is not None:
        raw["values"] = _csv_list(args.values)
    return from_dict(raw)


def _list(x) -> list[float]:
    return [float(v) for v in x] if isinstance(x, list) else [float(x)]


# --------------------------------------------------------------------------
# commands


def _horizon(cfg: ExperimentConfig, series, tube, x0=None, k=None) -> HorizonProblem:
    return HorizonProblem.from_series(
        series, cfg.params(), tube, cfg.x0 if x0 is None else x0, cfg.horizon_k if k is None else k, cfg.N
    )


def _history_rows(writer, prefix, history):
    for st in history:
        vals = (st.primal_residual, st.dual_residual, st.g, st.h, st.g_hat, st.h_hat, abs(st.f - st.f_hat), st.penalty)
        writer.writerow([*prefix, st.iteration, *(_tag(v) for v in vals)])


def cmd_simulate(cfg: ExperimentConfig, out: Path, trace: bool = False) -> int:
    series = cfg.series()
    tube = cfg.tube_spec(len(series))
    admm = cfg.admm()
    summary, ok = {}, True
    for kappa in _list(cfg.kappa):
        tag = _tag(kappa)
        step_fh = step_writer = None
        on_step = None
        if trace:
            step_fh = (out / f"admm_steps_kappa{tag}.csv").open("w", newline="", encoding="utf-8")
            step_writer = csv.writer(step_fh, lineterminator="\n")
            step_writer.writerow(["k", "iteration", "primal_residual", "dual_residual", "g", "h", "g_hat", "h_hat", "f_gap", "penalty"])

            def on_step(k, sol, _w=step_writer):
                _history_rows(_w, [k], sol.result.history)

        try:
            tr = run_mpc(
                series, cfg.params(), tube, cfg.x0, cfg.steps, replace(admm, kappa=kappa, keep_history=trace),
                N=cfg.N, k0=cfg.k0, on_step=on_step,
            )
        finally:
            if step_fh is not None:
                step_fh.close()
        write_trace_csv(tr, out / f"trace_kappa{tag}.csv")
        summary[tag] = _trace_summary(tr)
        ok = ok and bool(np.all(tr.converged)) and tr.max_violation <= 1e-9
        for ev in tr.events:
            log.warning("kappa=%s %s", tag, ev)
    _write_json(out / "summary.json", summary)
    return EXIT_OK if ok else EXIT_UNCONVERGED


def _trace_summary(tr: ClosedLoopTrace) -> dict:
    dev = tr.z_bar - tr.zeta_bar
    violation = np.maximum(tr.lower - tr.z_bar, 0.0) + np.maximum(tr.z_bar - tr.upper, 0.0)
    return {
        "steps": tr.steps,
        "mean_abs_deviation": float(np.mean(np.abs(dev))),
        "total_tube_violation": float(np.sum(violation)),
        "J1": tr.J1,
        "J2": tr.J2,
        "max_constraint_violation": tr.max_violation,
        "unconverged_steps": [int(k) for k in tr.k[~tr.converged]],
        "admm_iterations_total": int(tr.iterations.sum()),
        "events": list(tr.events),
    }


def _frontier_grid(cfg: ExperimentConfig) -> np.ndarray:
    grid = cfg.kappas()
    if cfg.tradeoff:
        grid = np.union1d(grid, [0.01, 0.99])
        grid = np.union1d(grid, cfg.tradeoff)
    return grid


def _run_sweep(cfg, horizon, grid, out: Path, trace: bool, label: str) -> FrontierSweep:
    admm = replace(cfg.admm(), keep_history=trace)
    if not trace:
        return sweep(horizon, grid, admm)
    fh = (out / f"admm_trace{label}.csv").open("w", newline="", encoding="utf-8")
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["kappa", "iteration", "primal_residual", "dual_residual", "g", "h", "g_hat", "h_hat", "f_gap", "penalty"])
    try:
        return sweep(horizon, grid, admm, on_solution=lambda sol: _history_rows(writer, [_tag(sol.point.kappa)], sol.result.history))
    finally:
        fh.close()


def _sweep_summary(sw: FrontierSweep) -> dict:
    mono = sw.monotonicity
    return {
        "points": len(sw.points),
        "unconverged_kappas": sw.unconverged,
        "monotone": mono.ok,
        "monotonicity_tol": mono.tol,
        "violations": [[i, which, excess] for i, which, excess in mono.violations],
        "g_strictly_decreasing": mono.g_strict,
        "h_strictly_increasing": mono.h_strict,
    }


def _report_sweep(sw: FrontierSweep, label: str) -> bool:
    ok = True
    if sw.unconverged:
        print(f"{label}: ADMM did not converge for kappa = {sw.unconverged}", file=sys.stderr)
        ok = False
    if not sw.monotonicity.ok:
        for i, which, excess in sw.monotonicity.violations:
            k0, k1 = sw.points[i].kappa, sw.points[i + 1].kappa
            print(f"{label}: {which} not monotone between kappa={k0:g} and {k1:g} (excess {excess:.3g})", file=sys.stderr)
        ok = False
    return ok


def cmd_pareto(cfg: ExperimentConfig, out: Path, trace: bool = False) -> int:
    series = cfg.series()
    horizon = _horizon(cfg, series, cfg.tube_spec(len(series)))
    sw = _run_sweep(cfg, horizon, _frontier_grid(cfg), out, trace, "")
    write_frontier(sw, out / "frontier.csv")
    summary = _sweep_summary(sw)
    summary["tradeoff"] = {}
    for k0 in cfg.tradeoff:
        bound = tradeoff_bound(sw, k0)
        write_tradeoff(bound, out / f"tradeoff_kappa{_tag(k0)}.csv")
        summary["tradeoff"][_tag(k0)] = {"L_star": bound.L_star}
    _write_json(out / "summary.json", summary)
    return EXIT_OK if _report_sweep(sw, "pareto") else EXIT_UNCONVERGED


SENSITIVITY_HEADER = ["value", "kappa", "g", "h", "f_tilde", "refined", "iterations", "converged"]


def cmd_sensitivity(cfg: ExperimentConfig, out: Path, trace: bool = False) -> int:
    series = cfg.series()
    base_tube = cfg.tube_spec(len(series))
    grid = _frontier_grid(cfg)
    ok, summary = True, {}
    with (out / f"sensitivity_{cfg.axis}.csv").open("w", newline="", encoding="utf-8") as fh:
        combined = csv.writer(fh, lineterminator="\n")
        combined.writerow(SENSITIVITY_HEADER)
        for value in cfg.values:
            value = float(value)
            if cfg.axis == "tube_width":
                horizon = _horizon(cfg, series, base_tube.widened(value))
            else:
                horizon = _horizon(cfg, series, base_tube, x0=value)
            label = f"_{cfg.axis}{_tag(value)}"
            sw = _run_sweep(cfg, horizon, grid, out, trace, label)
            write_frontier(sw, out / f"frontier{label}.csv")
            for p in sw.points:
                combined.writerow(
                    [_tag(value), _tag(p.kappa), _tag(p.g_val), _tag(p.h_val), _tag(p.f_tilde), int(p.refined), p.admm_iterations, int(p.converged)]
                )
            summary[_tag(value)] = _sweep_summary(sw)
            ok = _report_sweep(sw, f"{cfg.axis}={value:g}") and ok
    _write_json(out / "summary.json", summary)
    return EXIT_OK if ok else EXIT_UNCONVERGED


def cmd_admm_diagnose(cfg: ExperimentConfig, out: Path, trace: bool = True) -> int:
    series = cfg.series()
    horizon = _horizon(cfg, series, cfg.tube_spec(len(series)))
    kappas, rhos = _list(cfg.kappa), _list(cfg.rho)
    base = cfg.admm()
    ok, report = True, {}
    for kappa in kappas:
        for rho in rhos:
            run_cfg = replace(base, kappa=kappa, rho=rho, keep_history=True)
            res = run_admm(horizon, run_cfg)
            label = f"kappa{_tag(kappa)}_rho{_tag(rho)}"
            write_trace(res.history, out / f"admm_trace_{label}.csv")
            rep = diagnose_convergence(res.history).summary()
            rep.update(converged=res.converged, reason=res.reason, f=res.f_val, f_hat=res.f_hat_val)
            report[label] = rep
            ok = ok and res.converged
    _write_json(out / "report.json", report)
    return EXIT_OK if ok else EXIT_UNCONVERGED


COMMANDS = {
    "simulate": cmd_simulate,
    "pareto": cmd_pareto,
    "sensitivity": cmd_sensitivity,
    "admm-diagnose": cmd_admm_diagnose,
}


def write_manifest(out: Path, command: str, cfg: ExperimentConfig) -> None:
    manifest = {
        "manifest_version": 1,
        "tool": "mogrid",
        "version": __version__,
        "command": command,
        "seed": cfg.seed,
        "config_sha256": cfg.sha256(),
        "config": cfg.to_dict(),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"config: {exc}", file=sys.stderr)
        return EXIT_INVALID
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    trace = cfg.trace or args.command == "admm-diagnose"
    write_manifest(out, args.command, cfg)
    try:
        return COMMANDS[args.command](cfg, out, trace)
    except (DataError, ValueError, OSError) as exc:
        print(f"{args.command}: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
