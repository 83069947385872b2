"""Command-line front door.

Subcommands:
  solve        one scenario, one seeded realization -> summary (+ JSON dump)
  sweep        experiment file -> CSV of aggregated rows
  feasibility  experiment file with a power grid -> CSV incl. MRT baseline
  validate     solution JSON + scenario -> Monte-Carlo report

Exit codes: 0 success, 2 infeasible scenario (or failed validation),
3 solver failure, 4 bad configuration or unreadable input.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys

import numpy as np

from .channel import ConfigError, load_system_config
from .experiments import (
    build_clustered_channels,
    emit_csv,
    feasibility_curve,
    load_experiment_spec,
    sweep_run,
)
from .channel import covariance_set_doa, covariance_set_exact
from .solver import InternalSolverError, RandomizationFailedError, minimize_power
from .srmodel import check_feasibility

__all__ = ["main"]

EXIT_OK = 0
EXIT_INFEASIBLE = 2
EXIT_SOLVER_FAILURE = 3
EXIT_BAD_CONFIG = 4


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="srbeam",
        description="Robust transmit beamforming for backscatter-assisted multiuser downlinks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="solve one seeded realization of a scenario")
    p_solve.add_argument("--config", required=True, help="system config file (key = value lines)")
    p_solve.add_argument("--seed", type=int, default=0, help="channel realization seed")
    p_solve.add_argument("--approach", choices=("csi", "doa"), default="csi")
    p_solve.add_argument("--out", default=None, help="write the solution as JSON here")

    p_sweep = sub.add_parser("sweep", help="run a parameter sweep from an experiment file")
    p_sweep.add_argument("--config", required=True, help="experiment file")
    p_sweep.add_argument("--out", required=True, help="CSV output path")
    p_sweep.add_argument("--seed", type=int, default=None, help="override the file's seed")
    p_sweep.add_argument("--trials", type=int, default=None, help="override trials per grid point")
    p_sweep.add_argument("--approach", choices=("csi", "doa", "both"), default=None)
    p_sweep.add_argument("--mc-samples", type=int, default=None, dest="mc_samples")
    p_sweep.add_argument("--workers", type=int, default=None, help="parallel worker processes")

    p_feas = sub.add_parser(
        "feasibility", help="feasibility-vs-power curve (baseline comparison always on)"
    )
    p_feas.add_argument("--config", required=True, help="experiment file with sweep_param = power_grid")
    p_feas.add_argument("--out", required=True, help="CSV output path")
    p_feas.add_argument("--seed", type=int, default=None)
    p_feas.add_argument("--trials", type=int, default=None)
    p_feas.add_argument("--approach", choices=("csi", "doa"), default=None)
    p_feas.add_argument("--mc-samples", type=int, default=None, dest="mc_samples")
    p_feas.add_argument("--workers", type=int, default=None)

    p_val = sub.add_parser("validate", help="Monte-Carlo check of a saved solution")
    p_val.add_argument("--config", required=True, help="system config file")
    p_val.add_argument("--solution", required=True, help="JSON file written by solve --out")
    p_val.add_argument("--seed", type=int, default=0, help="Monte-Carlo sampling seed")
    p_val.add_argument("--mc-samples", type=int, default=100_000, dest="mc_samples")
    return parser


def _cmd_solve(args) -> int:
    cfg = load_system_config(args.config)
    chs = build_clustered_channels(
        cfg, placement="seeded_random", seed=np.random.SeedSequence((args.seed,))
    )
    cov = covariance_set_exact(chs, cfg) if args.approach == "csi" else covariance_set_doa(cfg)
    try:
        sol = minimize_power(chs, cfg, cov=cov)
    except (InternalSolverError, RandomizationFailedError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER_FAILURE

    print(f"status: {sol.status}")
    if sol.status == "optimal":
        per_user = np.sum(np.abs(sol.w) ** 2, axis=0)
        print(f"total power: {sol.total_power:.9g} W")
        print("per-user power (W): " + ", ".join(f"{p:.9g}" for p in per_user))
        print(f"dc iterations: {sol.diagnostics.get('dc_iterations', 0)}")
        print(f"randomization used: {sol.diagnostics.get('randomization_used', False)}")
    else:
        print(f"backend status: {sol.diagnostics.get('backend_status')}")

    if args.out and sol.status == "optimal":
        payload = {
            "status": sol.status,
            "channel_seed": args.seed,
            "approach": args.approach,
            "total_power_w": sol.total_power,
            "w_real": sol.w.real.tolist(),
            "w_imag": sol.w.imag.tolist(),
            "mu": [float(m) for m in sol.mu],
            "diagnostics": {
                "backend_status": str(sol.diagnostics.get("backend_status")),
                "dc_iterations": int(sol.diagnostics.get("dc_iterations", 0)),
                "randomization_used": bool(sol.diagnostics.get("randomization_used", False)),
                "rank_ratios": [float(r) for r in sol.diagnostics.get("rank_ratios", [])],
                "complexity_estimate": float(sol.diagnostics.get("complexity_estimate", math.nan)),
            },
        }
        with open(args.out, "w") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")
        print(f"solution written to {args.out}")

    if sol.status == "optimal":
        return EXIT_OK
    if sol.status == "infeasible":
        return EXIT_INFEASIBLE
    return EXIT_SOLVER_FAILURE


def _apply_overrides(spec, args, fields) -> object:
    updates = {}
    for field in fields:
        val = getattr(args, field, None)
        if val is not None:
            updates[field] = val
    return dataclasses.replace(spec, **updates) if updates else spec


def _cmd_sweep(args) -> int:
    spec = load_experiment_spec(args.config)
    spec = _apply_overrides(spec, args, ("seed", "trials", "approach", "mc_samples"))
    rows = sweep_run(spec, workers=args.workers)
    emit_csv(rows, args.out)
    print(f"{len(rows)} rows written to {args.out}")
    return EXIT_OK


def _cmd_feasibility(args) -> int:
    spec = load_experiment_spec(args.config)
    if spec.sweep_param != "power_grid":
        raise ConfigError("feasibility needs an experiment file with sweep_param = power_grid")
    spec = _apply_overrides(spec, args, ("seed", "trials", "approach", "mc_samples"))
    spec = dataclasses.replace(spec, baseline_mrt=True)
    rows = feasibility_curve(spec, spec.sweep_values, workers=args.workers)
    emit_csv(rows, args.out)
    print(f"{len(rows)} rows written to {args.out}")
    return EXIT_OK


def _cmd_validate(args) -> int:
    cfg = load_system_config(args.config)
    with open(args.solution) as fh:
        payload = json.load(fh)
    try:
        w = np.asarray(payload["w_real"], dtype=float) + 1j * np.asarray(payload["w_imag"], dtype=float)
        channel_seed = int(payload["channel_seed"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed solution file: {exc}") from exc
    if w.shape != (cfg.n_antennas, cfg.n_users):
        raise ConfigError(
            f"solution shape {w.shape} does not match config ({cfg.n_antennas}, {cfg.n_users})"
        )
    chs = build_clustered_channels(
        cfg, placement="seeded_random", seed=np.random.SeedSequence((channel_seed,))
    )
    report = check_feasibility(chs, w, cfg, n_samples=args.mc_samples, seed=args.seed)
    for k in range(cfg.n_users):
        print(
            f"user {k}: outage {report.outage_hat[k]:.6g} (target {cfg.outage_target:.6g}, "
            f"stderr {report.outage_stderr[k]:.2g}) "
            f"iot margin {report.iot_margin[k]:.6g} bps/Hz -> "
            f"{'ok' if report.outage_ok[k] and report.iot_ok[k] else 'FAIL'}"
        )
    print(f"verdict: {'pass' if report.all_ok else 'fail'}")
    return EXIT_OK if report.all_ok else EXIT_INFEASIBLE


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        code = exc.code if isinstance(exc.code, int) else 1
        return EXIT_OK if code == 0 else EXIT_BAD_CONFIG
    handlers = {
        "solve": _cmd_solve,
        "sweep": _cmd_sweep,
        "feasibility": _cmd_feasibility,
        "validate": _cmd_validate,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    except FileNotFoundError as exc:
        print(f"file not found: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    except (InternalSolverError, RandomizationFailedError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER_FAILURE


if __name__ == "__main__":
    sys.exit(main())
