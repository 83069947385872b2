"""Desk-scale experiment drivers: sweeps, feasibility curves, CSV output.

Each grid point averages over independent channel realizations. A trial's
channels depend only on (experiment seed, trial index), never on the grid
value, so a sweep moves one knob at a time over identical realizations and
mean trends inherit the per-trial solver behaviour directly.

Trials are embarrassingly parallel; results are gathered in submission
order and reduced sequentially, so any worker count produces identical
bytes in the emitted CSV.
"""

from __future__ import annotations

import math
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .channel import (
    ChannelSet,
    ConfigError,
    SystemConfig,
    build_clustered_channels,
    covariance_set_doa,
    covariance_set_exact,
    parse_system_config,
)
from .solver import SolverParams, minimize_power
from .srmodel import FeasibilityReport, check_feasibility

__all__ = [
    "SWEEP_PARAMETERS",
    "ExperimentSpec",
    "ResultRow",
    "TrialOutcome",
    "scenario_with",
    "run_trial",
    "sweep_run",
    "mrt_baseline",
    "feasibility_curve",
    "emit_csv",
    "load_experiment_spec",
]

SWEEP_PARAMETERS = (
    "cellular_rate",
    "iot_rate",
    "outage",
    "angular_spread",
    "alpha",
    "devices_per_user",
    "power_grid",
)

CSV_HEADER = "sweep_param,sweep_value,approach,mean_power_w,feasibility,mc_outage,iot_margin_bpshz,dc_iters,failures"


def scenario_with(cfg: SystemConfig, param: str, value) -> SystemConfig:
    """Return a copy of ``cfg`` with one sweep knob moved (scalars broadcast)."""
    if param == "cellular_rate":
        return cfg.replace(rate_target_cellular=float(value))
    if param == "iot_rate":
        return cfg.replace(rate_target_iot=float(value))
    if param == "outage":
        return cfg.replace(outage_target=float(value))
    if param == "angular_spread":
        return cfg.replace(angular_spreads=float(value))
    if param == "alpha":
        return cfg.replace(alpha=float(value))
    if param == "devices_per_user":
        return cfg.replace(devices_per_user=int(value))
    if param == "power_grid":
        return cfg
    raise ConfigError(f"unknown sweep parameter {param!r}; expected one of {SWEEP_PARAMETERS}")


@dataclass(frozen=True)
class ExperimentSpec:
    """One sweep: scenario, knob, grid, and sampling bookkeeping."""

    scenario: SystemConfig
    sweep_param: str
    sweep_values: tuple[float, ...]
    trials: int = 50
    seed: int = 0
    approach: str = "csi"
    baseline_mrt: bool = False
    mc_samples: int = 100_000

    def __post_init__(self):
        if self.sweep_param not in SWEEP_PARAMETERS:
            raise ConfigError(f"unknown sweep parameter {self.sweep_param!r}")
        if len(self.sweep_values) == 0:
            raise ConfigError("sweep_values must be nonempty")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.approach not in ("csi", "doa", "both"):
            raise ConfigError(f"approach must be csi, doa, or both, got {self.approach!r}")
        if self.mc_samples < 1:
            raise ConfigError("mc_samples must be >= 1")

    def approaches(self) -> tuple[str, ...]:
        return ("csi", "doa") if self.approach == "both" else (self.approach,)


@dataclass(frozen=True)
class TrialOutcome:
    """Raw per-trial record before aggregation."""

    feasible: bool
    power: float
    worst_outage: float
    min_iot_margin: float
    dc_iterations: int
    failure: str | None


@dataclass(frozen=True)
class ResultRow:
    """One aggregated grid point; mean columns cover feasible trials only."""

    sweep_param: str
    sweep_value: float
    approach: str
    mean_power_w: float
    feasibility: float
    mc_outage: float
    iot_margin_bpshz: float
    dc_iters: float
    failures: dict
    feasibility_stderr: float = 0.0


def _trial_channels(cfg: SystemConfig, seed: int, trial: int) -> ChannelSet:
    return build_clustered_channels(
        cfg, placement="seeded_random", seed=np.random.SeedSequence((seed, trial))
    )


def _mc_seed(seed: int, trial: int) -> int:
    return int(np.random.SeedSequence((seed, trial, 1)).generate_state(1)[0])


def run_trial(
    cfg: SystemConfig,
    seed: int,
    trial: int,
    approach: str = "csi",
    mc_samples: int = 100_000,
    params: SolverParams | None = None,
) -> TrialOutcome:
    """Solve one realization and validate the result against the true channels.

    The design-side covariances follow ``approach`` (exact per-realization
    for csi, angle-parameterized for doa); the Monte-Carlo validation always
    replays the true realization, so a doa design must survive the channels
    it did not see.
    """
    chs = _trial_channels(cfg, seed, trial)
    cov = covariance_set_exact(chs, cfg) if approach == "csi" else covariance_set_doa(cfg)
    sol = minimize_power(chs, cfg, params=params, cov=cov)
    if sol.status != "optimal":
        return TrialOutcome(
            feasible=False, power=math.nan, worst_outage=math.nan,
            min_iot_margin=math.nan, dc_iterations=int(sol.diagnostics.get("dc_iterations", 0)),
            failure=sol.status,
        )
    report = check_feasibility(chs, sol.w, cfg, n_samples=mc_samples, seed=_mc_seed(seed, trial))
    failure = None
    if not report.all_ok:
        failure = "mc_outage" if not bool(np.all(report.outage_ok)) else "iot_rate"
    return TrialOutcome(
        feasible=report.all_ok,
        power=sol.total_power,
        worst_outage=float(report.outage_hat.max()),
        min_iot_margin=float(report.iot_margin.min()),
        dc_iterations=int(sol.diagnostics.get("dc_iterations", 0)),
        failure=failure,
    )


def _sweep_task(task) -> TrialOutcome:
    cfg, seed, trial, approach, mc_samples = task
    return run_trial(cfg, seed, trial, approach, mc_samples)


def _mean_over(values) -> float:
    vals = [v for v in values]
    return float(sum(vals) / len(vals)) if vals else math.nan


def _aggregate(param: str, value, approach: str, outcomes: list[TrialOutcome]) -> ResultRow:
    n = len(outcomes)
    feas = [o for o in outcomes if o.feasible]
    frac = len(feas) / n
    failures = Counter(o.failure for o in outcomes if o.failure is not None)
    return ResultRow(
        sweep_param=param,
        sweep_value=float(value),
        approach=approach,
        mean_power_w=_mean_over(o.power for o in feas),
        feasibility=frac,
        mc_outage=_mean_over(o.worst_outage for o in feas),
        iot_margin_bpshz=_mean_over(o.min_iot_margin for o in feas),
        dc_iters=_mean_over(o.dc_iterations for o in feas),
        failures=dict(failures),
        feasibility_stderr=math.sqrt(frac * (1.0 - frac) / n),
    )


def _run_tasks(tasks, task_fn, workers: int | None):
    if workers is not None and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(task_fn, tasks))
    return [task_fn(t) for t in tasks]


def sweep_run(spec: ExperimentSpec, workers: int | None = None) -> list[ResultRow]:
    """Run the sweep and aggregate one row per (grid value, approach).

    Rows appear in grid order with approaches in (csi, doa) order inside a
    grid point. Failed trials are counted by category in the failures
    column; they never contribute to the mean columns.
    """
    if spec.sweep_param == "power_grid":
        return feasibility_curve(spec, spec.sweep_values, workers=workers)
    tasks = []
    keys = []
    for vi, value in enumerate(spec.sweep_values):
        cfg_v = scenario_with(spec.scenario, spec.sweep_param, value)
        for approach in spec.approaches():
            for trial in range(spec.trials):
                tasks.append((cfg_v, spec.seed, trial, approach, spec.mc_samples))
                keys.append((vi, approach))
    outcomes = _run_tasks(tasks, _sweep_task, workers)
    grouped: dict = {}
    for key, outcome in zip(keys, outcomes):
        grouped.setdefault(key, []).append(outcome)
    rows = []
    for vi, value in enumerate(spec.sweep_values):
        for approach in spec.approaches():
            rows.append(_aggregate(spec.sweep_param, value, approach, grouped[(vi, approach)]))
    return rows


def mrt_baseline(
    chs: ChannelSet,
    cfg: SystemConfig,
    power_budget: float,
    mc_samples: int = 100_000,
    seed: int = 0,
) -> tuple[np.ndarray, FeasibilityReport]:
    """Match each beamformer to its direct channel and split power evenly.

    Spends the whole budget: w_k = sqrt(budget/K) * f_k^H / ||f_k||. Returns
    the beamformer columns and the Monte-Carlo feasibility report at that
    budget.
    """
    if power_budget <= 0.0:
        raise ValueError("power_budget must be positive")
    k_users = cfg.n_users
    w = np.zeros((cfg.n_antennas, k_users), dtype=complex)
    for k in range(k_users):
        f = chs.bs_user[k]
        w[:, k] = math.sqrt(power_budget / k_users) * f.conj() / np.linalg.norm(f)
    report = check_feasibility(chs, w, cfg, n_samples=mc_samples, seed=seed)
    return w, report


def _feas_solve_task(task):
    cfg, seed, trial, approach = task
    chs = _trial_channels(cfg, seed, trial)
    cov = covariance_set_exact(chs, cfg) if approach == "csi" else covariance_set_doa(cfg)
    sol = minimize_power(chs, cfg, cov=cov)
    power = sol.total_power if sol.status == "optimal" else math.inf
    return power, int(sol.diagnostics.get("dc_iterations", 0)), sol.status


def _feas_mrt_task(task):
    cfg, seed, trial, budget, mc_samples = task
    chs = _trial_channels(cfg, seed, trial)
    _, report = mrt_baseline(chs, cfg, budget, mc_samples=mc_samples, seed=_mc_seed(seed, trial))
    return bool(report.all_ok), float(report.outage_hat.max()), float(report.iot_margin.min())


def feasibility_curve(
    spec: ExperimentSpec,
    power_grid,
    workers: int | None = None,
) -> list[ResultRow]:
    """Fraction of realizations servable within each power budget.

    The optimized design solves each realization once; a trial passes at
    budget P when the solve succeeded and its total power is at most P
    (the optimum is a fixed scalar per trial, so the curve is nondecreasing
    in P by construction). The matched-filter baseline is re-validated by
    Monte Carlo at every budget because its beamformers change with P.
    Rows alternate optimized/baseline per grid point; the baseline rows
    report the budget itself as the spent power.
    """
    grid = tuple(float(p) for p in power_grid)
    if len(grid) == 0:
        raise ConfigError("power_grid must be nonempty")
    if any(p <= 0 for p in grid):
        raise ConfigError("power budgets must be positive")
    cfg = spec.scenario
    approach = "doa" if spec.approach == "doa" else "csi"

    solve_tasks = [(cfg, spec.seed, t, approach) for t in range(spec.trials)]
    solved = _run_tasks(solve_tasks, _feas_solve_task, workers)

    mrt_tasks = [
        (cfg, spec.seed, t, p, spec.mc_samples) for p in grid for t in range(spec.trials)
    ]
    mrt_results = _run_tasks(mrt_tasks, _feas_mrt_task, workers) if spec.baseline_mrt else []

    rows = []
    for gi, budget in enumerate(grid):
        powers = [p for p, _, _ in solved]
        dc_list = [d for _, d, _ in solved]
        ok_mask = [p <= budget for p in powers]
        n_ok = sum(ok_mask)
        frac = n_ok / spec.trials
        failures = Counter()
        for (p, _, status), ok in zip(solved, ok_mask):
            if not ok:
                failures[status if status != "optimal" else "power_above_budget"] += 1
        rows.append(
            ResultRow(
                sweep_param="power_grid",
                sweep_value=budget,
                approach=approach,
                mean_power_w=_mean_over(p for p, ok in zip(powers, ok_mask) if ok),
                feasibility=frac,
                mc_outage=math.nan,
                iot_margin_bpshz=math.nan,
                dc_iters=_mean_over(d for d, ok in zip(dc_list, ok_mask) if ok),
                failures=dict(failures),
                feasibility_stderr=math.sqrt(frac * (1.0 - frac) / spec.trials),
            )
        )
        if spec.baseline_mrt:
            chunk = mrt_results[gi * spec.trials : (gi + 1) * spec.trials]
            oks = [ok for ok, _, _ in chunk]
            frac_m = sum(oks) / spec.trials
            failures_m = Counter()
            for ok, out_hat, margin in chunk:
                if not ok:
                    failures_m["mc_outage" if margin >= -1e-9 else "iot_rate"] += 1
            rows.append(
                ResultRow(
                    sweep_param="power_grid",
                    sweep_value=budget,
                    approach="mrt",
                    mean_power_w=budget,
                    feasibility=frac_m,
                    mc_outage=_mean_over(o for (ok, o, _) in chunk if ok),
                    iot_margin_bpshz=_mean_over(m for (ok, _, m) in chunk if ok),
                    dc_iters=0.0,
                    failures=dict(failures_m),
                    feasibility_stderr=math.sqrt(frac_m * (1.0 - frac_m) / spec.trials),
                )
            )
    return rows


def _fmt(x: float) -> str:
    return format(float(x), ".9g")


def _fmt_failures(failures: dict) -> str:
    if not failures:
        return "0"
    return ";".join(f"{k}={failures[k]}" for k in sorted(failures))


def emit_csv(rows, path) -> None:
    """Write rows under the fixed header with 9-significant-digit floats."""
    lines = [CSV_HEADER]
    for r in rows:
        lines.append(
            ",".join(
                [
                    r.sweep_param,
                    _fmt(r.sweep_value),
                    r.approach,
                    _fmt(r.mean_power_w),
                    _fmt(r.feasibility),
                    _fmt(r.mc_outage),
                    _fmt(r.iot_margin_bpshz),
                    _fmt(r.dc_iters),
                    _fmt_failures(r.failures),
                ]
            )
        )
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


_EXPERIMENT_KEYS = (
    "sweep_param",
    "sweep_values",
    "trials",
    "seed",
    "approach",
    "baseline_mrt",
    "mc_samples",
)


def load_experiment_spec(path) -> ExperimentSpec:
    """Parse a sweep description file.

    The file uses the same key = value lines as the system config, with the
    experiment keys (sweep_param, sweep_values, trials, seed, approach,
    baseline_mrt, mc_samples) mixed in; everything else is passed through to
    the system config parser. sweep_values is a comma-separated list.
    """
    with open(path) as fh:
        text = fh.read()
    exp: dict = {}
    system_lines = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _EXPERIMENT_KEYS:
            system_lines.append(raw)
            continue
        if key in exp:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        exp[key] = val
    if "sweep_param" not in exp or "sweep_values" not in exp:
        raise ConfigError("experiment file must set sweep_param and sweep_values")
    scenario = parse_system_config("\n".join(system_lines))
    kwargs: dict = {
        "scenario": scenario,
        "sweep_param": exp["sweep_param"],
        "sweep_values": tuple(float(v) for v in exp["sweep_values"].split(",") if v.strip()),
    }
    if "trials" in exp:
        kwargs["trials"] = int(exp["trials"])
    if "seed" in exp:
        kwargs["seed"] = int(exp["seed"])
    if "approach" in exp:
        kwargs["approach"] = exp["approach"]
    if "mc_samples" in exp:
        kwargs["mc_samples"] = int(exp["mc_samples"])
    if "baseline_mrt" in exp:
        val = exp["baseline_mrt"].lower()
        if val not in ("true", "false", "on", "off", "1", "0"):
            raise ConfigError(f"baseline_mrt must be boolean, got {exp['baseline_mrt']!r}")
        kwargs["baseline_mrt"] = val in ("true", "on", "1")
    try:
        return ExperimentSpec(**kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
