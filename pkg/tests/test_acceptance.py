"""End-to-end acceptance checks, one shipped guarantee per test.

The first three tests share a pool of solved instances: twenty seeded
realizations of the reference scenario, each solved at three outage
levels and audited by Monte Carlo. The trend tests run full sweeps with
fifty trials per grid point and dominate the runtime of the suite; sweep
rows are cached at module level so related checks reuse a single run.

Two checks assert trend targets the current solver does not reach
(test_07b_outage_tightening_price and
test_08b_moderate_reflection_beats_strong). They are left strict on
purpose; their failure messages carry the measured numbers.
"""

import math
import os

import numpy as np
import pytest

from conftest import reference_config, seeded_channels
from srbeam.channel import (
    ChannelSet,
    CovarianceSet,
    SystemConfig,
    build_clustered_channels,
    covariance_exact,
    covariance_set_doa,
)
from srbeam.experiments import ExperimentSpec, emit_csv, sweep_run
from srbeam.numerics import chi_square_inv_cdf, hermitian_sqrt, leading_eigpair
from srbeam.solver import minimize_power, rank_gap
from srbeam.srmodel import (
    check_feasibility,
    iot_device_rate,
    iot_sum_rate,
    outage_probability_mc,
)

POOL_SEED = 1301
POOL_SIZE = 20
OUTAGE_LEVELS = (0.01, 0.05, 0.10)
MC_SAMPLES = 100_000

TREND_TRIALS = 50
TREND_MC_SAMPLES = 20_000
WORKERS = max(1, min(4, os.cpu_count() or 1))

# Ties on constraint-flat sweep segments differ only by solver noise, a
# relative 1e-11 or so; genuine trend steps are tens of percent.
REL_TREND_SLACK = 1e-6


@pytest.fixture(scope="module")
def solved_pool():
    pool = {}
    for p_out in OUTAGE_LEVELS:
        cfg = reference_config(outage_target=p_out)
        entries = []
        for trial in range(POOL_SIZE):
            chs = seeded_channels(cfg, POOL_SEED, trial)
            sol = minimize_power(chs, cfg)
            assert sol.status == "optimal", (p_out, trial, sol.status)
            report = check_feasibility(
                chs,
                sol.w,
                cfg,
                n_samples=MC_SAMPLES,
                seed=np.random.SeedSequence((POOL_SEED, trial, 1)),
            )
            entries.append((cfg, sol, report))
        pool[p_out] = entries
    return pool


def test_01_monte_carlo_outage_safety(solved_pool):
    for p_out, entries in solved_pool.items():
        for trial, (cfg, sol, report) in enumerate(entries):
            assert np.all(report.outage_ok), (
                f"outage target {p_out} violated on trial {trial}: "
                f"estimates {report.outage_hat}, stderr {report.outage_stderr}"
            )


def test_02_device_rate_floor_met(solved_pool):
    for p_out, entries in solved_pool.items():
        for trial, (cfg, sol, report) in enumerate(entries):
            floors = np.asarray(cfg.rate_target_iot)
            assert np.all(report.iot_rate >= floors - 1e-6), (
                f"device rate floor missed at outage {p_out}, trial {trial}: "
                f"{report.iot_rate} vs {floors}"
            )


def _degenerate_instance():
    # isotropic covariance with a single-spike direct link: the relaxation
    # spreads power across tied eigendirections and recovery has to go
    # through the penalty loop and randomization
    cfg = SystemConfig.make(
        n_antennas=4,
        n_users=1,
        devices_per_user=1,
        alpha=0.5,
        symbol_ratio=16,
        noise_power=1.0,
        carrier_wavelength=0.33,
        antenna_gain_bs_db=0.0,
        antenna_gain_user_db=0.0,
        pathloss_exponent=2.0,
        user_distances=1.0,
        user_doas=0.0,
        angular_spreads=0.01,
        reflective_deficit_db=20.0,
        rate_target_cellular=1.0,
        rate_target_iot=0.3,
        outage_target=0.1,
    )
    chs = ChannelSet(
        bs_user=np.array([[40.0, 0.0, 0.0, 0.0]], dtype=complex),
        bs_device=np.zeros((1, 4), dtype=complex),
        device_user=np.zeros((1, 1), dtype=complex),
    )
    cov = CovarianceSet(
        matrices=np.stack([8.0 * np.eye(4, dtype=complex)]),
        provenance="exact",
        clip_mass=np.zeros(1),
    )
    return cfg, chs, cov


def _assert_penalty_nonincreasing(trace):
    for a, b in zip(trace, trace[1:]):
        assert b <= a + 1e-9, f"penalized objective rose: {trace}"


def test_03_rank_one_recovery(solved_pool):
    for entries in solved_pool.values():
        for cfg, sol, report in entries:
            assert rank_gap(sol.w_mats) <= 1e-6
            for k in range(cfg.n_users):
                col = sol.w[:, k]
                resid = np.linalg.norm(sol.w_mats[k] - np.outer(col, col.conj()))
                assert resid <= 1e-4 * max(1.0, np.linalg.norm(sol.w_mats[k]))
            trace = sol.diagnostics.get("penalty_trace")
            if trace is not None:
                _assert_penalty_nonincreasing(trace)

    cfg, chs, cov = _degenerate_instance()
    sol = minimize_power(chs, cfg, cov=cov)
    assert sol.status == "optimal"
    trace = sol.diagnostics["penalty_trace"]
    assert len(trace) >= 2
    _assert_penalty_nonincreasing(trace)
    assert rank_gap(sol.w_mats) <= 1e-6


def test_04_single_antenna_oracle_conservative():
    cfg = SystemConfig.make(
        n_antennas=1,
        n_users=1,
        devices_per_user=1,
        alpha=0.5,
        symbol_ratio=16,
        noise_power=1.0,
        carrier_wavelength=0.33,
        antenna_gain_bs_db=0.0,
        antenna_gain_user_db=0.0,
        pathloss_exponent=2.0,
        user_distances=1.0,
        user_doas=0.0,
        angular_spreads=0.01,
        reflective_deficit_db=20.0,
        rate_target_cellular=9.0,
        rate_target_iot=0.3,
        outage_target=0.1,
    )
    chs = ChannelSet(
        bs_user=np.array([[10.0 + 0.0j]]),
        bs_device=np.array([[1.0 + 0.0j]]),
        device_user=np.array([[math.sqrt(0.5) / cfg.alpha + 0.0j]]),
    )

    def oracle_feasible(power):
        w = np.array([[math.sqrt(power)]], dtype=complex)
        hat, _ = outage_probability_mc(
            chs, w, 0, cfg.rate_target_cellular[0], 1_000_000, 4242, cfg
        )
        return hat <= cfg.outage_target and (
            iot_sum_rate(chs, w, 0, cfg) >= cfg.rate_target_iot[0]
        )

    sol = minimize_power(chs, cfg)
    assert sol.status == "optimal"
    assert oracle_feasible(sol.total_power)

    # the true chance constraint is weaker than its sphere bound, so the
    # brute-force minimum sits at or below the solver's
    lo, hi = 1e-3 * sol.total_power, 2.0 * sol.total_power
    assert not oracle_feasible(lo)
    assert oracle_feasible(hi)
    while hi - lo > 1e-4 * hi:
        mid = 0.5 * (lo + hi)
        if oracle_feasible(mid):
            hi = mid
        else:
            lo = mid
    assert sol.total_power >= hi * (1.0 - 1e-4), (sol.total_power, hi)


def test_05_per_device_rates_telescope():
    cfg = reference_config()
    rng = np.random.default_rng(91)
    for trial in range(100):
        chs = seeded_channels(cfg, 9100, trial)
        w = 0.1 * (
            rng.standard_normal((cfg.n_antennas, cfg.n_users))
            + 1j * rng.standard_normal((cfg.n_antennas, cfg.n_users))
        )
        for k in range(cfg.n_users):
            stacked = sum(
                iot_device_rate(chs, w, k, m, cfg) for m in range(chs.n_devices)
            )
            assert stacked == pytest.approx(iot_sum_rate(chs, w, k, cfg), abs=1e-10)


def test_06_angle_approximation_fidelity():
    cfg = reference_config()
    chs = build_clustered_channels(cfg, placement="uniform_grid")
    approx = covariance_set_doa(cfg)
    for k in range(cfg.n_users):
        exact = covariance_exact(chs, cfg, k)
        rel = np.linalg.norm(exact - approx.matrices[k]) / np.linalg.norm(exact)
        assert rel <= 1e-3

    for trial in range(20):
        chs_t = seeded_channels(cfg, 606, trial)
        sol_csi = minimize_power(chs_t, cfg)
        sol_doa = minimize_power(chs_t, cfg, cov=approx)
        assert sol_csi.status == "optimal" and sol_doa.status == "optimal"
        gap = abs(sol_doa.total_power - sol_csi.total_power)
        assert gap <= 0.02 * sol_csi.total_power, (trial, gap, sol_csi.total_power)

    errors = []
    for spread in (0.02, 0.06, 0.10, 0.20):
        cfg_s = reference_config(angular_spreads=spread)
        chs_s = build_clustered_channels(cfg_s, placement="uniform_grid")
        approx_s = covariance_set_doa(cfg_s)
        worst = max(
            np.linalg.norm(covariance_exact(chs_s, cfg_s, k) - approx_s.matrices[k])
            / np.linalg.norm(covariance_exact(chs_s, cfg_s, k))
            for k in range(cfg_s.n_users)
        )
        errors.append(worst)
    assert all(b > a for a, b in zip(errors, errors[1:])), errors


_TREND_SPECS = {
    "cellular_rate": lambda: ExperimentSpec(
        scenario=reference_config(),
        sweep_param="cellular_rate",
        sweep_values=(2.0, 3.0, 4.0, 5.0),
        trials=TREND_TRIALS,
        seed=4001,
        mc_samples=TREND_MC_SAMPLES,
    ),
    "iot_rate": lambda: ExperimentSpec(
        scenario=reference_config(),
        sweep_param="iot_rate",
        sweep_values=(0.05, 0.10, 0.20, 0.30),
        trials=TREND_TRIALS,
        seed=4002,
        mc_samples=TREND_MC_SAMPLES,
    ),
    # outage tightening only moves the optimum where the outage side of the
    # problem binds, so this sweep runs at the highest cellular target
    "outage": lambda: ExperimentSpec(
        scenario=reference_config(rate_target_cellular=5.0),
        sweep_param="outage",
        sweep_values=(0.01, 0.05, 0.10),
        trials=TREND_TRIALS,
        seed=4003,
        mc_samples=TREND_MC_SAMPLES,
    ),
    "alpha": lambda: ExperimentSpec(
        scenario=reference_config(rate_target_cellular=4.0, rate_target_iot=0.2),
        sweep_param="alpha",
        sweep_values=(0.1, 0.4, 0.8),
        trials=TREND_TRIALS,
        seed=4004,
        mc_samples=TREND_MC_SAMPLES,
    ),
}

_SWEEP_CACHE: dict = {}


def _trend_rows(name):
    if name not in _SWEEP_CACHE:
        _SWEEP_CACHE[name] = sweep_run(_TREND_SPECS[name](), workers=WORKERS)
    return _SWEEP_CACHE[name]


def _mean_powers(name):
    rows = _trend_rows(name)
    # a stray Monte Carlo rejection must not silently thin the averages
    assert all(r.feasibility >= 0.98 for r in rows), [
        (r.sweep_value, r.feasibility, r.failures) for r in rows
    ]
    return [r.mean_power_w for r in rows]


def _assert_trend(values, direction, label):
    for a, b in zip(values, values[1:]):
        if direction == "up":
            assert b >= a * (1.0 - REL_TREND_SLACK), (label, values)
        else:
            assert b <= a * (1.0 + REL_TREND_SLACK), (label, values)


def test_07a_mean_power_trends_monotone():
    _assert_trend(_mean_powers("cellular_rate"), "up", "cellular rate target")
    _assert_trend(_mean_powers("iot_rate"), "up", "device rate target")
    _assert_trend(_mean_powers("outage"), "down", "outage tolerance")


def test_07b_outage_tightening_price():
    powers = _mean_powers("outage")
    tight, loose = powers[0], powers[-1]
    assert tight >= 2.0 * loose, (
        f"tightening outage 10% -> 1% raised mean power only "
        f"{tight / loose:.3f}x ({loose:.6g} W -> {tight:.6g} W)"
    )


def test_08a_moderate_reflection_beats_weak():
    rows = _trend_rows("alpha")
    power = {r.sweep_value: r.mean_power_w for r in rows}
    assert power[0.4] < power[0.1], power


def test_08b_moderate_reflection_beats_strong():
    rows = _trend_rows("alpha")
    power = {r.sweep_value: r.mean_power_w for r in rows}
    assert power[0.4] < power[0.8], (
        f"mean power kept falling past the moderate reflection setting: "
        f"{power}"
    )


def test_09_optimized_dominates_matched_filter():
    spec = ExperimentSpec(
        scenario=reference_config(),
        sweep_param="power_grid",
        sweep_values=(0.003, 0.01, 0.03, 0.1, 0.3, 0.5),
        trials=TREND_TRIALS,
        seed=1203,
        mc_samples=TREND_MC_SAMPLES,
        baseline_mrt=True,
    )
    rows = sweep_run(spec, workers=WORKERS)
    assert len(rows) == 2 * len(spec.sweep_values)
    for i in range(0, len(rows), 2):
        prop, base = rows[i], rows[i + 1]
        assert (prop.approach, base.approach) == ("csi", "mrt")
        assert prop.sweep_value == base.sweep_value
        slack = 2.0 * math.hypot(prop.feasibility_stderr, base.feasibility_stderr)
        assert prop.feasibility >= base.feasibility - slack, (
            f"budget {prop.sweep_value} W: optimized {prop.feasibility} "
            f"vs matched filter {base.feasibility}"
        )


def test_10_numeric_kernels_match_references():
    from scipy.special import gammainc

    p_grid = (0.01, 0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95, 0.99, 0.999)
    for p in p_grid:
        assert abs(chi_square_inv_cdf(p, 2) - (-2.0 * math.log1p(-p))) <= 1e-9
        for dof in (2, 4, 12, 24):
            q = chi_square_inv_cdf(p, dof)
            assert abs(gammainc(dof / 2.0, q / 2.0) - p) <= 1e-9

    rng = np.random.default_rng(77)
    for _ in range(100):
        a = rng.standard_normal((6, 6)) + 1j * rng.standard_normal((6, 6))
        c = a @ a.conj().T / 6.0
        root = hermitian_sqrt(c)
        assert np.linalg.norm(root @ root - c) <= 1e-10 * max(1.0, np.linalg.norm(c))
        val, vec = leading_eigpair(c)
        assert np.linalg.norm(c @ vec - val * vec) <= 1e-9 * max(1.0, abs(val))
        assert abs(np.linalg.norm(vec) - 1.0) <= 1e-12


def test_11_sweep_csv_byte_determinism(tmp_path):
    def spec():
        return ExperimentSpec(
            scenario=reference_config(),
            sweep_param="alpha",
            sweep_values=(0.4, 0.6),
            trials=2,
            seed=11,
            mc_samples=5_000,
        )

    paths = [tmp_path / f"run{i}.csv" for i in range(3)]
    emit_csv(sweep_run(spec()), paths[0])
    emit_csv(sweep_run(spec()), paths[1])
    emit_csv(sweep_run(spec(), workers=2), paths[2])
    first = paths[0].read_bytes()
    assert first == paths[1].read_bytes()
    assert first == paths[2].read_bytes()
