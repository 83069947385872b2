"""Conic solve layer, rank-one recovery, and the end-to-end power
minimization pipeline."""

import math

import numpy as np
import pytest

from srbeam.channel import ChannelSet, CovarianceSet, SystemConfig, covariance_set_exact
from srbeam.robust import build_robust_data, iot_trace_lhs, lmi_block, sphere_radius
from srbeam.solver import (
    ConicProgram,
    InternalSolverError,
    LmiConstraint,
    MatrixTerm,
    NotRankOneError,
    Objective,
    RandomizationFailedError,
    ScalarInequality,
    SolverParams,
    assemble_dc_step,
    assemble_p3,
    complexity_estimate,
    conic_solve,
    dc_refine,
    extract_beamformer,
    gaussian_randomization,
    minimize_power,
    rank_gap,
)

from conftest import reference_config


@pytest.fixture(scope="module")
def ref_setup(ref_cfg, ref_channels):
    cov = covariance_set_exact(ref_channels, ref_cfg)
    data = build_robust_data(ref_channels, cov, ref_cfg)
    return ref_cfg, ref_channels, data


@pytest.fixture(scope="module")
def ref_p3(ref_setup):
    _, _, data = ref_setup
    prog = assemble_p3(data)
    sol = conic_solve(prog)
    assert sol.status == "optimal"
    return prog, sol


@pytest.fixture(scope="module")
def ref_solution(ref_cfg, ref_channels):
    return minimize_power(ref_channels, ref_cfg)


# ---------------------------------------------------------- conic examples ---


def test_scalar_lp_example():
    prog = ConicProgram(
        matrix_dims=(),
        n_scalars=1,
        lmis=(),
        inequalities=(ScalarInequality(const=-3.0, scalar_coeffs=((0, 1.0),)),),
        objective=Objective(scalar_coeffs=((0, 1.0),)),
    )
    sol = conic_solve(prog)
    assert sol.status == "optimal"
    assert sol.objective == pytest.approx(3.0, rel=1e-7)
    assert sol.scalars[0] == pytest.approx(3.0, rel=1e-7)


def test_identity_dominated_sdp_example():
    prog = ConicProgram(
        matrix_dims=(2,),
        n_scalars=0,
        lmis=(
            LmiConstraint(
                dim=2,
                const_diag=np.array([-1.0, -1.0]),
                matrix_terms=(MatrixTerm(var=0, left=np.eye(2), coef=1.0),),
            ),
        ),
        inequalities=(),
        objective=Objective(matrix_coeffs=((0, np.eye(2)),)),
    )
    sol = conic_solve(prog)
    assert sol.status == "optimal"
    assert sol.objective == pytest.approx(2.0, rel=1e-7)
    np.testing.assert_allclose(sol.matrices[0], np.eye(2), atol=1e-6)


def test_infeasible_example():
    # s >= 0 and -4 - s >= 0 cannot hold together
    prog = ConicProgram(
        matrix_dims=(),
        n_scalars=1,
        lmis=(),
        inequalities=(ScalarInequality(const=-4.0, scalar_coeffs=((0, -1.0),)),),
        objective=Objective(scalar_coeffs=((0, 1.0),)),
    )
    sol = conic_solve(prog)
    assert sol.status == "infeasible"
    assert sol.objective == math.inf


def test_explicit_backend_is_honored():
    prog = ConicProgram(
        matrix_dims=(),
        n_scalars=1,
        lmis=(),
        inequalities=(ScalarInequality(const=-1.0, scalar_coeffs=((0, 1.0),)),),
        objective=Objective(scalar_coeffs=((0, 1.0),)),
    )
    sol = conic_solve(prog, backend="scs")
    assert sol.status == "optimal"
    assert sol.backend == "scs"
    with pytest.raises(ValueError, match="unknown backend"):
        conic_solve(prog, backend="simplex")


def test_audit_fields_and_contract(ref_p3):
    _, sol = ref_p3
    res = sol.residuals
    for key in ("psd_violation", "ineq_violation", "dual_violation", "kkt_gap", "duals_missing"):
        assert key in res
    assert res["psd_violation"] <= 1e-8
    assert res["ineq_violation"] <= 1e-8
    assert not res["duals_missing"]
    scale = max(1.0, abs(sol.objective), res["dual_norm"])
    assert res["kkt_gap"] <= 1e-8 * scale


# --------------------------------------------------------------- assembly ---


def test_assemble_p3_structure(ref_setup):
    _, _, data = ref_setup
    prog = assemble_p3(data)
    assert prog.matrix_dims == (6, 6)
    assert prog.n_scalars == 2
    assert len(prog.lmis) == 2 and len(prog.inequalities) == 2
    for k, lmi in enumerate(prog.lmis):
        assert lmi.dim == 7
        assert lmi.scalar_diags[0][0] == k
        assert len(lmi.matrix_terms) == 2
    mu_scale = prog.metadata["mu_scale"]
    assert mu_scale.shape == (2,) and np.all(mu_scale > 0)
    # objective counts physical watts regardless of the row rescaling
    for _, g in prog.objective.matrix_coeffs:
        np.testing.assert_array_equal(g, np.eye(6))


def test_assemble_dc_step_objective(ref_setup):
    _, _, data = ref_setup
    params = SolverParams()
    rng = np.random.default_rng(0)
    w_prev = []
    for _ in range(2):
        x = rng.standard_normal((6, 6)) + 1j * rng.standard_normal((6, 6))
        w_prev.append(x @ x.conj().T)
    prog = assemble_dc_step(data, w_prev, params)
    assert prog.objective.quad_weights == (params.eta, params.eta)
    for k, g in prog.objective.matrix_coeffs:
        vals, vecs = np.linalg.eigh(w_prev[k])
        z = vecs[:, -1]
        want = (
            (1.0 + params.penalty_rho) * np.eye(6)
            - params.penalty_rho * np.outer(z, z.conj())
            - params.eta * w_prev[k]
        )
        np.testing.assert_allclose(g, 0.5 * (want + want.conj().T), atol=1e-10 * np.linalg.norm(want))


# ---------------------------------------------------- reference-case solve ---


def test_p3_backends_agree(ref_setup, ref_p3):
    _, _, data = ref_setup
    _, clarabel_sol = ref_p3
    scs_sol = conic_solve(assemble_p3(data), backend="scs")
    assert scs_sol.status == "optimal"
    assert scs_sol.objective == pytest.approx(clarabel_sol.objective, rel=1e-6)


def test_reference_case_full_pipeline(ref_setup, ref_solution):
    cfg, chs, data = ref_setup
    sol = ref_solution
    assert sol.status == "optimal"
    assert sol.w.shape == (6, 2)
    assert sol.total_power == pytest.approx(np.sum(np.abs(sol.w) ** 2), rel=1e-12)
    # frozen objective for the default scenario
    assert sol.total_power == pytest.approx(0.005361470993440231, rel=1e-6)
    assert sol.diagnostics["dc_iterations"] == 0
    assert not sol.diagnostics["randomization_used"]
    assert sol.diagnostics["covariance_provenance"] == "exact"
    assert sol.total_power == pytest.approx(sol.diagnostics["relaxation_power"], rel=1e-6)
    assert max(sol.diagnostics["rank_ratios"]) < 1e-6
    # lifted matrices collapse onto the returned columns
    for k in range(2):
        resid = np.linalg.norm(sol.w_mats[k] - np.outer(sol.w[:, k], sol.w[:, k].conj()))
        assert resid <= 1e-4 * max(1.0, np.linalg.norm(sol.w_mats[k]))
    # surrogate feasibility at the returned multipliers
    assert sol.mu.shape == (2,) and np.all(sol.mu >= 0)
    for k in range(2):
        lhs = iot_trace_lhs(sol.w_mats, data, k)
        scale = max(data.noise_power[k], np.linalg.norm(data.bs_user[k]) ** 2)
        assert lhs >= -1e-6 * scale
        block = lmi_block(sol.w_mats, sol.mu[k], data, k)
        vals = np.linalg.eigvalsh(block)
        assert vals[0] >= -1e-7 * max(1.0, abs(vals[-1]))
    assert sol.diagnostics["complexity_estimate"] == pytest.approx(
        complexity_estimate(6, 2), rel=1e-12
    )


def test_reference_case_is_deterministic(ref_cfg, ref_channels, ref_solution):
    again = minimize_power(ref_channels, ref_cfg)
    np.testing.assert_array_equal(ref_solution.w, again.w)
    assert ref_solution.total_power == again.total_power


def test_alpha_zero_is_infeasible(ref_cfg, ref_channels):
    cfg = ref_cfg.replace(alpha=0.0)
    sol = minimize_power(ref_channels, cfg)
    assert sol.status == "infeasible"
    assert sol.w is None
    assert sol.total_power == math.inf


# -------------------------------------------------- single-antenna oracle ---


def _single_antenna_instance(rate_cellular):
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
        rate_target_cellular=rate_cellular,
        rate_target_iot=0.3,
        outage_target=0.1,
    )
    chs = ChannelSet(
        bs_user=np.array([[10.0 + 0.0j]]),
        bs_device=np.array([[1.0 + 0.0j]]),
        device_user=np.array([[math.sqrt(0.5) / cfg.alpha + 0.0j]]),
    )
    return cfg, chs


@pytest.mark.parametrize("rate_cellular", [2.0, 9.0])
def test_single_antenna_matches_closed_form(rate_cellular):
    # with one antenna the lifted variable is a scalar power, and both
    # constraints reduce to explicit lower bounds: the worst channel on the
    # uncertainty disk for the outage side, a linear trace row for the
    # device side. The solver must land on the larger bound.
    cfg, chs = _single_antenna_instance(rate_cellular)
    c_var = 0.5
    f_abs = 10.0
    d = sphere_radius(cfg.outage_target, 1)
    gam_s = 2.0**rate_cellular - 1.0
    gam_c = 2.0 ** (cfg.symbol_ratio * cfg.rate_target_iot[0]) - 1.0
    p_outage = gam_s * cfg.noise_power[0] / (f_abs - d * math.sqrt(c_var)) ** 2
    p_iot = gam_c * cfg.noise_power[0] / (cfg.symbol_ratio * c_var)
    want = max(p_outage, p_iot)
    sol = minimize_power(chs, cfg)
    assert sol.status == "optimal"
    assert sol.total_power == pytest.approx(want, rel=1e-6)
    assert sol.diagnostics["dc_iterations"] == 0


# ------------------------------------------------------------ rank-one ops ---


def test_extract_beamformer_recovers_scaled_vector():
    rng = np.random.default_rng(1)
    u = rng.standard_normal(5) + 1j * rng.standard_normal(5)
    u /= np.linalg.norm(u)
    w = extract_beamformer(4.0 * np.outer(u, u.conj()))
    np.testing.assert_allclose(np.outer(w, w.conj()), 4.0 * np.outer(u, u.conj()), atol=1e-12)
    assert np.linalg.norm(w) == pytest.approx(2.0, rel=1e-12)


def test_extract_beamformer_rejects_spread_spectrum():
    with pytest.raises(NotRankOneError):
        extract_beamformer(np.eye(2))
    # tolerance is a knob: a mild secondary eigenvalue passes the default
    w_mat = np.diag([1.0, 1e-5]).astype(complex)
    extract_beamformer(w_mat)
    with pytest.raises(NotRankOneError):
        extract_beamformer(w_mat, tol=1e-6)


def test_rank_gap_values():
    assert rank_gap([np.diag([3.0, 0.0])]) == pytest.approx(0.0, abs=1e-15)
    assert rank_gap([np.diag([3.0, 1.0, 0.5])]) == pytest.approx(1.5, rel=1e-12)
    assert rank_gap([np.diag([2.0, 0.0]), np.diag([1.0, 0.25])]) == pytest.approx(0.25)


def test_dc_refine_accepts_rank_one_start(ref_setup, ref_solution):
    _, _, data = ref_setup
    res = dc_refine(ref_solution.w_mats, ref_solution.mu, data)
    assert res.iterations == 0
    assert res.converged
    np.testing.assert_array_equal(res.w_mats[0], ref_solution.w_mats[0])


def test_dc_refine_pulls_perturbed_start_back_to_rank_one(ref_setup, ref_p3):
    # inflate the relaxation solution and mix in a rank-two bump; the
    # penalized refinement has to walk back to a rank-one point without
    # leaving the feasible set
    _, _, data = ref_setup
    prog, sol = ref_p3
    mu_phys = sol.scalars / prog.metadata["mu_scale"]
    rng = np.random.default_rng(11)
    q = rng.standard_normal(6) + 1j * rng.standard_normal(6)
    q /= np.linalg.norm(q)
    s = 1.2
    w_init = [
        s * (1.5 * sol.matrices[0] + 0.1 * np.real(np.trace(sol.matrices[0])) * np.outer(q, q.conj())),
        s * 1.5 * sol.matrices[1],
    ]
    assert rank_gap(w_init) > 1e-6
    res = dc_refine(w_init, s * 1.5 * mu_phys, data)
    assert res.converged
    assert 1 <= res.iterations <= 50
    assert res.rank_gap_trace[-1] <= res.rank_gap_trace[0]
    pen = res.penalty_trace
    assert all(pen[i + 1] <= pen[i] + 1e-9 for i in range(len(pen) - 1))
    cols = [extract_beamformer(wm) for wm in res.w_mats]
    power = sum(np.linalg.norm(c) ** 2 for c in cols)
    assert power <= 1.02 * sol.objective or power == pytest.approx(sol.objective, rel=0.02)
    for k in range(2):
        lhs = iot_trace_lhs(res.w_mats, data, k)
        scale = max(data.noise_power[k], np.linalg.norm(data.bs_user[k]) ** 2)
        assert lhs >= -1e-8 * scale
        vals = np.linalg.eigvalsh(lmi_block(res.w_mats, res.mus[k], data, k))
        assert vals[0] >= -1e-7 * max(1.0, abs(vals[-1]))


def test_dc_refine_raises_on_unsatisfiable_rows(ref_cfg, ref_channels):
    # zero covariance kills the device rate row, so the first subproblem
    # cannot be feasible and the refinement must say so loudly
    cfg = ref_cfg.replace(alpha=0.0)
    cov = covariance_set_exact(ref_channels, cfg)
    data = build_robust_data(ref_channels, cov, cfg)
    w_init = [np.eye(6, dtype=complex) for _ in range(2)]
    with pytest.raises(InternalSolverError):
        dc_refine(w_init, np.zeros(2), data)


# ----------------------------------------------------------- randomization ---


def test_randomization_on_rank_one_input_matches_extraction(ref_setup, ref_solution):
    _, _, data = ref_setup
    params = SolverParams(randomization_count=20)
    w, mu, power, n_feasible = gaussian_randomization(ref_solution.w_mats, data, params, seed=0)
    assert n_feasible >= 1
    assert power == pytest.approx(ref_solution.total_power, rel=1e-6)
    assert w.shape == (6, 2)
    assert np.all(mu >= 0)


def test_randomization_raises_when_nothing_can_pass(ref_cfg, ref_channels):
    cfg = ref_cfg.replace(alpha=0.0)
    cov = covariance_set_exact(ref_channels, cfg)
    data = build_robust_data(ref_channels, cov, cfg)
    params = SolverParams(randomization_count=5)
    with pytest.raises(RandomizationFailedError):
        gaussian_randomization([np.eye(6, dtype=complex)] * 2, data, params, seed=0)


def _degenerate_instance():
    """Isotropic covariance with a single-spike direct link: the relaxation
    genuinely spreads power over the degenerate eigendirections, so the
    rank-one recovery has to go through randomization."""
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


def test_degenerate_instance_recovers_through_randomization():
    cfg, chs, cov = _degenerate_instance()
    sol = minimize_power(chs, cfg, cov=cov)
    assert sol.status == "optimal"
    assert sol.diagnostics["randomization_used"]
    assert sol.diagnostics["dc_iterations"] >= 1
    assert sol.diagnostics["randomization_feasible"] >= 1
    assert sol.w.shape == (4, 1)
    # deterministic pipeline: seeded draws on top of a deterministic solve
    assert sol.total_power == pytest.approx(0.20982514095446644, rel=1e-9)
    assert sol.total_power >= sol.diagnostics["relaxation_power"] * (1.0 - 1e-9)
    data = build_robust_data(chs, cov, cfg)
    lhs = iot_trace_lhs(sol.w_mats, data, 0)
    assert lhs >= -1e-12 * max(data.noise_power[0], np.linalg.norm(data.bs_user[0]) ** 2)
    vals = np.linalg.eigvalsh(lmi_block(sol.w_mats, sol.mu[0], data, 0))
    assert vals[0] >= -1e-9 * max(1.0, abs(vals[-1]))


# -------------------------------------------------------------- complexity ---


def test_complexity_estimate_formula():
    m, k = 6, 2
    n = k * m * m
    per_iter = k * ((m + 1) ** 3 + m**3 + 2) + n * k * ((m + 1) ** 2 + m**2 + 2) + n * n
    want = math.sqrt(2.0 * k * m + 3.0 * k) * n * per_iter * math.log(1e8)
    assert complexity_estimate(m, k) == pytest.approx(want, rel=1e-12)


def test_complexity_estimate_scalings():
    base = complexity_estimate(6, 2, eps_s=1e-4)
    assert complexity_estimate(6, 2, eps_s=1e-8) == pytest.approx(2.0 * base, rel=1e-12)
    assert complexity_estimate(6, 2, dc_iters=3) == pytest.approx(
        4.0 * complexity_estimate(6, 2), rel=1e-12
    )
    assert complexity_estimate(8, 2) > complexity_estimate(6, 2)
    assert complexity_estimate(6, 3) > complexity_estimate(6, 2)
