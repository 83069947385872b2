"""Conic formulation and solution of the robust power minimization.

The pipeline follows the relax-then-recover recipe:

1. assemble the lifted semidefinite program (one LMI and one affine
   inequality per user, lifted matrices W_k and sphere multipliers mu_k),
2. solve it through a conic backend,
3. if every W_k is (numerically) rank one, extract beamformers directly,
4. otherwise run the penalized difference-of-convex refinement, which
   rewards the dominant eigendirection while keeping all constraints,
5. if that stalls above tolerance, fall back to Gaussian randomization
   with a deterministic first candidate and a power-scaling line search.

``conic_solve`` re-derives primal residuals and a complementarity gap from
the returned primal/dual values instead of trusting backend labels, so the
reported status reflects what the numbers actually show.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import cvxpy as cp

from .channel import ChannelSet, CovarianceSet, SystemConfig, covariance_set_exact
from .numerics import hermitian_sqrt, leading_eigpair
from .robust import (
    RobustProblemData,
    build_robust_data,
    iot_trace_coeffs,
    iot_trace_lhs,
    lmi_block,
    lmi_map,
)

__all__ = [
    "SolverParams",
    "MatrixTerm",
    "LmiConstraint",
    "ScalarInequality",
    "Objective",
    "ConicProgram",
    "ConicSolution",
    "conic_solve",
    "assemble_p3",
    "assemble_dc_step",
    "DcRefineResult",
    "dc_refine",
    "rank_gap",
    "NotRankOneError",
    "RandomizationFailedError",
    "InternalSolverError",
    "extract_beamformer",
    "gaussian_randomization",
    "BeamformingSolution",
    "minimize_power",
    "complexity_estimate",
]


class NotRankOneError(RuntimeError):
    """Raised when a lifted matrix cannot be collapsed to one beamformer."""


class RandomizationFailedError(RuntimeError):
    """Raised when no randomized candidate satisfies the surrogate constraints."""


class InternalSolverError(RuntimeError):
    """Raised when a subproblem that must be feasible by construction is not."""


@dataclass(frozen=True)
class SolverParams:
    """Tunable knobs of the solve pipeline with working defaults."""

    eps_s: float = 1e-8
    penalty_rho: float = 10.0
    eta: float = 1.0
    rank_gap_tol: float = 1e-6
    rank_ratio_tol: float = 1e-6
    max_dc_iters: int = 50
    randomization_count: int = 1000
    rank1_extract_tol: float = 1e-4
    backend: str = "clarabel"


@dataclass(frozen=True)
class MatrixTerm:
    """One congruence term coef * (left @ W[var] @ left^H) inside an LMI."""

    var: int
    left: np.ndarray
    coef: float


@dataclass(frozen=True)
class LmiConstraint:
    """const_diag + sum(matrix terms) + sum_j s_j * diag(scalar diag) >= 0 (PSD)."""

    dim: int
    const_diag: np.ndarray
    matrix_terms: tuple[MatrixTerm, ...]
    scalar_diags: tuple[tuple[int, np.ndarray], ...] = ()


@dataclass(frozen=True)
class ScalarInequality:
    """const + sum_i Re tr(G_i^H W_i) + sum_j a_j s_j >= 0."""

    const: float
    matrix_coeffs: tuple[tuple[int, np.ndarray], ...] = ()
    scalar_coeffs: tuple[tuple[int, float], ...] = ()


@dataclass(frozen=True)
class Objective:
    """Minimize sum_i Re tr(C_i^H W_i) + sum_j c_j s_j + sum_i (q_i/2) ||W_i||_F^2."""

    matrix_coeffs: tuple[tuple[int, np.ndarray], ...] = ()
    scalar_coeffs: tuple[tuple[int, float], ...] = ()
    quad_weights: tuple[float, ...] = ()


@dataclass(frozen=True)
class ConicProgram:
    """Backend-independent description of one Hermitian SDP.

    Matrix variables are Hermitian PSD with dimensions ``matrix_dims``;
    scalar variables are nonnegative. ``metadata`` carries assembly-side
    bookkeeping (for example multiplier rescaling factors) that callers
    need to interpret the solution.
    """

    matrix_dims: tuple[int, ...]
    n_scalars: int
    lmis: tuple[LmiConstraint, ...]
    inequalities: tuple[ScalarInequality, ...]
    objective: Objective
    metadata: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ConicSolution:
    status: str
    matrices: list[np.ndarray] | None
    scalars: np.ndarray | None
    objective: float
    residuals: dict
    backend: str


def _lmi_value(lmi: LmiConstraint, mats, scalars) -> np.ndarray:
    block = np.diag(lmi.const_diag.astype(complex))
    for term in lmi.matrix_terms:
        block = block + term.coef * (term.left @ mats[term.var] @ term.left.conj().T)
    for idx, diag in lmi.scalar_diags:
        block = block + np.diag(scalars[idx] * diag).astype(complex)
    return 0.5 * (block + block.conj().T)


def _ineq_value(ineq: ScalarInequality, mats, scalars) -> float:
    val = ineq.const
    for var, g in ineq.matrix_coeffs:
        val += float(np.real(np.trace(g.conj().T @ mats[var])))
    for idx, a in ineq.scalar_coeffs:
        val += a * scalars[idx]
    return val


def _lmi_scale(lmi: LmiConstraint) -> float:
    s = float(np.abs(lmi.const_diag).max()) if lmi.const_diag.size else 0.0
    for term in lmi.matrix_terms:
        s = max(s, abs(term.coef) * float(np.linalg.norm(term.left, 2)) ** 2)
    for _, diag in lmi.scalar_diags:
        s = max(s, float(np.abs(diag).max()))
    return max(1.0, s)


def _ineq_scale(ineq: ScalarInequality) -> float:
    s = abs(ineq.const)
    for _, g in ineq.matrix_coeffs:
        s = max(s, float(np.linalg.norm(g, 2)))
    for _, a in ineq.scalar_coeffs:
        s = max(s, abs(a))
    return max(1.0, s)


def _backend_options(backend: str, params: SolverParams) -> tuple[str, dict]:
    if backend == "clarabel":
        return cp.CLARABEL, {
            "tol_gap_abs": 0.01 * params.eps_s,
            "tol_gap_rel": 0.01 * params.eps_s,
            "tol_feas": 0.1 * params.eps_s,
        }
    if backend == "scs":
        return cp.SCS, {"eps_abs": 0.1 * params.eps_s, "eps_rel": 0.1 * params.eps_s, "max_iters": 200_000}
    if backend == "cvxopt":
        return cp.CVXOPT, {}
    raise ValueError(f"unknown backend {backend!r}")


def conic_solve(prog: ConicProgram, params: SolverParams | None = None, backend: str | None = None) -> ConicSolution:
    """Solve a ConicProgram and audit the reported solution.

    The returned status is one of ``optimal``, ``infeasible``, or
    ``inaccurate``. ``optimal`` means the audit passed: every PSD block and
    scalar inequality holds within 1e-8 of its data scale and the
    complementarity gap assembled from the backend duals is below
    eps_s times max(1, |objective|, dual certificate norm) -- the last term
    because the gap is a sum of products with the duals, so its resolution
    floor grows with them. A backend label of optimal with a failed audit,
    or any fuzzier backend outcome, is reported as ``inaccurate`` together
    with the measured residuals, never silently passed through.

    Backends differ in which side of the primal-dual pair they polish, so
    on an audit failure the other engine is tried (fixed order, hence still
    deterministic) and the first audited pass wins; if none passes, the
    attempt with the smallest complementarity gap is returned as
    ``inaccurate``.
    """
    params = params or SolverParams()
    primary = backend or params.backend
    ladder = [primary] + [b for b in ("clarabel", "scs") if b != primary]
    best = None
    for rung in ladder:
        sol = _conic_solve_single(prog, params, rung)
        if sol.status in ("optimal", "infeasible"):
            return sol
        if best is None or _gap_key(sol) < _gap_key(best):
            best = sol
    return best


def _gap_key(sol: ConicSolution) -> float:
    gap = sol.residuals.get("kkt_gap", math.inf)
    if gap is None or math.isnan(gap):
        return math.inf
    return gap


def _conic_solve_single(prog: ConicProgram, params: SolverParams, backend: str) -> ConicSolution:
    k_mats = len(prog.matrix_dims)

    wvars = [cp.Variable((d, d), hermitian=True) for d in prog.matrix_dims]
    svar = cp.Variable(prog.n_scalars, nonneg=True) if prog.n_scalars else None

    constraints = []
    psd_var_cons = []
    for wv in wvars:
        c = wv >> 0
        psd_var_cons.append(c)
        constraints.append(c)
    lmi_cons = []
    for lmi in prog.lmis:
        expr = cp.Constant(np.diag(lmi.const_diag).astype(complex))
        for term in lmi.matrix_terms:
            expr = expr + term.coef * (term.left @ wvars[term.var] @ term.left.conj().T)
        for idx, diag in lmi.scalar_diags:
            expr = expr + cp.multiply(svar[idx], cp.Constant(np.diag(diag).astype(complex)))
        c = (expr + expr.H) / 2 >> 0
        lmi_cons.append(c)
        constraints.append(c)
    ineq_cons = []
    for ineq in prog.inequalities:
        expr = cp.Constant(ineq.const)
        for var, g in ineq.matrix_coeffs:
            expr = expr + cp.real(cp.trace(g.conj().T @ wvars[var]))
        for idx, a in ineq.scalar_coeffs:
            expr = expr + a * svar[idx]
        c = expr >= 0
        ineq_cons.append(c)
        constraints.append(c)

    obj = cp.Constant(0.0)
    for var, g in prog.objective.matrix_coeffs:
        obj = obj + cp.real(cp.trace(g.conj().T @ wvars[var]))
    for idx, a in prog.objective.scalar_coeffs:
        obj = obj + a * svar[idx]
    quad = prog.objective.quad_weights or tuple(0.0 for _ in range(k_mats))
    for i, q in enumerate(quad):
        if q:
            obj = obj + (q / 2.0) * cp.sum_squares(wvars[i])

    problem = cp.Problem(cp.Minimize(obj), constraints)
    solver_name, options = _backend_options(backend, params)
    try:
        problem.solve(solver=solver_name, **options)
    except cp.SolverError as exc:
        return ConicSolution(
            status="inaccurate", matrices=None, scalars=None, objective=float("nan"),
            residuals={"backend_status": f"solver_error: {exc}"}, backend=backend,
        )

    backend_status = problem.status
    if backend_status in (cp.INFEASIBLE,):
        return ConicSolution(
            status="infeasible", matrices=None, scalars=None, objective=float("inf"),
            residuals={"backend_status": backend_status}, backend=backend,
        )
    if problem.value is None or any(wv.value is None for wv in wvars):
        return ConicSolution(
            status="inaccurate", matrices=None, scalars=None, objective=float("nan"),
            residuals={"backend_status": backend_status}, backend=backend,
        )

    mats = [0.5 * (wv.value + wv.value.conj().T) for wv in wvars]
    scalars = np.atleast_1d(svar.value) if svar is not None else np.zeros(0)
    scalars = np.maximum(scalars, 0.0)

    residuals = _audit(prog, mats, scalars, lmi_cons, ineq_cons, quad)
    residuals["backend_status"] = backend_status
    obj_val = float(problem.value)

    # the gap is compared at the scale of the certificate that produced it:
    # dual norms enter every complementarity product, so an absolute bar
    # would reject well-converged solves whenever the duals are large
    gap_scale = max(1.0, abs(obj_val), residuals.get("dual_norm", 0.0))
    contract_ok = (
        residuals["psd_violation"] <= 1e-8
        and residuals["ineq_violation"] <= 1e-8
        and (math.isnan(residuals["kkt_gap"]) is False and residuals["kkt_gap"] <= params.eps_s * gap_scale)
    )
    if not contract_ok and residuals["duals_missing"]:
        # no duals to audit with; fall back to primal checks plus the backend's own verdict
        contract_ok = (
            backend_status == cp.OPTIMAL
            and residuals["psd_violation"] <= 1e-8
            and residuals["ineq_violation"] <= 1e-8
        )
    status = "optimal" if contract_ok else "inaccurate"
    return ConicSolution(
        status=status, matrices=mats, scalars=scalars, objective=obj_val,
        residuals=residuals, backend=backend,
    )


def _min_eig(mat: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(0.5 * (mat + mat.conj().T))[0])


def _audit(prog, mats, scalars, lmi_cons, ineq_cons, quad) -> dict:
    """Scaled primal violations plus a dual-based complementarity gap.

    The gap sums <Z, F(x)> over LMIs, y * g(x) over inequalities, and
    <S_i, W_i> / r_j * s_j over the variable cones, where S_i and r_j are
    the stationarity residuals of the Lagrangian. For a linear objective
    this total equals the primal-dual gap; with the quadratic proximal term
    it is the standard epsilon-KKT measure. Missing duals are flagged, not
    guessed.
    """
    psd_viol = 0.0
    for i, w in enumerate(mats):
        psd_viol = max(psd_viol, -_min_eig(w) / max(1.0, float(np.linalg.norm(w, 2))))
    lmi_values = []
    for lmi, _ in zip(prog.lmis, lmi_cons):
        val = _lmi_value(lmi, mats, scalars)
        lmi_values.append(val)
        psd_viol = max(psd_viol, -_min_eig(val) / _lmi_scale(lmi))
    ineq_viol = 0.0
    ineq_values = []
    for ineq, _ in zip(prog.inequalities, ineq_cons):
        val = _ineq_value(ineq, mats, scalars)
        ineq_values.append(val)
        ineq_viol = max(ineq_viol, -val / _ineq_scale(ineq))

    duals_missing = any(c.dual_value is None for c in lmi_cons) or any(
        c.dual_value is None for c in ineq_cons
    )
    if duals_missing:
        return {
            "psd_violation": psd_viol,
            "ineq_violation": ineq_viol,
            "dual_violation": float("nan"),
            "kkt_gap": float("nan"),
            "duals_missing": True,
        }

    # cvxpy reports duals of complex Hermitian PSD constraints at half scale
    # (real-embedding convention, same for every backend); undo that here so
    # stationarity reads C - sum A*(Z) = S with <A,B> = Re tr(A^H B).
    zs = [np.asarray(c.dual_value) + np.asarray(c.dual_value).conj().T for c in lmi_cons]
    ys = [max(float(np.real(c.dual_value)), 0.0) for c in ineq_cons]

    k_mats = len(mats)
    obj_mats = {i: np.zeros_like(mats[i]) for i in range(k_mats)}
    for var, g in prog.objective.matrix_coeffs:
        obj_mats[var] = obj_mats[var] + g
    stationarity = []
    for i in range(k_mats):
        s_i = obj_mats[i] + quad[i] * mats[i]
        for lmi, z in zip(prog.lmis, zs):
            for term in lmi.matrix_terms:
                if term.var == i:
                    s_i = s_i - term.coef * (term.left.conj().T @ z @ term.left)
        for ineq, y in zip(prog.inequalities, ys):
            for var, g in ineq.matrix_coeffs:
                if var == i:
                    s_i = s_i - y * g
        stationarity.append(0.5 * (s_i + s_i.conj().T))

    obj_scalars = np.zeros(max(len(scalars), 1))
    for idx, a in prog.objective.scalar_coeffs:
        obj_scalars[idx] += a
    r = obj_scalars[: len(scalars)].copy()
    for j in range(len(scalars)):
        for lmi, z in zip(prog.lmis, zs):
            for idx, diag in lmi.scalar_diags:
                if idx == j:
                    r[j] -= float(np.real(np.sum(np.diag(z) * diag)))
        for ineq, y in zip(prog.inequalities, ys):
            for idx, a in ineq.scalar_coeffs:
                if idx == j:
                    r[j] -= y * a

    dual_viol = 0.0
    for s_i in stationarity:
        dual_viol = max(dual_viol, -_min_eig(s_i))
    if len(r):
        dual_viol = max(dual_viol, float(max(0.0, -r.min())))

    # complementarity terms are nonnegative for exactly feasible duals;
    # negative excursions are recovery noise, so they are clipped and the
    # cone-infeasible part of the stationarity residual is charged back via
    # the repair term delta_i * tr(W_i) (the perturbation that would make
    # the dual certificate exactly feasible)
    gap = 0.0
    for z, val in zip(zs, lmi_values):
        gap += max(0.0, float(np.real(np.trace(z.conj().T @ val))))
    for y, val in zip(ys, ineq_values):
        gap += max(0.0, y * val)
    for s_i, w in zip(stationarity, mats):
        gap += max(0.0, float(np.real(np.trace(s_i.conj().T @ w))))
        gap += max(0.0, -_min_eig(s_i)) * float(np.real(np.trace(w)))
    for j in range(len(scalars)):
        gap += max(0.0, r[j] * scalars[j]) + max(0.0, -r[j]) * scalars[j]

    dual_norm = sum(float(np.linalg.norm(z)) for z in zs) + sum(ys)
    dual_norm += sum(float(np.linalg.norm(s_i)) for s_i in stationarity)
    dual_norm += float(np.abs(r).sum()) if len(r) else 0.0

    return {
        "psd_violation": psd_viol,
        "ineq_violation": ineq_viol,
        "dual_violation": dual_viol,
        "kkt_gap": gap,
        "dual_norm": dual_norm,
        "duals_missing": False,
    }


def _lmi_row_scale(data: RobustProblemData, k: int) -> float:
    top = float(np.linalg.eigvalsh(data.cov[k])[-1])
    return 1.0 / max(top, float(np.linalg.norm(data.bs_user[k]) ** 2), float(data.noise_power[k]))


def _ineq_row_scale(mats, const: float) -> float:
    s = abs(const)
    for g in mats:
        s = max(s, float(np.linalg.norm(g, 2)))
    return 1.0 / max(s, 1e-300)


def _constraint_rows(data: RobustProblemData) -> tuple[list[LmiConstraint], list[ScalarInequality], np.ndarray]:
    """Shared constraint assembly for the relaxation and every DC step.

    Each user's LMI and inequality are rescaled to O(1) data so the interior
    point backend sees a well conditioned problem; the physical optimum is
    unchanged because each constraint is scaled uniformly. The multiplier
    variables absorb their row's factor, recorded in ``mu_scale`` so callers
    can map them back to physical units (mu_phys = mu_solved / mu_scale).
    """
    k_users, m = data.n_users, data.n_antennas
    lmis, ineqs = [], []
    mu_scale = np.zeros(k_users)
    for k in range(k_users):
        lm = lmi_map(data, k)
        u = _lmi_row_scale(data, k)
        mu_scale[k] = u
        left = lm.stack * math.sqrt(u)
        terms = tuple(
            MatrixTerm(var=i, left=left, coef=float(lm.coeffs[i])) for i in range(k_users)
        )
        lmis.append(
            LmiConstraint(
                dim=m + 1,
                const_diag=lm.const_diag * u,
                matrix_terms=terms,
                scalar_diags=((k, lm.mu_diag),),
            )
        )
        gmats, const = iot_trace_coeffs(data, k)
        uq = _ineq_row_scale(gmats, const)
        ineqs.append(
            ScalarInequality(
                const=const * uq,
                matrix_coeffs=tuple((i, gmats[i] * uq) for i in range(k_users)),
            )
        )
    return lmis, ineqs, mu_scale


def assemble_p3(data: RobustProblemData) -> ConicProgram:
    """Lifted relaxation: minimize total transmit power subject to the
    outage LMIs and the device sum-rate inequalities."""
    k_users, m = data.n_users, data.n_antennas
    lmis, ineqs, mu_scale = _constraint_rows(data)
    eye = np.eye(m)
    objective = Objective(matrix_coeffs=tuple((i, eye.copy()) for i in range(k_users)))
    return ConicProgram(
        matrix_dims=tuple(m for _ in range(k_users)),
        n_scalars=k_users,
        lmis=tuple(lmis),
        inequalities=tuple(ineqs),
        objective=objective,
        metadata={"mu_scale": mu_scale},
    )


def assemble_dc_step(data: RobustProblemData, w_prev, params: SolverParams) -> ConicProgram:
    """One convexified step of the penalized rank-one pursuit.

    The exact penalty trace(W) - lambda_max(W) is linearized at the previous
    iterate's leading eigenvector z, and a proximal quadratic keeps the step
    close to the previous matrices:

        minimize sum_k [ (1+rho) tr(W_k) - rho z_k^H W_k z_k
                         - eta Re tr(W_prev_k^H W_k) + (eta/2) ||W_k||_F^2 ]
    """
    k_users, m = data.n_users, data.n_antennas
    lmis, ineqs, mu_scale = _constraint_rows(data)
    coeffs = []
    for k in range(k_users):
        _, z = leading_eigpair(w_prev[k])
        g = (1.0 + params.penalty_rho) * np.eye(m) - params.penalty_rho * np.outer(z, z.conj())
        g = g - params.eta * w_prev[k]
        coeffs.append((k, 0.5 * (g + g.conj().T)))
    objective = Objective(
        matrix_coeffs=tuple(coeffs),
        quad_weights=tuple(params.eta for _ in range(k_users)),
    )
    return ConicProgram(
        matrix_dims=tuple(m for _ in range(k_users)),
        n_scalars=k_users,
        lmis=tuple(lmis),
        inequalities=tuple(ineqs),
        objective=objective,
        metadata={"mu_scale": mu_scale},
    )


def rank_gap(w_mats) -> float:
    """Sum over users of nuclear norm minus spectral norm (PSD: trace - top eig)."""
    total = 0.0
    for w in w_mats:
        vals = np.linalg.eigvalsh(0.5 * (w + w.conj().T))
        total += float(np.sum(np.abs(vals)) - np.max(np.abs(vals)))
    return total


def _penalized_objective(w_mats, rho: float) -> float:
    return sum(float(np.real(np.trace(w))) for w in w_mats) + rho * rank_gap(w_mats)


@dataclass(frozen=True)
class DcRefineResult:
    w_mats: list[np.ndarray]
    mus: np.ndarray
    iterations: int
    converged: bool
    rank_gap_trace: list[float]
    penalty_trace: list[float]


def dc_refine(w_init, mu_init, data: RobustProblemData, params: SolverParams | None = None) -> DcRefineResult:
    """Drive the lifted matrices toward rank one without losing feasibility.

    Stops when the rank gap reaches ``rank_gap_tol``, when the step budget is
    exhausted, or when two consecutive steps fail to improve the best gap
    (the linearized penalty has genuine non-rank-one critical points, and
    spinning on one would never terminate). The best-gap iterate is
    returned; every iterate is feasible for the original constraints, so
    early exit is safe.
    """
    params = params or SolverParams()
    current = [w.copy() for w in w_init]
    current_mu = np.asarray(mu_init, dtype=float).copy()
    best = current
    best_mu = current_mu
    best_gap = rank_gap(current)
    gap_trace = [best_gap]
    pen_trace = [_penalized_objective(current, params.penalty_rho)]
    iterations = 0
    stalled = 0

    while best_gap > params.rank_gap_tol and iterations < params.max_dc_iters:
        prog = assemble_dc_step(data, current, params)
        sol = conic_solve(prog, params)
        if sol.status == "infeasible":
            raise InternalSolverError(
                "DC subproblem reported infeasible although the previous iterate satisfies it"
            )
        if sol.matrices is None:
            raise InternalSolverError(f"DC subproblem failed: {sol.residuals.get('backend_status')}")
        iterations += 1
        current = sol.matrices
        current_mu = sol.scalars / prog.metadata["mu_scale"]
        gap = rank_gap(current)
        gap_trace.append(gap)
        pen_trace.append(_penalized_objective(current, params.penalty_rho))
        if gap < best_gap - 1e-12:
            best, best_mu, best_gap = current, current_mu, gap
            stalled = 0
        else:
            stalled += 1
            if stalled >= 2:
                break

    return DcRefineResult(
        w_mats=[w.copy() for w in best],
        mus=np.asarray(best_mu, dtype=float),
        iterations=iterations,
        converged=best_gap <= params.rank_gap_tol,
        rank_gap_trace=gap_trace,
        penalty_trace=pen_trace,
    )


def extract_beamformer(w_mat: np.ndarray, tol: float = 1e-4) -> np.ndarray:
    """Collapse a (numerically) rank-one lifted matrix to its beamformer.

    The residual ||W - w w^H||_F must not exceed tol * max(1, ||W||_F).
    """
    lam, vec = leading_eigpair(w_mat)
    w = math.sqrt(max(lam, 0.0)) * vec
    residual = float(np.linalg.norm(w_mat - np.outer(w, w.conj())))
    if residual > tol * max(1.0, float(np.linalg.norm(w_mat))):
        raise NotRankOneError(f"extraction residual {residual:.3e} exceeds tolerance")
    return w


def _best_mu_for_lmi(base: np.ndarray, mu_diag: np.ndarray, d2: float) -> tuple[float, float]:
    """Maximize the minimum eigenvalue of base + mu * diag(mu_diag) over mu >= 0.

    The minimum eigenvalue is concave in mu, so a golden-section search on
    [0, mu_hi] finds the maximizer; mu_hi comes from the corner entry, which
    must stay nonnegative. Returns (best mu, best min eigenvalue).
    """
    corner = float(np.real(base[-1, -1]))
    if corner < 0.0:
        return 0.0, _min_eig(base)
    mu_hi = corner / d2 if d2 > 0 else 0.0

    def eig_at(mu: float) -> float:
        return _min_eig(base + np.diag(mu * mu_diag))

    lo, hi = 0.0, mu_hi
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    x1 = hi - invphi * (hi - lo)
    x2 = lo + invphi * (hi - lo)
    f1, f2 = eig_at(x1), eig_at(x2)
    for _ in range(60):
        if f1 < f2:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + invphi * (hi - lo)
            f2 = eig_at(x2)
        else:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - invphi * (hi - lo)
            f1 = eig_at(x1)
    best_mu = 0.5 * (lo + hi)
    return best_mu, eig_at(best_mu)


def _candidate_feasible(w_cols, data: RobustProblemData) -> tuple[bool, np.ndarray]:
    """Surrogate feasibility of a rank-one candidate set: the sum-rate rows
    and, per user, existence of an admissible sphere multiplier."""
    k_users = data.n_users
    w_mats = [np.outer(w_cols[:, k], w_cols[:, k].conj()) for k in range(k_users)]
    mus = np.zeros(k_users)
    for k in range(k_users):
        # tight threshold: the trace row is evaluated to machine precision and
        # a loose cutoff here would leak straight into the delivered sum rate
        scale = max(float(data.noise_power[k]), float(np.linalg.norm(data.bs_user[k]) ** 2))
        if iot_trace_lhs(w_mats, data, k) < -1e-12 * scale:
            return False, mus
    d2 = data.radius**2
    for k in range(k_users):
        lm = lmi_map(data, k)
        u = _lmi_row_scale(data, k)
        base = u * lmi_block(w_mats, 0.0, data, k)
        mu_diag = lm.mu_diag
        mu, emin = _best_mu_for_lmi(base, mu_diag, d2)
        block_scale = max(1.0, float(np.linalg.norm(base, 2)))
        if emin < -1e-9 * block_scale:
            return False, mus
        mus[k] = mu / u
    return True, mus


def gaussian_randomization(
    w_mats,
    data: RobustProblemData,
    params: SolverParams | None = None,
    seed=0,
) -> tuple[np.ndarray, np.ndarray, float, int]:
    """Recover feasible beamformers from non-rank-one lifted matrices.

    Candidate 0 is the deterministic leading-eigenpair extraction; the rest
    draw w_k = W_k^{1/2} xi with xi standard complex Gaussian. Each
    candidate may be scaled up by t in [1, 1e3] (feasibility is monotone in
    t, so bisection to relative tolerance 1e-6 finds the cheapest feasible
    scaling). Returns (beamformers, multipliers, total power, number of
    feasible candidates); raises RandomizationFailedError if none pass.
    """
    params = params or SolverParams()
    rng = np.random.default_rng(seed)
    k_users, m = data.n_users, data.n_antennas
    roots = [hermitian_sqrt(w) for w in w_mats]

    best_w = None
    best_mu = None
    best_power = math.inf
    n_feasible = 0

    def scaled_feasible(cols, t):
        ok, mus = _candidate_feasible(cols * math.sqrt(t), data)
        return ok, mus

    for cand in range(params.randomization_count + 1):
        if cand == 0:
            cols = np.zeros((m, k_users), dtype=complex)
            for k in range(k_users):
                lam, vec = leading_eigpair(w_mats[k])
                cols[:, k] = math.sqrt(max(lam, 0.0)) * vec
        else:
            xi = (rng.standard_normal((m, k_users)) + 1j * rng.standard_normal((m, k_users))) / math.sqrt(2.0)
            cols = np.column_stack([roots[k] @ xi[:, k] for k in range(k_users)])
        base_power = float(np.sum(np.abs(cols) ** 2))
        if base_power <= 0.0 or base_power >= best_power:
            continue
        ok, mus = scaled_feasible(cols, 1.0)
        if ok:
            t_star, mu_star = 1.0, mus
        else:
            hi_ok, mus_hi = scaled_feasible(cols, 1e3)
            if not hi_ok:
                continue
            lo, hi, mu_star = 1.0, 1e3, mus_hi
            while hi - lo > 1e-6 * hi:
                mid = 0.5 * (lo + hi)
                ok_mid, mus_mid = scaled_feasible(cols, mid)
                if ok_mid:
                    hi, mu_star = mid, mus_mid
                else:
                    lo = mid
            t_star = hi
        n_feasible += 1
        power = t_star * base_power
        if power < best_power:
            best_power = power
            best_w = cols * math.sqrt(t_star)
            best_mu = mu_star

    if best_w is None:
        raise RandomizationFailedError(
            f"no feasible candidate among {params.randomization_count + 1} draws"
        )
    return best_w, best_mu, best_power, n_feasible


@dataclass(frozen=True)
class BeamformingSolution:
    """Outcome of one end-to-end power minimization.

    ``status`` is one of optimal, infeasible, inaccurate, or
    rank_recovery_failed. Beamformer columns are only present for optimal
    solutions; the lifted matrices and multipliers are kept whenever the
    relaxation produced them, so failed recoveries remain inspectable.
    """

    status: str
    w: np.ndarray | None
    w_mats: list[np.ndarray] | None
    mu: np.ndarray | None
    total_power: float
    diagnostics: dict


def complexity_estimate(n_antennas: int, n_users: int, eps_s: float = 1e-8, dc_iters: int = 0) -> float:
    """Interior-point flop-count model for the lifted program and its refinements.

    One solve costs sqrt(2KM + 3K) * n * [K((M+1)^3 + M^3 + 2)
    + n K((M+1)^2 + M^2 + 2) + n^2] * ln(1/eps) with n = K M^2 scalar
    unknowns; the DC loop repeats a program of the same shape.
    """
    m, k = n_antennas, n_users
    n = k * m * m
    per_iter = k * ((m + 1) ** 3 + m**3 + 2) + n * k * ((m + 1) ** 2 + m**2 + 2) + n * n
    one_solve = math.sqrt(2.0 * k * m + 3.0 * k) * n * per_iter * math.log(1.0 / eps_s)
    return (1.0 + dc_iters) * one_solve


def _rescale_to_iot_floor(w, w_mats, mu, data):
    """Common scale-up that puts boundary solutions back on the device-rate floor.

    Backends land within their own tolerance on either side of the active
    trace row, but the downstream audit is one-sided. Scaling every beam by
    the same factor fixes the trace row exactly, improves the true outage
    (the noise term stays put), and keeps the ball certificates valid when
    the multipliers ride along, all at a ~1e-9 relative power cost.
    Shortfalls beyond the solver's own accuracy band are left alone so real
    infeasibility cannot hide behind the rescale.
    """
    # the audit sees the extracted beams, so the floor must hold for their
    # outer products rather than for the lifted matrices
    outers = [np.outer(w[:, k], w[:, k].conj()) for k in range(w.shape[1])]
    t_sq = 1.0
    for k in range(len(w_mats)):
        lhs = iot_trace_lhs(outers, data, k)
        if lhs >= 0.0:
            continue
        _, const = iot_trace_coeffs(data, k)
        slope = lhs - const
        if slope <= 0.0:
            return w, w_mats, mu, False
        t_sq = max(t_sq, -const / slope)
    if t_sq == 1.0:
        return w, w_mats, mu, False
    t_sq *= 1.0 + 1e-12
    if t_sq > 1.0 + 1e-5:
        return w, w_mats, mu, False
    return math.sqrt(t_sq) * w, [t_sq * wk for wk in w_mats], t_sq * mu, True


def minimize_power(
    chs: ChannelSet,
    cfg: SystemConfig,
    params: SolverParams | None = None,
    cov: CovarianceSet | None = None,
) -> BeamformingSolution:
    """Full pipeline: relax, solve, recover rank one, report honestly.

    ``cov`` selects the covariance source; by default the exact per-user
    covariances are computed from the realization (instantaneous-CSI
    design). Passing the angle-based covariance set gives the reduced
    feedback design; the direct links always come from the realization.
    """
    params = params or SolverParams()
    if cov is None:
        cov = covariance_set_exact(chs, cfg)
    data = build_robust_data(chs, cov, cfg)
    prog = assemble_p3(data)
    sol = conic_solve(prog, params)

    diagnostics: dict = {
        "backend_status": sol.residuals.get("backend_status"),
        "solver_residuals": sol.residuals,
        "relaxation_power": sol.objective,
        "covariance_provenance": cov.provenance,
        "dc_iterations": 0,
        "randomization_used": False,
    }

    if sol.status == "infeasible":
        return BeamformingSolution(
            status="infeasible", w=None, w_mats=None, mu=None,
            total_power=math.inf, diagnostics=diagnostics,
        )
    if sol.status == "inaccurate":
        return BeamformingSolution(
            status="inaccurate", w=None, w_mats=sol.matrices, mu=None,
            total_power=math.nan, diagnostics=diagnostics,
        )

    w_mats = sol.matrices
    mu = sol.scalars / prog.metadata["mu_scale"]
    ratios = []
    for w in w_mats:
        vals = np.linalg.eigvalsh(w)
        ratios.append(float(vals[-2] / vals[-1]) if len(vals) > 1 and vals[-1] > 0 else 0.0)
    diagnostics["rank_ratios"] = ratios
    diagnostics["rank_gap"] = rank_gap(w_mats)

    if max(ratios, default=0.0) > params.rank_ratio_tol:
        dc = dc_refine(w_mats, mu, data, params)
        diagnostics["dc_iterations"] = dc.iterations
        diagnostics["rank_gap_trace"] = dc.rank_gap_trace
        diagnostics["penalty_trace"] = dc.penalty_trace
        if dc.converged:
            w_mats, mu = dc.w_mats, dc.mus
            diagnostics["rank_gap"] = rank_gap(w_mats)
        else:
            try:
                w, mu_r, power, n_feas = gaussian_randomization(sol.matrices, data, params, seed=0)
            except RandomizationFailedError:
                diagnostics["rank_gap"] = rank_gap(dc.w_mats)
                return BeamformingSolution(
                    status="rank_recovery_failed", w=None, w_mats=dc.w_mats, mu=dc.mus,
                    total_power=math.nan, diagnostics=diagnostics,
                )
            diagnostics["randomization_used"] = True
            diagnostics["randomization_feasible"] = n_feas
            diagnostics["complexity_estimate"] = complexity_estimate(
                cfg.n_antennas, cfg.n_users, params.eps_s, dc.iterations
            )
            w_mats = [np.outer(w[:, k], w[:, k].conj()) for k in range(cfg.n_users)]
            w, w_mats, mu_r, rescaled = _rescale_to_iot_floor(w, w_mats, mu_r, data)
            if rescaled:
                diagnostics["rate_floor_rescale"] = True
                power = float(np.sum(np.abs(w) ** 2))
            return BeamformingSolution(
                status="optimal", w=w, w_mats=w_mats, mu=mu_r,
                total_power=power, diagnostics=diagnostics,
            )

    cols = [extract_beamformer(wk, params.rank1_extract_tol) for wk in w_mats]
    w = np.column_stack(cols)
    w, w_mats, mu, rescaled = _rescale_to_iot_floor(w, w_mats, mu, data)
    if rescaled:
        diagnostics["rate_floor_rescale"] = True
    diagnostics["complexity_estimate"] = complexity_estimate(
        cfg.n_antennas, cfg.n_users, params.eps_s, diagnostics["dc_iterations"]
    )
    return BeamformingSolution(
        status="optimal", w=w, w_mats=w_mats, mu=mu,
        total_power=float(np.sum(np.abs(w) ** 2)), diagnostics=diagnostics,
    )
