"""Safe outage approximation: sphere-bounded uncertainty, the S-lemma linear
matrix inequality, and the device sum-rate constraint in lifted (trace) form.

The chance constraint on each user's downlink rate is replaced by a
worst-case constraint over a ball of whitened channel deviations whose
radius comes from a chi-square quantile. With the lifted variables
W_i = w_i w_i^H the worst-case constraint is exactly one LMI per user, and
the device sum-rate constraint is affine in the W_i, so the relaxed power
minimization is a semidefinite program.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import ChannelSet, CovarianceSet, SystemConfig
from .numerics import chi_square_inv_cdf, hermitian_sqrt

__all__ = [
    "RobustProblemData",
    "build_robust_data",
    "sphere_radius",
    "LmiMap",
    "lmi_map",
    "lmi_block",
    "lmi_feasible",
    "iot_trace_coeffs",
    "iot_trace_lhs",
]


def sphere_radius(outage_target: float, n_antennas: int) -> float:
    """Radius of the whitened uncertainty ball covering 1 - outage_target mass.

    The squared norm of an M-dimensional standard complex Gaussian is half a
    chi-square with 2M degrees of freedom, hence the quantile and the 1/2.
    """
    return math.sqrt(chi_square_inv_cdf(1.0 - outage_target, 2 * n_antennas) / 2.0)


@dataclass(frozen=True)
class RobustProblemData:
    """Everything the conic formulation needs, in physical units.

    ``gamma_cellular`` is 2^target - 1 on the downlink SINR scale and
    ``gamma_iot`` is 2^(N * target) - 1 on the combined device SINR scale.
    ``cov_half`` rows are Hermitian square roots of the covariance rows.
    """

    bs_user: np.ndarray
    cov: np.ndarray
    cov_half: np.ndarray
    gamma_cellular: np.ndarray
    gamma_iot: np.ndarray
    noise_power: np.ndarray
    radius: float
    symbol_ratio: int

    def __post_init__(self):
        k, m = self.bs_user.shape
        if self.cov.shape != (k, m, m) or self.cov_half.shape != (k, m, m):
            raise ValueError("covariance arrays must be (K, M, M)")
        for name in ("gamma_cellular", "gamma_iot", "noise_power"):
            arr = getattr(self, name)
            if arr.shape != (k,):
                raise ValueError(f"{name} must be (K,)")
            if np.any(arr <= 0.0):
                raise ValueError(f"{name} entries must be positive")
        if self.radius <= 0.0:
            raise ValueError("sphere radius must be positive")
        if self.symbol_ratio < 1:
            raise ValueError("symbol_ratio must be >= 1")

    @property
    def n_users(self) -> int:
        return self.bs_user.shape[0]

    @property
    def n_antennas(self) -> int:
        return self.bs_user.shape[1]


def build_robust_data(chs: ChannelSet, cov: CovarianceSet, cfg: SystemConfig) -> RobustProblemData:
    """Assemble solver-facing data from a realization and a covariance source.

    The direct links always come from the realization; the covariance may be
    exact (instantaneous knowledge) or the angle-based approximation, which
    is the only place the two design approaches differ.
    """
    gam_s = np.array([2.0**r - 1.0 for r in cfg.rate_target_cellular])
    gam_c = np.array([2.0 ** (cfg.symbol_ratio * r) - 1.0 for r in cfg.rate_target_iot])
    cov_half = np.stack([hermitian_sqrt(cov.matrices[k]) for k in range(cfg.n_users)])
    return RobustProblemData(
        bs_user=chs.bs_user.astype(complex),
        cov=cov.matrices.astype(complex),
        cov_half=cov_half,
        gamma_cellular=gam_s,
        gamma_iot=gam_c,
        noise_power=np.asarray(cfg.noise_power, dtype=float),
        radius=sphere_radius(cfg.outage_target, cfg.n_antennas),
        symbol_ratio=cfg.symbol_ratio,
    )


@dataclass(frozen=True)
class LmiMap:
    """Affine description of user k's outage LMI.

    block(W, mu_k) = sum_i coeffs[i] * stack @ W_i @ stack^H
                     + mu_k * diag(mu_diag) + diag(const_diag)

    where stack is the (M+1, M) matrix [C_k^{1/2}; f_k]. The congruence form
    exists because the quadratic, linear, and constant pieces of the
    worst-case expression share the matrix A_k = W_k / gamma - sum_{i != k} W_i:
    conjugating A_k by the stacked rows reproduces the Q, r, s blocks at once.
    """

    stack: np.ndarray
    coeffs: np.ndarray
    mu_diag: np.ndarray
    const_diag: np.ndarray


def lmi_map(data: RobustProblemData, k: int) -> LmiMap:
    m = data.n_antennas
    stack = np.vstack([data.cov_half[k], data.bs_user[k][None, :]])
    coeffs = np.full(data.n_users, -1.0)
    coeffs[k] = 1.0 / data.gamma_cellular[k]
    mu_diag = np.r_[np.ones(m), -(data.radius**2)]
    const_diag = np.r_[np.zeros(m), -data.noise_power[k]]
    return LmiMap(stack=stack, coeffs=coeffs, mu_diag=mu_diag, const_diag=const_diag)


def lmi_block(w_mats, mu_k: float, data: RobustProblemData, k: int) -> np.ndarray:
    """Numeric (M+1, M+1) LMI block for given lifted matrices and multiplier."""
    lm = lmi_map(data, k)
    m = data.n_antennas
    block = np.zeros((m + 1, m + 1), dtype=complex)
    for i, w in enumerate(w_mats):
        block += lm.coeffs[i] * (lm.stack @ w @ lm.stack.conj().T)
    block += np.diag(mu_k * lm.mu_diag + lm.const_diag)
    return 0.5 * (block + block.conj().T)


def lmi_feasible(block: np.ndarray, tol: float = 1e-9) -> bool:
    """PSD test with tolerance scaled to the block's spectral norm."""
    vals = np.linalg.eigvalsh(block)
    scale = max(1.0, abs(vals[0]), abs(vals[-1]))
    return vals[0] >= -tol * scale


def iot_trace_coeffs(data: RobustProblemData, k: int) -> tuple[list[np.ndarray], float]:
    """Hermitian coefficient matrices G_i and constant c for user k's device
    sum-rate constraint sum_i Re tr(G_i W_i) + c >= 0.

    Own matrix: (N / gamma_iot) C_k. Other matrices: -(C_k + f_k^H f_k),
    covering both the reflective cross-beam interference and the residual
    direct-link interference. Constant: -noise. At rank one this is exactly
    the sum-rate constraint, not an approximation.
    """
    own = (data.symbol_ratio / data.gamma_iot[k]) * data.cov[k]
    f = data.bs_user[k]
    cross = -(data.cov[k] + np.outer(f.conj(), f))
    mats = [cross.copy() for _ in range(data.n_users)]
    mats[k] = own
    return mats, -float(data.noise_power[k])


def iot_trace_lhs(w_mats, data: RobustProblemData, k: int) -> float:
    mats, const = iot_trace_coeffs(data, k)
    value = const
    for g, w in zip(mats, w_mats):
        value += float(np.real(np.trace(g.conj().T @ w)))
    return value
