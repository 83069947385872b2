"""Self-contained numerical kernels: regularized incomplete gamma, chi-square
quantiles, Hermitian matrix square roots and eigen-decomposition helpers.

Everything here is deterministic and depends only on numpy plus math. The
special functions are implemented directly (series / continued fraction)
so the quantile used for the uncertainty sphere does not pull in a heavy
dependency, and so the tests can cross-check it against an independent
implementation.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "NotHermitianError",
    "IndefiniteMatrixError",
    "regularized_gamma_p",
    "chi_square_inv_cdf",
    "require_hermitian",
    "hermitian_sqrt",
    "leading_eigpair",
    "project_psd",
    "sinc",
]

_MACHEP = 1e-15
_BIG = 4.503599627370496e15
_BIG_INV = 2.22044604925031308085e-16


class NotHermitianError(ValueError):
    """Raised when a matrix argument is not Hermitian within tolerance."""


class IndefiniteMatrixError(ValueError):
    """Raised when a matrix expected to be PSD has a significantly negative eigenvalue."""


def _lower_gamma_series(a: float, x: float) -> float:
    # P(a, x) via the ascending series, converges fast for x <= a + 1
    if x <= 0.0:
        return 0.0
    ax = a * math.log(x) - x - math.lgamma(a)
    if ax < -709.0:
        return 0.0 if x < a else 1.0
    ax = math.exp(ax)
    r = a
    c = 1.0
    ans = 1.0
    while True:
        r += 1.0
        c *= x / r
        ans += c
        if c / ans <= _MACHEP:
            break
    return ans * ax / a


def _upper_gamma_cf(a: float, x: float) -> float:
    # Q(a, x) via the Lentz-style continued fraction, good for x > max(1, a)
    ax = a * math.log(x) - x - math.lgamma(a)
    if ax < -709.0:
        return 0.0
    ax = math.exp(ax)
    y = 1.0 - a
    z = x + y + 1.0
    c = 0.0
    pkm2, qkm2 = 1.0, x
    pkm1, qkm1 = x + 1.0, z * x
    ans = pkm1 / qkm1
    while True:
        c += 1.0
        y += 1.0
        z += 2.0
        yc = y * c
        pk = pkm1 * z - pkm2 * yc
        qk = qkm1 * z - qkm2 * yc
        if qk != 0.0:
            r = pk / qk
            t = abs((ans - r) / r)
            ans = r
        else:
            t = 1.0
        pkm2, qkm2 = pkm1, qkm1
        pkm1, qkm1 = pk, qk
        if abs(pk) > _BIG:
            pkm2 *= _BIG_INV
            pkm1 *= _BIG_INV
            qkm2 *= _BIG_INV
            qkm1 *= _BIG_INV
        if t <= _MACHEP:
            break
    return ans * ax


def regularized_gamma_p(a: float, x: float) -> float:
    """Regularized lower incomplete gamma function P(a, x).

    Uses the ascending series for x below max(1, a) and the continued
    fraction for the complement otherwise, following the classic Cephes
    partitioning.
    """
    if a <= 0.0:
        raise ValueError("shape parameter must be positive")
    if x < 0.0:
        raise ValueError("argument must be nonnegative")
    if x == 0.0:
        return 0.0
    if x <= 1.0 or x <= a:
        return _lower_gamma_series(a, x)
    return 1.0 - _upper_gamma_cf(a, x)


def chi_square_inv_cdf(p: float, dof: int) -> float:
    """Quantile of the central chi-square distribution.

    Solves P(dof/2, x/2) = p with a bracketed Newton iteration. The
    bracket is established by doubling, and any Newton step that leaves
    the bracket falls back to bisection, so the iteration cannot diverge.

    Parameters
    ----------
    p : float
        Probability level, must satisfy 0 <= p < 1.
    dof : int
        Degrees of freedom, at least 1.
    """
    if not 0.0 <= p < 1.0:
        raise ValueError(f"probability must lie in [0, 1), got {p}")
    if dof < 1:
        raise ValueError(f"degrees of freedom must be >= 1, got {dof}")
    if p == 0.0:
        return 0.0

    a = 0.5 * dof

    def cdf(t: float) -> float:
        return regularized_gamma_p(a, 0.5 * t)

    def pdf(t: float) -> float:
        if t <= 0.0:
            return 0.0
        lg = (a - 1.0) * math.log(0.5 * t) - 0.5 * t - math.lgamma(a)
        return 0.5 * math.exp(lg) if lg > -709.0 else 0.0

    lo, hi = 0.0, float(dof) + 1.0
    while cdf(hi) < p:
        lo = hi
        hi *= 2.0
        if hi > 1e300:
            raise ArithmeticError("quantile bracket expansion failed")

    x = 0.5 * (lo + hi)
    for _ in range(200):
        err = cdf(x) - p
        if err > 0.0:
            hi = x
        else:
            lo = x
        dpdf = pdf(x)
        if dpdf > 0.0:
            step = err / dpdf
            x_new = x - step
        else:
            x_new = 0.5 * (lo + hi)
        if not lo < x_new < hi:
            x_new = 0.5 * (lo + hi)
        if abs(x_new - x) <= 1e-14 * max(1.0, x):
            x = x_new
            break
        x = x_new
    return x


def require_hermitian(mat: np.ndarray, name: str = "matrix", tol: float = 1e-12) -> np.ndarray:
    """Validate Hermitian symmetry and return the exactly symmetrized matrix.

    The tolerance is absolute relative to the largest entry magnitude, so
    physically tiny matrices (channel covariances are around 1e-13) are
    not rejected for roundoff in their last bits.
    """
    arr = np.asarray(mat)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise NotHermitianError(f"{name} must be square, got shape {arr.shape}")
    scale = max(1.0, float(np.abs(arr).max()) if arr.size else 0.0)
    dev = float(np.abs(arr - arr.conj().T).max()) if arr.size else 0.0
    if dev > tol * scale:
        raise NotHermitianError(f"{name} deviates from Hermitian symmetry by {dev:.3e}")
    return 0.5 * (arr + arr.conj().T)


def hermitian_sqrt(mat: np.ndarray, neg_tol: float = 1e-9) -> np.ndarray:
    """Hermitian PSD square root via eigenvalue decomposition.

    Eigenvalues in [-neg_tol * spectral_norm, 0) are treated as roundoff
    and clipped to zero; anything more negative raises
    IndefiniteMatrixError.
    """
    h = require_hermitian(mat, name="hermitian_sqrt argument")
    vals, vecs = np.linalg.eigh(h)
    top = max(vals[-1], 0.0)
    if vals[0] < -neg_tol * max(top, 1e-300):
        raise IndefiniteMatrixError(
            f"matrix has eigenvalue {vals[0]:.3e} below -{neg_tol:g} * spectral norm"
        )
    root = (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.conj().T
    return 0.5 * (root + root.conj().T)


def leading_eigpair(mat: np.ndarray) -> tuple[float, np.ndarray]:
    """Largest eigenvalue and unit eigenvector of a Hermitian matrix.

    The eigenvector phase is fixed by rotating its first component of
    non-negligible magnitude onto the positive real axis, which makes the
    output deterministic across runs and platforms.
    """
    h = require_hermitian(mat, name="leading_eigpair argument")
    vals, vecs = np.linalg.eigh(h)
    lam = float(vals[-1])
    vec = vecs[:, -1].copy()
    mags = np.abs(vec)
    idx = int(np.argmax(mags > 1e-12 * mags.max()))
    pivot = vec[idx]
    if abs(pivot) > 0.0:
        vec *= pivot.conj() / abs(pivot)
        # pivot now sits on the real axis up to roundoff
        vec[idx] = abs(vec[idx])
    return lam, vec


def project_psd(mat: np.ndarray) -> tuple[np.ndarray, float]:
    """Project a Hermitian matrix onto the PSD cone by clipping eigenvalues.

    Returns the projection together with the total clipped mass
    (sum of the magnitudes of the removed negative eigenvalues).
    """
    h = require_hermitian(mat, name="project_psd argument")
    vals, vecs = np.linalg.eigh(h)
    clipped = float(np.sum(np.abs(vals[vals < 0.0])))
    if clipped == 0.0:
        return h, 0.0
    proj = (vecs * np.clip(vals, 0.0, None)) @ vecs.conj().T
    return 0.5 * (proj + proj.conj().T), clipped


def sinc(x: float) -> float:
    """Unnormalized sinc, sin(x)/x, with a series branch near zero."""
    ax = abs(x)
    if ax < 1e-8:
        return 1.0 - x * x / 6.0
    return math.sin(x) / x
