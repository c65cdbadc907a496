"""Small dense symmetric-matrix helpers shared by the whole package.

Everything here works on plain ``numpy`` arrays. Dimensions in this
package are tiny (n <= 10), so eigen decompositions are used freely.
"""

import numpy as np
import scipy.linalg

DEFAULT_TOL = 1e-9


class NumericInputError(ValueError):
    """Raised for NaN/inf entries or malformed shapes."""


class FactorizationError(np.linalg.LinAlgError):
    """Raised when a matrix expected to be positive definite is not."""

    def __init__(self, message, pivot=None):
        super().__init__(message)
        self.pivot = pivot


class SingularityError(np.linalg.LinAlgError):
    """Raised when a block that must be inverted is singular."""


def as_matrix(m):
    a = np.array(m, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(-1, 1)
    if a.ndim != 2:
        raise NumericInputError(f"expected a 2-D array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NumericInputError("matrix has non-finite entries")
    return a


def sym(m):
    """Return ``(m + m.T) / 2`` as a validated square float array."""
    a = as_matrix(m)
    if a.shape[0] != a.shape[1]:
        raise NumericInputError(f"expected a square matrix, got shape {a.shape}")
    return 0.5 * (a + a.T)


def spectral_bounds(m):
    """Smallest and largest eigenvalue of the symmetric part of ``m``."""
    w = np.linalg.eigvalsh(sym(m))
    return float(w[0]), float(w[-1])


def min_eig(m):
    return spectral_bounds(m)[0]


def is_positive_definite(m, tol=DEFAULT_TOL):
    """True iff lambda_min(m) > tol * max(1, ||m||_2)."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    w = np.linalg.eigvalsh(sym(m))
    scale = max(1.0, float(np.max(np.abs(w))))
    return bool(w[0] > tol * scale)


def is_negative_definite(m, tol=DEFAULT_TOL):
    return is_positive_definite(-sym(m), tol)


def sqrt_factor(m):
    """Upper-triangular S with S.T @ S == m.

    Used for the weight square roots (M_R, M_Q) inside the cost block.
    """
    a = sym(m)
    n = a.shape[0]
    s = np.zeros_like(a)
    # Plain Cholesky so the failing pivot can be reported.
    for j in range(n):
        d = a[j, j] - s[:j, j] @ s[:j, j]
        if not d > 0.0:
            raise FactorizationError(f"matrix is not positive definite (pivot {j})", pivot=j)
        s[j, j] = np.sqrt(d)
        for k in range(j + 1, n):
            s[j, k] = (a[j, k] - s[:j, j] @ s[:j, k]) / s[j, j]
    return s


def invert_pd(m):
    a = sym(m)
    try:
        c, lower = scipy.linalg.cho_factor(a)
    except np.linalg.LinAlgError as exc:
        raise FactorizationError(f"matrix is not positive definite: {exc}") from exc
    inv = scipy.linalg.cho_solve((c, lower), np.eye(a.shape[0]))
    return sym(inv)


def schur_complement(m, block_split):
    """M11 - M12 M22^{-1} M12^T for the partition at ``block_split``."""
    a = sym(m)
    k = int(block_split)
    if not 0 < k < a.shape[0]:
        raise ValueError(f"block_split must lie in (0, {a.shape[0]})")
    m11, m12, m22 = a[:k, :k], a[:k, k:], a[k:, k:]
    try:
        x = np.linalg.solve(m22, m12.T)
    except np.linalg.LinAlgError as exc:
        raise SingularityError("trailing block is singular") from exc
    if np.linalg.cond(m22) > 1e14:
        raise SingularityError("trailing block is numerically singular")
    return sym(m11 - m12 @ x)


def random_pd(n, rng, cond=100.0):
    """Random symmetric PD matrix with condition number about ``cond``."""
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    w = np.exp(rng.uniform(0.0, np.log(cond), size=n))
    return sym(q @ np.diag(w) @ q.T)
