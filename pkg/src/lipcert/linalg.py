"""Dense symmetric linear-algebra kernels.

Everything downstream (stage solvers, the certifier, the verification
oracles) funnels its matrix work through this module: SPD factorization
and solves, extremal eigenvalues of symmetric matrices, and the
vectorized diagonal of W M^-1 W^T.

All matrices are dense float64.  Network widths stay at desk scale
(a few thousand at most), so there are no sparse or blocked paths.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

# Relative symmetry tolerance for inputs that claim to be symmetric.
SYM_RTOL = 1e-12

# A Cholesky pivot below this fraction of the largest diagonal entry is
# treated as a positive-definiteness failure (scale-relative).
PIVOT_RTOL = 1e-12

# Iteration cap for the power-iteration fast path.
POWER_ITER_CAP = 2_000

# Below this order a dense eigendecomposition is cheaper than iterating.
_DENSE_EIG_CUTOFF = 256


class NotPositiveDefinite(Exception):
    """Raised when an allegedly SPD matrix fails its factorization.

    ``index`` is the 1-based position of the failing pivot.
    """

    def __init__(self, index: int, message: str | None = None):
        self.index = int(index)
        super().__init__(message or f"matrix is not positive definite (pivot {index})")


class NonConvergence(Exception):
    """Raised by the iterative eigenvalue engine when the cap is hit."""


def check_symmetric(S, name: str = "matrix") -> np.ndarray:
    """Validate and return ``S`` as a dense symmetric float64 array."""
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError(f"{name} must be square, got shape {S.shape}")
    if not np.all(np.isfinite(S)):
        raise ValueError(f"{name} has non-finite entries")
    scale = np.abs(S).max()
    if scale > 0 and np.abs(S - S.T).max() > SYM_RTOL * scale:
        raise ValueError(f"{name} is not symmetric to within {SYM_RTOL} relative")
    return 0.5 * (S + S.T)


@dataclass(frozen=True)
class SpdFactor:
    """Lower-triangular Cholesky factor L of an SPD matrix, S = L L^T."""

    lower: np.ndarray

    @property
    def order(self) -> int:
        return self.lower.shape[0]

    def reconstruct(self) -> np.ndarray:
        """Return the dense SPD matrix L L^T."""
        return self.lower @ self.lower.T

    @staticmethod
    def identity(n: int) -> "SpdFactor":
        return SpdFactor(np.eye(n))


def _failing_pivot_index(S: np.ndarray, threshold: float) -> int:
    # Unblocked Cholesky used only on the failure path, to report
    # which pivot broke.  Returns a 1-based index.
    n = S.shape[0]
    L = np.zeros_like(S)
    for k in range(n):
        pivot = S[k, k] - L[k, :k] @ L[k, :k]
        if not np.isfinite(pivot) or pivot <= threshold:
            return k + 1
        L[k, k] = np.sqrt(pivot)
        if k + 1 < n:
            L[k + 1 :, k] = (S[k + 1 :, k] - L[k + 1 :, :k] @ L[k, :k]) / L[k, k]
    return n  # pragma: no cover - only reached through rounding quirks


def factor_spd(S) -> SpdFactor:
    """Cholesky-factor a symmetric matrix, rejecting non-SPD inputs.

    A pivot at or below ``PIVOT_RTOL * max(diag(S))`` counts as a
    failure; the raised :class:`NotPositiveDefinite` carries the 1-based
    index of the offending pivot.
    """
    S = check_symmetric(S)
    threshold = PIVOT_RTOL * max(float(np.max(np.diag(S))), 0.0)
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        raise NotPositiveDefinite(_failing_pivot_index(S, threshold)) from None
    pivots = np.diag(L) ** 2
    small = np.nonzero(pivots <= threshold)[0]
    if small.size:
        raise NotPositiveDefinite(int(small[0]) + 1)
    return SpdFactor(L)


def spd_solve(F: SpdFactor, B) -> np.ndarray:
    """Solve S X = B given the factor of S.  B may be a vector or matrix."""
    B = np.asarray(B, dtype=float)
    vector = B.ndim == 1
    if B.shape[0] != F.order:
        raise ValueError(f"dimension mismatch: factor order {F.order}, rhs leading {B.shape[0]}")
    Y = scipy.linalg.solve_triangular(F.lower, B, lower=True)
    X = scipy.linalg.solve_triangular(F.lower.T, Y, lower=False)
    return X if not vector else X.reshape(B.shape)


def _power_extremal(S: np.ndarray, largest: bool, rtol: float = 1e-10,
                    max_iter: int = POWER_ITER_CAP) -> float:
    """Extremal eigenvalue of symmetric S by shifted power iteration.

    Shifts so the target eigenvalue becomes dominant in magnitude, then
    iterates until the eigenpair residual certifies the value.  Raises
    :class:`NonConvergence` at the iteration cap.
    """
    n = S.shape[0]
    if n == 1:
        return float(S[0, 0])
    # Gershgorin-style shift: spectrum of B lands in [0, 2*shift].
    shift = float(np.abs(S).sum(axis=1).max()) or 1.0
    B = S + shift * np.eye(n) if largest else shift * np.eye(n) - S
    # Deterministic start vector with no special structure.
    v = np.cos(np.arange(1, n + 1, dtype=float))
    v /= np.linalg.norm(v)
    theta = 0.0
    for _ in range(max_iter):
        w = B @ v
        norm_w = np.linalg.norm(w)
        if norm_w == 0.0:  # B is the zero map; every vector is an eigenvector
            theta = 0.0
            break
        v = w / norm_w
        w = B @ v
        theta = float(v @ w)
        resid = np.linalg.norm(w - theta * v)
        if resid <= rtol * max(abs(theta), shift * 1e-6):
            break
    else:
        raise NonConvergence(f"power iteration hit the {max_iter}-iteration cap")
    return theta - shift if largest else shift - theta


def _extremal_eig(S, largest: bool) -> float:
    S = check_symmetric(S)
    n = S.shape[0]
    if n <= _DENSE_EIG_CUTOFF:
        vals = np.linalg.eigvalsh(S)
        return float(vals[-1] if largest else vals[0])
    try:
        return _power_extremal(S, largest)
    except NonConvergence:
        # Clustered or gapless spectrum: retry with the dense solver.
        vals = np.linalg.eigvalsh(S)
        return float(vals[-1] if largest else vals[0])


def max_eig_sym(S) -> float:
    """Largest eigenvalue of a symmetric matrix, within 1e-9 relative."""
    return _extremal_eig(S, largest=True)


def min_eig_sym(S) -> float:
    """Smallest eigenvalue of a symmetric matrix, within 1e-9 relative."""
    return _extremal_eig(S, largest=False)


def diag_quadratic(W, F: SpdFactor) -> np.ndarray:
    """Diagonal of W M^-1 W^T without forming the full product.

    Equals ``sum_k W[:, k] * (M^-1 W^T)[k, :]^T`` column by column, so the
    cost is one SPD solve plus an elementwise reduction.
    """
    W = np.asarray(W, dtype=float)
    if W.ndim != 2:
        raise ValueError("W must be a matrix")
    if W.shape[1] != F.order:
        raise ValueError(f"dimension mismatch: W has {W.shape[1]} columns, factor order {F.order}")
    A = spd_solve(F, W.T)  # M^-1 W^T, shape (m, d)
    return np.einsum("ij,ji->i", W, A)
