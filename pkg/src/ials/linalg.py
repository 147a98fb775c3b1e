"""Dense linear-algebra kernels for the alternating least squares solver.

Only the two primitives the solver needs: Gramian accumulation and
symmetric positive-definite solves.  Everything is float64; Gramian sums
over millions of interactions lose too much precision in float32.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky

from .errors import IalsError

# Relative diagonal jitter added when a Cholesky factorization fails, and
# how often it is escalated (x10 each time) before giving up.
JITTER_SCALE = 1e-10
JITTER_RETRIES = 3


class NotPositiveDefinite(IalsError):
    """Cholesky hit a non-positive pivot even after diagonal jitter.

    In the solver this signals a degenerate system: both the L2 penalty
    and the unobserved weight are (effectively) zero for an entity whose
    history does not span the embedding space.
    """


def gramian(M: np.ndarray) -> np.ndarray:
    """Return G = MᵀM for a row-major (n, d) matrix.

    The result is a (d, d) array that is exactly symmetric (bitwise) and
    positive semi-definite by construction.  An empty matrix (n = 0)
    yields the zero matrix.
    """
    M = np.ascontiguousarray(M, dtype=np.float64)
    G = M.T @ M
    # BLAS does not guarantee bitwise symmetry of MᵀM; averaging with the
    # transpose does, since IEEE addition is commutative.
    return (G + G.T) * 0.5


def solve_spd(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve A x = b for symmetric positive definite A via Cholesky.

    If the factorization fails, retries with escalating diagonal jitter
    (JITTER_SCALE * trace(A)/d, then x10 per retry, JITTER_RETRIES times).

    Raises:
        NotPositiveDefinite: no attempt produced a positive definite
            factorization.
    """
    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    d = A.shape[0]
    jitter = JITTER_SCALE * np.trace(A) / d

    for attempt in range(JITTER_RETRIES + 1):
        if attempt == 0:
            Aj = A
        else:
            Aj = A.copy()
            Aj.flat[:: d + 1] += jitter
            jitter *= 10.0
        try:
            L = cholesky(Aj, lower=True, check_finite=False)
        except LinAlgError:
            continue
        return cho_solve((L, True), b, check_finite=False)

    raise NotPositiveDefinite(
        f"{d}x{d} system is not positive definite after {JITTER_RETRIES} "
        "jitter retries; check that the regularization weight or the "
        "unobserved weight is positive"
    )
