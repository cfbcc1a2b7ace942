"""Dense linear-algebra kernels for the mode-update solves.

Three operations: reduced QR with a deterministic sign convention,
symmetric eigendecomposition with descending eigenvalues, and a
minimal-norm solve for (near-)singular symmetric positive-semidefinite
systems. All of them are thin, contract-enforcing layers over LAPACK.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, NotPSD, RankDeficient

DEFAULT_PINV_RELATIVE_THRESHOLD = 1e-12


@dataclass(frozen=True)
class SymEig:
    """Eigendecomposition of a symmetric matrix.

    eigenvalues are sorted descending; eigenvectors[:, i] is the unit
    eigenvector for eigenvalues[i].
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def reduced_qr(a):
    """Reduced QR factorization with strictly positive diag(R).

    Parameters
    ----------
    a : (n, k) array with n >= k, numerically full column rank.

    Returns
    -------
    q : (n, k) array with orthonormal columns.
    r : (k, k) upper triangular with positive diagonal.

    Raises
    ------
    DimensionMismatch
        If a has fewer rows than columns.
    RankDeficient
        If some |r[i, i]| <= 1e-14 * ||a||_F (carrying the column index i).
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2:
        raise DimensionMismatch("expected a 2-d array, got shape %r" % (a.shape,))
    n, k = a.shape
    if n < k:
        raise DimensionMismatch("reduced_qr needs rows >= cols, got %d < %d" % (n, k))
    q, r = np.linalg.qr(a, mode="reduced")
    scale = np.linalg.norm(a)
    diag = np.diagonal(r)
    small = np.abs(diag) <= 1e-14 * scale
    if np.any(small):
        col = int(np.nonzero(small)[0][0])
        raise RankDeficient(
            "input is rank deficient at column %d (|r_ii| = %.3e, ||a|| = %.3e)"
            % (col, abs(diag[col]), scale),
            column=col,
        )
    signs = np.where(diag < 0.0, -1.0, 1.0)
    # flip column i of q and row i of r together, the product is unchanged
    q = q * signs[np.newaxis, :]
    r = r * signs[:, np.newaxis]
    return q, r


def sym_eig(c):
    """Eigendecomposition of a (nearly) symmetric matrix.

    The input is symmetrized by averaging with its transpose before the
    solve, since sample Gramians accumulate asymmetric rounding.
    Eigenvalues come back sorted descending.
    """
    c = np.asarray(c, dtype=float)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise DimensionMismatch("sym_eig needs a square matrix, got shape %r" % (c.shape,))
    sym = 0.5 * (c + c.T)
    w, v = np.linalg.eigh(sym)
    order = np.arange(w.shape[0] - 1, -1, -1)
    return SymEig(eigenvalues=w[order], eigenvectors=v[:, order])


def solve_spsd_minnorm(c, b, rel_threshold=DEFAULT_PINV_RELATIVE_THRESHOLD):
    """Minimal-norm solution X of C X = B for symmetric PSD C.

    Uses the eigendecomposition pseudo-inverse: eigenvalues below
    rel_threshold * lambda_max are treated as exactly zero, which makes
    the solve well defined for singular Gramians. For well-conditioned C
    this coincides with the direct solve.

    Parameters
    ----------
    c : (k, k) symmetric positive-semidefinite matrix.
    b : (k, d) right-hand side.
    rel_threshold : float in (0, 1), default 1e-12.

    Raises
    ------
    NotPSD
        If C has an eigenvalue below -1e-10 * lambda_max.
    DimensionMismatch
        If shapes are inconsistent.
    """
    c = np.asarray(c, dtype=float)
    b = np.asarray(b, dtype=float)
    if b.ndim == 1:
        b = b[:, np.newaxis]
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise DimensionMismatch("c must be square, got shape %r" % (c.shape,))
    if b.shape[0] != c.shape[0]:
        raise DimensionMismatch(
            "rhs has %d rows, expected %d" % (b.shape[0], c.shape[0])
        )
    if not 0.0 < rel_threshold < 1.0:
        raise ValueError("rel_threshold must lie in (0, 1)")
    eig = sym_eig(c)
    lam = eig.eigenvalues
    lam_max = lam[0]
    if lam_max < 0.0:
        lam_max = 0.0
    if lam[-1] < -1e-10 * lam_max:
        raise NotPSD(
            "matrix has negative eigenvalue %.3e (lambda_max = %.3e)"
            % (lam[-1], lam_max)
        )
    keep = lam > rel_threshold * lam_max
    inv = np.zeros_like(lam)
    inv[keep] = 1.0 / lam[keep]
    v = eig.eigenvectors
    return v @ (inv[:, np.newaxis] * (v.T @ b))
