"""Deterministic dense numerics: symmetric eigendecompositions and SPD solves.

Everything downstream (PCA bases, closed-form initializers, discriminant
hyperplanes) funnels through the two routines here, so their conventions are
pinned exactly:

* eigenvalues in descending order, with a stable reorder so that equal
  eigenvalues keep the backend's ordering (the identity matrix decomposes to
  the identity basis);
* a deterministic sign convention (largest-magnitude component of each
  eigenvector is made positive);
* SPD solves fail loudly instead of returning garbage.
"""

from typing import NamedTuple

import numpy as np

from .errors import DimensionError, NumericError, SingularMatrixError

__all__ = ["SymEigen", "sym_eigen", "solve_spd", "frob_norm", "check_matrix"]

# Relative asymmetry tolerated before a matrix is rejected outright.
_SYM_RTOL = 1e-10


def check_matrix(a, *, square=False, symmetric=False, name="matrix"):
    """Validate a 2-D float array; return it as float64.

    Raises
    ------
    DimensionError
        If `a` is not 2-D, is not square (when required), or is asymmetric
        beyond 1e-10 relative (when required).
    NumericError
        If `a` has NaN or infinite entries.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {a.shape}")
    if not np.isfinite(a).all():
        raise NumericError(f"{name} has non-finite entries")
    if square and a.shape[0] != a.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {a.shape}")
    if symmetric:
        scale = max(float(np.abs(a).max(initial=0.0)), 1e-300)
        skew = float(np.abs(a - a.T).max(initial=0.0))
        if skew > _SYM_RTOL * scale:
            raise DimensionError(
                f"{name} is asymmetric: max |a - a.T| = {skew:.3e} "
                f"exceeds {_SYM_RTOL:.0e} relative"
            )
    return a


class SymEigen(NamedTuple):
    """Eigendecomposition of a symmetric matrix, eigenvalues descending."""

    eigenvalues: np.ndarray  # (d,)
    eigenvectors: np.ndarray  # (d, d), orthonormal columns


def sym_eigen(s):
    """Eigendecomposition of a symmetric matrix with pinned ordering and signs.

    The input is symmetrized as (s + s.T)/2 before decomposition.  Eigenvalues
    come back in descending order; ties keep the ascending-solver order
    reversed stably, which maps the identity matrix to the identity basis.
    Each eigenvector is sign-normalized so its largest-magnitude component is
    positive (first such component wins on exact ties).

    Parameters
    ----------
    s : array_like, shape (d, d)
        Symmetric matrix (within 1e-10 relative).

    Returns
    -------
    SymEigen
        `eigenvalues` (d,) descending and `eigenvectors` (d, d) with
        orthonormal columns such that s ~= V diag(w) V.T.
    """
    s = check_matrix(s, square=True, symmetric=True, name="sym_eigen input")
    s = (s + s.T) / 2.0
    w, v = np.linalg.eigh(s)
    # eigh is ascending; a stable sort on -w keeps equal eigenvalues in their
    # original (ascending-index) order instead of reversing them.
    order = np.argsort(-w, kind="stable")
    w = w[order]
    v = v[:, order]
    pivot = np.argmax(np.abs(v), axis=0)
    signs = np.where(v[pivot, np.arange(v.shape[1])] < 0, -1.0, 1.0)
    return SymEigen(w, v * signs)


def solve_spd(a, b):
    """Solve a @ x = b for symmetric positive definite `a` via Cholesky.

    Parameters
    ----------
    a : array_like, shape (d, d)
        Symmetric positive definite matrix.
    b : array_like, shape (d,) or (d, k)
        Right-hand side(s).

    Returns
    -------
    ndarray
        Solution with the same trailing shape as `b`.

    Raises
    ------
    SingularMatrixError
        If the Cholesky factorization fails, i.e. `a` is not positive
        definite to working precision.
    """
    a = check_matrix(a, square=True, symmetric=True, name="solve_spd matrix")
    b = np.asarray(b, dtype=np.float64)
    if b.shape[0] != a.shape[0]:
        raise DimensionError(
            f"rhs has leading dim {b.shape[0]}, matrix is {a.shape[0]}x{a.shape[1]}"
        )
    if not np.isfinite(b).all():
        raise NumericError("solve_spd rhs has non-finite entries")
    a = (a + a.T) / 2.0
    try:
        chol = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError(f"matrix is not positive definite: {exc}") from exc
    y = np.linalg.solve(chol, b)
    return np.linalg.solve(chol.T, y)


def frob_norm(a):
    """Frobenius norm of an array of any shape."""
    a = np.asarray(a, dtype=np.float64)
    return float(np.sqrt(np.sum(a * a)))
