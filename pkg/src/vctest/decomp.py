"""Dense factorization kernel: Householder QR with an implicit orthogonal
factor, Cholesky with failure signaling, triangular solves, and small
symmetric eigendecompositions.

The orthogonal factor of a QR decomposition is never materialized; it is
stored as packed Householder reflectors and applied on demand.  Failure of
the Cholesky factorization is reported as a value (`NotPositiveDefinite`),
not an exception, because positive-definiteness failures drive the
parameter-space barrier logic downstream.

All factor objects are treated as immutable after construction and are safe
to share across threads.  The backend is dense; callers only see the factor
types and the operations below, so a sparse backend can replace this module
without touching call sites.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import get_lapack_funcs
from scipy.linalg import solve_triangular as _scipy_solve_triangular

from .errors import SingularSystemError

__all__ = [
    "QRFactor",
    "CholFactor",
    "NotPositiveDefinite",
    "SymEig",
    "householder_qr",
    "apply_q",
    "apply_qt",
    "cholesky",
    "solve_triangular",
    "sym_eig",
    "kernel_basis",
]


@dataclass(frozen=True)
class QRFactor:
    """Packed Householder QR of an n_rows x n_cols matrix M.

    `reflectors` holds the LAPACK-packed reflector vectors (R in the upper
    triangle, reflector tails below the diagonal) and `coefficients` the
    scalar multipliers, so that M = P (R^T, 0^T)^T with P orthogonal and
    implicit.  `r_factor` is the min(n_rows, n_cols) x n_cols upper
    triangular/trapezoidal block.
    """

    reflectors: np.ndarray
    coefficients: np.ndarray
    r_factor: np.ndarray
    n_rows: int
    n_cols: int


@dataclass(frozen=True)
class CholFactor:
    """Lower-triangular L with L L^T equal to the factored matrix."""

    lower: np.ndarray


@dataclass(frozen=True)
class NotPositiveDefinite:
    """Cholesky failure: the pivot at `index` fell at or below the floor."""

    index: int
    pivot: float


@dataclass(frozen=True)
class SymEig:
    """Eigendecomposition of a symmetric matrix, eigenvalues descending."""

    values: np.ndarray
    vectors: np.ndarray


def _as_matrix(m) -> np.ndarray:
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"expected a 2-d array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix contains non-finite entries")
    return a


def householder_qr(m) -> QRFactor:
    """Factor M = P (R^T, 0^T)^T via Householder reflections.

    The reflector sign is chosen by LAPACK to avoid cancellation, so the
    diagonal of R may be negative; downstream contracts are invariant to
    that convention.
    """
    a = _as_matrix(m)
    n, k = a.shape
    if k == 0:
        return QRFactor(
            reflectors=np.zeros((n, 0)),
            coefficients=np.zeros(0),
            r_factor=np.zeros((0, 0)),
            n_rows=n,
            n_cols=0,
        )
    (geqrf,) = get_lapack_funcs(("geqrf",), (a,))
    qr, tau, work, info = geqrf(a, lwork=-1, overwrite_a=False)
    qr, tau, work, info = geqrf(a, lwork=int(work[0].real), overwrite_a=False)
    if info != 0:
        raise RuntimeError(f"geqrf failed with info={info}")
    k0 = min(n, k)
    r = np.triu(qr[:k0, :])
    return QRFactor(
        reflectors=np.asfortranarray(qr[:, :k0]),
        coefficients=tau[:k0],
        r_factor=r,
        n_rows=n,
        n_cols=k,
    )


def _apply_orthogonal(f: QRFactor, v, trans: str) -> np.ndarray:
    x = np.asarray(v, dtype=np.float64)
    one_d = x.ndim == 1
    if one_d:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] != f.n_rows:
        raise ValueError(
            f"vector length {x.shape[0]} does not match factor rows {f.n_rows}"
        )
    if f.coefficients.size == 0 or x.shape[1] == 0:
        out = x.copy()
    else:
        (ormqr,) = get_lapack_funcs(("ormqr",), (f.reflectors,))
        c = np.asfortranarray(x)
        cq, work, info = ormqr(
            "L", trans, f.reflectors, f.coefficients, c, lwork=-1
        )
        cq, work, info = ormqr(
            "L", trans, f.reflectors, f.coefficients, c,
            lwork=int(work[0].real),
        )
        if info != 0:
            raise RuntimeError(f"ormqr failed with info={info}")
        out = cq
    return np.ascontiguousarray(out[:, 0] if one_d else out)


def apply_q(f: QRFactor, v) -> np.ndarray:
    """Return P v without materializing the orthogonal factor P."""
    return _apply_orthogonal(f, v, "N")


def apply_qt(f: QRFactor, v) -> np.ndarray:
    """Return P^T v without materializing the orthogonal factor P."""
    return _apply_orthogonal(f, v, "T")


def cholesky(s, min_pivot: float = 0.0) -> CholFactor | NotPositiveDefinite:
    """Cholesky factorization of a symmetric matrix, lower triangle only.

    Returns `NotPositiveDefinite` exactly when a pivot falls at or below
    `min_pivot` (default 0).  Only the lower triangle of `s` is read, so
    symmetry of the input is enforced structurally.
    """
    a = _as_matrix(s)
    n, k = a.shape
    if n != k:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if n == 0:
        return CholFactor(lower=np.zeros((0, 0)))
    (potrf,) = get_lapack_funcs(("potrf",), (a,))
    c, info = potrf(a, lower=1, clean=1, overwrite_a=False)
    if info > 0:
        i = info - 1
        pivot = float(a[i, i] - c[i, :i] @ c[i, :i])
        return NotPositiveDefinite(index=i, pivot=pivot)
    if info < 0:
        raise RuntimeError(f"potrf failed with info={info}")
    if min_pivot > 0.0:
        pivots = np.diag(c) ** 2
        bad = np.nonzero(pivots <= min_pivot)[0]
        if bad.size:
            i = int(bad[0])
            return NotPositiveDefinite(index=i, pivot=float(pivots[i]))
    return CholFactor(lower=c)


def solve_triangular(l, b, transposed: bool = False, lower: bool = True):
    """Solve L x = b (or L^T x = b with `transposed`) for triangular L.

    `l` may be a CholFactor (always lower triangular) or a raw triangular
    matrix with the `lower` flag describing its shape.
    """
    if isinstance(l, CholFactor):
        mat = l.lower
        lower = True
    else:
        mat = _as_matrix(l)
    if mat.shape[0] != mat.shape[1]:
        raise ValueError(f"triangular matrix must be square, got {mat.shape}")
    diag = np.diag(mat)
    if np.any(diag == 0.0):
        raise SingularSystemError(
            f"zero diagonal at position {int(np.argmin(np.abs(diag)))}"
        )
    rhs = np.asarray(b, dtype=np.float64)
    if rhs.shape[:1] != (mat.shape[0],):
        raise ValueError(
            f"right-hand side length {rhs.shape[0] if rhs.ndim else '?'} "
            f"does not match system size {mat.shape[0]}"
        )
    return _scipy_solve_triangular(
        mat, rhs, trans="T" if transposed else "N", lower=lower,
        check_finite=False,
    )


def sym_eig(h) -> SymEig:
    """Eigendecomposition of a small symmetric matrix, values descending."""
    a = _as_matrix(h)
    if a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    values, vectors = np.linalg.eigh(a, UPLO="L")
    return SymEig(values=values[::-1].copy(), vectors=vectors[:, ::-1].copy())


def _rank_tolerance(r_diag: np.ndarray, n: int) -> float:
    if r_diag.size == 0:
        return 0.0
    return n * np.finfo(np.float64).eps * float(np.max(np.abs(r_diag)))


def kernel_basis(m) -> np.ndarray:
    """Orthonormal basis U of the orthogonal complement of col(M).

    U^T M = 0 and U^T U = I, with N - rank(M) columns.  A diagonal entry of
    R counts as zero when |R_ii| <= N * eps * max_j |R_jj|.  Columns whose
    diagonal is numerically zero are dropped and the factorization repeated,
    which handles dependent columns in any position.
    """
    a = _as_matrix(m)
    n = a.shape[0]

    def qr_rank_split(mat):
        f = householder_qr(mat)
        d = np.diag(f.r_factor)
        tol = _rank_tolerance(d, n)
        dead = np.nonzero(np.abs(d) <= tol)[0]
        return f, dead

    work = a
    f, dead = qr_rank_split(work)
    if dead.size:
        keep = np.setdiff1d(np.arange(work.shape[1]), dead)
        candidate = work[:, keep]
        f2, dead2 = qr_rank_split(candidate)
        while dead2.size:
            # drop the first offending column and retry; each pass removes
            # a column that lies in the span of those before it
            keep2 = np.setdiff1d(np.arange(candidate.shape[1]), dead2[:1])
            candidate = candidate[:, keep2]
            f2, dead2 = qr_rank_split(candidate)
        f, work = f2, candidate
    rank = work.shape[1] if f.coefficients.size else 0
    rank = min(rank, n)
    u = apply_q(f, np.eye(n)[:, rank:])
    # guard against a mis-ranked split (possible only for adversarial
    # column orderings); redo one column at a time if the basis is impure
    if a.shape[1] and u.shape[1]:
        scale = max(1.0, float(np.max(np.abs(a))))
        if np.max(np.abs(u.T @ a)) > 1e-8 * scale:
            candidate = a
            f, dead = qr_rank_split(candidate)
            while dead.size:
                keep = np.setdiff1d(np.arange(candidate.shape[1]), dead[:1])
                candidate = candidate[:, keep]
                f, dead = qr_rank_split(candidate)
            rank = min(candidate.shape[1], n)
            u = apply_q(f, np.eye(n)[:, rank:])
    return u
