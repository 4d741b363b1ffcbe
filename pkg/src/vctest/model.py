"""Model definition: design matrices, the spectrahedral parameter space, and
the contrast rotation.

The parameter space is the open set of component vectors tau for which
I_N + sum_j tau_j Z_j Z_j^T stays positive definite.  Membership is decided
through the m x m Cholesky factorization of R_Z D(tau) R_Z^T + I rather than
any N x N eigenvalue computation; the two are equivalent through the block
decomposition of the covariance, and the small factorization is the one the
likelihood needs anyway.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .decomp import CholFactor, NotPositiveDefinite, QRFactor, apply_q, cholesky, householder_qr
from .errors import OutsideParameterSpaceError

__all__ = [
    "DesignMatrices",
    "ContrastSpec",
    "Rotation",
    "OutsideParameterSpace",
    "make_design",
    "as_components",
    "component_diagonal",
    "build_covariance_factor",
    "in_parameter_space",
    "rotation_from_contrast",
    "lift",
]

# Cholesky pivots at or below this floor count as outside the parameter
# space: the objective is a barrier and near-singular covariances overflow
# its log terms.
PIVOT_FLOOR = 1e-12

_EPS = np.finfo(np.float64).eps


@dataclass(frozen=True)
class DesignMatrices:
    """Fixed-effect matrix X and random-effect blocks Z_1..Z_d.

    `z_concat` is the column concatenation [Z_1 : ... : Z_d] and
    `block_slices[j]` the column range of block j inside it.  Treat all
    arrays as read-only; instances are shared freely across threads.
    """

    x: np.ndarray
    z_blocks: tuple[np.ndarray, ...]
    z_concat: np.ndarray
    block_slices: tuple[slice, ...]
    factor_names: tuple[str, ...] | None = None

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def d(self) -> int:
        return len(self.z_blocks)

    @property
    def m(self) -> int:
        return self.z_concat.shape[1]

    @property
    def block_sizes(self) -> tuple[int, ...]:
        return tuple(z.shape[1] for z in self.z_blocks)

    def block_index(self) -> np.ndarray:
        """Map from column of z_concat to its component index."""
        idx = np.empty(self.m, dtype=np.intp)
        for j, s in enumerate(self.block_slices):
            idx[s] = j
        return idx


@dataclass(frozen=True)
class OutsideParameterSpace:
    """Covariance factorization failed: tau is not in the parameter space."""

    tau: np.ndarray
    pivot_index: int
    pivot: float


def make_design(x, z_blocks, factor_names=None) -> DesignMatrices:
    """Validate and assemble the design matrices.

    Requires N > p >= 1, d >= 1, full column rank of `x` (checked through
    the QR diagonal rank rule), and finite entries throughout.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ValueError("x must be a 2-d array")
    n, p = x.shape
    if p < 1:
        raise ValueError("x needs at least one column")
    if not np.all(np.isfinite(x)):
        raise ValueError("x contains non-finite entries")
    blocks = []
    for j, z in enumerate(z_blocks):
        z = np.asarray(z, dtype=np.float64)
        if z.ndim != 2 or z.shape[0] != n:
            raise ValueError(f"random-effect block {j} has shape {z.shape}, expected ({n}, m_j)")
        if z.shape[1] < 1:
            raise ValueError(f"random-effect block {j} has no columns")
        if not np.all(np.isfinite(z)):
            raise ValueError(f"random-effect block {j} contains non-finite entries")
        blocks.append(z)
    if not blocks:
        raise ValueError("at least one random-effect block is required")
    if n <= p:
        raise ValueError(f"need more observations than fixed effects (N={n}, p={p})")
    f = householder_qr(x)
    diag = np.abs(np.diag(f.r_factor))
    if diag.size == 0 or np.min(diag) <= n * _EPS * max(float(np.max(diag)), _EPS):
        raise ValueError("x is rank deficient")
    slices = []
    start = 0
    for z in blocks:
        slices.append(slice(start, start + z.shape[1]))
        start += z.shape[1]
    if factor_names is not None:
        factor_names = tuple(str(s) for s in factor_names)
        if len(factor_names) != len(blocks):
            raise ValueError("one factor name per random-effect block")
    return DesignMatrices(
        x=x,
        z_blocks=tuple(blocks),
        z_concat=np.hstack(blocks),
        block_slices=tuple(slices),
        factor_names=factor_names,
    )


def as_components(tau, d: int) -> np.ndarray:
    """Coerce tau to a finite d-vector. Signs are unrestricted."""
    t = np.atleast_1d(np.asarray(tau, dtype=np.float64))
    if t.shape != (d,):
        raise ValueError(f"expected {d} variance components, got shape {t.shape}")
    if not np.all(np.isfinite(t)):
        raise ValueError("variance components must be finite")
    return t


def component_diagonal(design: DesignMatrices, tau: np.ndarray) -> np.ndarray:
    """The m-vector assigning tau_j to every column of block j."""
    d = np.empty(design.m)
    for j, s in enumerate(design.block_slices):
        d[s] = tau[j]
    return d


def build_covariance_factor(
    design: DesignMatrices, zqr: QRFactor, tau
) -> CholFactor | OutsideParameterSpace:
    """Cholesky factor L(tau) with L L^T = R_Z D(tau) R_Z^T + I.

    Returns `OutsideParameterSpace` exactly when that matrix is not positive
    definite, which happens if and only if I + Z D(tau) Z^T is not.
    """
    tau = as_components(tau, design.d)
    r = zqr.r_factor  # (k, m) with k = min(N, m)
    dvec = component_diagonal(design, tau)
    s = (r * dvec) @ r.T
    k = s.shape[0]
    s[np.diag_indices(k)] += 1.0
    out = cholesky(s, min_pivot=PIVOT_FLOOR)
    if isinstance(out, NotPositiveDefinite):
        return OutsideParameterSpace(tau=tau, pivot_index=out.index, pivot=out.pivot)
    return out


def in_parameter_space(design: DesignMatrices, zqr: QRFactor, tau) -> bool:
    """True iff I + Z D(tau) Z^T is (numerically) positive definite."""
    return isinstance(build_covariance_factor(design, zqr, tau), CholFactor)


def require_covariance_factor(design: DesignMatrices, zqr: QRFactor, tau) -> CholFactor:
    """As build_covariance_factor, but raising on infeasible tau."""
    out = build_covariance_factor(design, zqr, tau)
    if isinstance(out, OutsideParameterSpace):
        raise OutsideParameterSpaceError(
            out.tau, f"pivot {out.pivot:.3e} at index {out.pivot_index}"
        )
    return out


@dataclass(frozen=True, eq=False)
class ContrastSpec:
    """Full-row-rank contrast matrix A with its alternative.

    `alternative` is either the string "two-sided" or a per-row tuple of
    cone constraints drawn from {"greater", "less", "free"} (not all free).
    Rows may be in any scale; no normalization is applied.
    """

    a: np.ndarray
    alternative: str | tuple[str, ...] = "two-sided"

    def __eq__(self, other):
        if not isinstance(other, ContrastSpec):
            return NotImplemented
        return (
            self.a.shape == other.a.shape
            and np.array_equal(self.a, other.a)
            and self.alternative == other.alternative
        )

    def __hash__(self):
        return hash((self.a.tobytes(), self.a.shape, self.alternative))

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.a, dtype=np.float64))
        if not np.all(np.isfinite(a)):
            raise ValueError("contrast matrix contains non-finite entries")
        d0, d = a.shape
        if d0 > d:
            raise ValueError(f"contrast has more rows ({d0}) than components ({d})")
        f = householder_qr(a.T)
        diag = np.abs(np.diag(f.r_factor))
        if diag.size == 0 or np.min(diag) <= d * _EPS * max(float(np.max(diag)), _EPS):
            raise ValueError("contrast matrix is rank deficient")
        object.__setattr__(self, "a", a)
        alt = self.alternative
        if isinstance(alt, str) and alt == "two-sided":
            return
        if isinstance(alt, str):
            alt = (alt,)
        alt = tuple(alt)
        if len(alt) != d0:
            raise ValueError(f"need one cone constraint per contrast row, got {len(alt)} for {d0}")
        for token in alt:
            if token not in ("greater", "less", "free"):
                raise ValueError(f"unknown cone constraint {token!r}")
        if all(t == "free" for t in alt):
            raise ValueError("one-sided alternative cannot be free in every row")
        object.__setattr__(self, "alternative", alt)

    @property
    def d0(self) -> int:
        return self.a.shape[0]

    @property
    def d(self) -> int:
        return self.a.shape[1]

    @property
    def two_sided(self) -> bool:
        return self.alternative == "two-sided"

    def cone_contains(self, values: np.ndarray) -> bool:
        """Whether A tau-hat lies in the declared cone (one-sided only)."""
        if self.two_sided:
            raise ValueError("two-sided alternative has no cone")
        for token, v in zip(self.alternative, np.atleast_1d(values)):
            if token == "greater" and not v > 0:
                return False
            if token == "less" and not v < 0:
                return False
        return True


@dataclass(frozen=True)
class Rotation:
    """Orthogonal rotation from the QR of A^T.

    q_full = [q1 : q2] with A tau = 0 iff q1^T tau = 0; the null manifold is
    {q2 @ t2 : t2 in R^(d-d0)}.
    """

    q_full: np.ndarray
    q1: np.ndarray
    q2: np.ndarray
    r_a: np.ndarray

    @property
    def d(self) -> int:
        return self.q_full.shape[0]

    @property
    def d0(self) -> int:
        return self.q1.shape[1]

    def flip_signs(self, columns=None) -> "Rotation":
        """Rotation with the given q2 columns negated (same null manifold)."""
        q2 = self.q2.copy()
        cols = range(q2.shape[1]) if columns is None else columns
        for c in cols:
            q2[:, c] = -q2[:, c]
        q_full = np.column_stack([self.q1, q2]) if q2.size else self.q_full.copy()
        return Rotation(q_full=q_full, q1=self.q1, q2=q2, r_a=self.r_a)


def rotation_from_contrast(contrast: ContrastSpec | np.ndarray) -> Rotation:
    """QR-based rotation splitting components into tested and null parts."""
    if not isinstance(contrast, ContrastSpec):
        contrast = ContrastSpec(a=contrast)
    a = contrast.a
    d0, d = a.shape
    f = householder_qr(a.T)
    q_full = apply_q(f, np.eye(d))
    return Rotation(
        q_full=q_full,
        q1=q_full[:, :d0],
        q2=q_full[:, d0:],
        r_a=f.r_factor[:d0, :d0],
    )


def lift(rot: Rotation, tau2) -> np.ndarray:
    """Map null-space coordinates t2 to components tau = q2 @ t2."""
    t2 = np.atleast_1d(np.asarray(tau2, dtype=np.float64))
    if t2.shape != (rot.q2.shape[1],):
        raise ValueError(f"expected {rot.q2.shape[1]} null coordinates, got shape {t2.shape}")
    return rot.q2 @ t2
