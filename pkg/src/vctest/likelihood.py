"""Normalized residual log-likelihood, its gradient, and its Hessian.

The objective is twice the negative log marginal density of the unit-norm
residual direction q = U_X^T y / ||U_X^T y||:

    L(tau) = log|U_X^T S(tau) U_X| + (N - p) log[q^T {U_X^T S(tau) U_X}^-1 q]

with S(tau) = I + Z D(tau) Z^T.  Direct evaluation would factor a dense
(N-p) x (N-p) matrix; instead every quantity is pushed through the QR
factors of X and Z and the small Cholesky factor of R_Z D(tau) R_Z^T + I,
so an evaluation costs a handful of m x m triangular operations.  L is a
barrier for the parameter space: it diverges on the boundary, and infeasible
tau raises `OutsideParameterSpaceError` rather than producing a float.

L(0) = 0 exactly, and the value depends on the response only through q, so
it is invariant to rescaling y and to shifts inside the column space of X.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .decomp import (
    CholFactor,
    NotPositiveDefinite,
    QRFactor,
    apply_q,
    apply_qt,
    cholesky,
    householder_qr,
    solve_triangular,
)
from .errors import DegenerateResponseError, NumericError
from .model import DesignMatrices, as_components, require_covariance_factor

__all__ = [
    "LikelihoodCache",
    "Objective",
    "precompute",
    "with_response",
    "nrll",
    "nrll_gradient",
    "nrll_hessian",
    "evaluate",
]

# responses whose residual sum of squares falls below this relative floor
# carry no information about the variance components
_DEGENERATE_REL = 1e-12


@dataclass(frozen=True)
class LikelihoodCache:
    """Factorizations and transformed vectors for repeated evaluation.

    Immutable after construction; evaluations allocate their own scratch,
    so one cache may serve many threads.  `t_x` and `t_y` are the images of
    the explicit Q_X block and of y under the transpose of the implicit
    orthogonal factor of Z, split at row `k_split` by the evaluator.
    """

    design: DesignMatrices
    xqr: QRFactor
    zqr: QRFactor
    r_z: np.ndarray
    q_x: np.ndarray
    t_x: np.ndarray
    t_y: np.ndarray
    resid_ss: float
    k_split: int

    @property
    def n(self) -> int:
        return self.design.n

    @property
    def p(self) -> int:
        return self.design.p

    @property
    def d(self) -> int:
        return self.design.d


@dataclass(frozen=True)
class Objective:
    """Value and optionally derivatives of the objective at one point."""

    value: float
    gradient: np.ndarray | None = None
    hessian: np.ndarray | None = None


def _check_response(y, n: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (n,):
        raise ValueError(f"response must have shape ({n},), got {y.shape}")
    if not np.all(np.isfinite(y)):
        raise ValueError("response contains non-finite values")
    return y


def precompute(design: DesignMatrices, response) -> LikelihoodCache:
    """One QR of X, one QR of Z, and the transformed response products."""
    y = _check_response(response, design.n)
    xqr = householder_qr(design.x)
    zqr = householder_qr(design.z_concat)
    q_x = apply_q(xqr, np.eye(design.n)[:, : design.p])
    t_x = apply_qt(zqr, q_x)
    t_y = apply_qt(zqr, y)
    resid_ss = _residual_ss(xqr, y, design.p)
    return LikelihoodCache(
        design=design,
        xqr=xqr,
        zqr=zqr,
        r_z=zqr.r_factor,
        q_x=q_x,
        t_x=t_x,
        t_y=t_y,
        resid_ss=resid_ss,
        k_split=zqr.r_factor.shape[0],
    )


def _residual_ss(xqr: QRFactor, y: np.ndarray, p: int) -> float:
    tail = apply_qt(xqr, y)[p:]
    resid_ss = float(tail @ tail)
    if resid_ss <= _DEGENERATE_REL * float(y @ y):
        raise DegenerateResponseError(
            "response lies in the column space of the fixed-effect matrix"
        )
    return resid_ss


def with_response(cache: LikelihoodCache, response) -> LikelihoodCache:
    """New cache for a different response over the same design.

    Reuses both QR factorizations; only the transformed response changes.
    """
    y = _check_response(response, cache.n)
    return dataclasses.replace(
        cache,
        t_y=apply_qt(cache.zqr, y),
        resid_ss=_residual_ss(cache.xqr, y, cache.p),
    )


def _with_transformed(cache: LikelihoodCache, t_y: np.ndarray, ynorm2: float) -> LikelihoodCache:
    """Cache for a response given directly in Z-rotated coordinates.

    Used by the null sampler, whose draws are born as P_Z^T y; skips the
    Householder round trip.  `ynorm2` is ||y||^2 (= ||t_y||^2).
    """
    qty = cache.t_x.T @ t_y
    resid_ss = float(ynorm2 - qty @ qty)
    if resid_ss <= _DEGENERATE_REL * ynorm2:
        raise DegenerateResponseError(
            "response lies in the column space of the fixed-effect matrix"
        )
    return dataclasses.replace(cache, t_y=t_y, resid_ss=resid_ss)


def _solve_spd(chol: CholFactor, rhs):
    half = solve_triangular(chol, rhs)
    return solve_triangular(chol, half, transposed=True)


def evaluate(cache: LikelihoodCache, tau, order: int = 2) -> Objective:
    """Objective value (order 0), plus gradient (1) and Hessian (2).

    Raises OutsideParameterSpaceError when tau is infeasible and
    NumericError if an intermediate quantity degenerates.
    """
    design = cache.design
    tau = as_components(tau, design.d)
    factor = require_covariance_factor(design, cache.zqr, tau)
    lmat = factor.lower
    k = cache.k_split
    n, p = cache.n, cache.p

    tx1, tx2 = cache.t_x[:k], cache.t_x[k:]
    ty1, ty2 = cache.t_y[:k], cache.t_y[k:]

    rhs = np.column_stack([tx1, ty1])
    sol = solve_triangular(factor, rhs)
    wx, wy = sol[:, :p], sol[:, p]

    c = wx.T @ wx + tx2.T @ tx2
    cy = wx.T @ wy + tx2.T @ ty2
    ysy = float(wy @ wy + ty2 @ ty2)

    cchol = cholesky(c)
    if isinstance(cchol, NotPositiveDefinite):
        raise NumericError(tau, "projected precision matrix lost definiteness")
    ci_cy = _solve_spd(cchol, cy)
    quad = ysy - float(cy @ ci_cy)
    if not np.isfinite(quad) or quad <= 0.0:
        raise NumericError(tau, f"residual quadratic form {quad!r} not positive")

    logdet_sigma = 2.0 * float(np.sum(np.log(np.diag(lmat))))
    logdet_c = 2.0 * float(np.sum(np.log(np.diag(cchol.lower))))
    value = logdet_sigma + logdet_c + (n - p) * (np.log(quad) - np.log(cache.resid_ss))
    if not np.isfinite(value):
        raise NumericError(tau, "objective value overflowed")
    if order <= 0:
        return Objective(value=value)

    kmat = solve_triangular(factor, cache.r_z)
    t = wx.T @ kmat
    f = kmat.T @ kmat - t.T @ _solve_spd(cchol, t)
    u = kmat.T @ (wy - wx @ ci_cy)

    slices = design.block_slices
    d = design.d
    grad = np.empty(d)
    unorm2 = np.empty(d)
    for j, sj in enumerate(slices):
        uj = u[sj]
        unorm2[j] = uj @ uj
        grad[j] = np.trace(f[sj, sj]) - (n - p) * unorm2[j] / quad
    if not np.all(np.isfinite(grad)):
        raise NumericError(tau, "gradient overflowed")
    if order == 1:
        return Objective(value=value, gradient=grad)

    hess = np.empty((d, d))
    for j, sj in enumerate(slices):
        uj = u[sj]
        for l in range(j, d):
            sl = slices[l]
            fjl = f[sj, sl]
            cross = float(uj @ fjl @ u[sl])
            hjl = -float(np.sum(fjl * fjl)) + (n - p) * (
                2.0 * cross / quad - unorm2[j] * unorm2[l] / quad**2
            )
            hess[j, l] = hjl
            hess[l, j] = hjl
    if not np.all(np.isfinite(hess)):
        raise NumericError(tau, "Hessian overflowed")
    return Objective(value=value, gradient=grad, hessian=hess)


def nrll(cache: LikelihoodCache, tau) -> float:
    """Objective value at tau; conceptually +inf outside the feasible set."""
    return evaluate(cache, tau, order=0).value


def nrll_gradient(cache: LikelihoodCache, tau) -> np.ndarray:
    return evaluate(cache, tau, order=1).gradient


def nrll_hessian(cache: LikelihoodCache, tau) -> np.ndarray:
    return evaluate(cache, tau, order=2).hessian
