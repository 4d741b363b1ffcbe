"""Modified Newton minimization of the residual objective, with
method-of-moments starting values.

The Newton step is repaired through the eigendecomposition of the Hessian:
eigenvalues are replaced by their absolute values plus a ridge kappa, so
ascent directions at indefinite points are reversed into descent directions
and near-singular directions fall back to a long gradient step.  Because the
objective is a barrier for the parameter space, step-halving back toward the
current (feasible) iterate is enough to keep every accepted iterate
feasible; no projection is ever needed.

Starting values equate sequential sums of squares to their expectations and
solve the resulting triangular system.  On balanced designs they satisfy
the first-order conditions exactly and the Newton loop terminates
immediately.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .decomp import kernel_basis, solve_triangular, sym_eig
from .errors import (
    ConfoundedDesignError,
    DegenerateResponseError,
    NumericError,
    OutsideParameterSpaceError,
)
from .likelihood import LikelihoodCache, Objective, evaluate, precompute
from .model import DesignMatrices, Rotation, as_components

__all__ = [
    "NewtonOptions",
    "FitStatus",
    "FitResult",
    "MomPlan",
    "mom_plan",
    "mom_start",
    "modified_newton",
    "fit_unconstrained",
    "fit_constrained",
]

# eigenvalues below this at a converged point mean the stationary point is
# not a local minimum
_MIN_EIGENVALUE = -1e-6


@dataclass(frozen=True)
class NewtonOptions:
    """Tuning constants for the modified Newton iteration.

    kappa ridges the absolute-eigenvalue Hessian repair (the implied
    "gradient step" length is about 1/kappa); grad_tol is the sup-norm
    stopping tolerance on the gradient.  With monotone_guard on, steps that
    increase the objective are halved exactly like infeasible ones.
    """

    kappa: float = 1e-3
    grad_tol: float = 1e-6
    max_iter: int = 100
    max_halvings: int = 60
    monotone_guard: bool = True

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if not self.grad_tol > 0:
            raise ValueError("grad_tol must be positive")


class FitStatus(enum.Enum):
    CONVERGED = "converged"
    MAX_ITERATIONS = "max_iterations"
    LOCAL_GEOMETRY = "local_geometry"


@dataclass(frozen=True)
class FitResult:
    """Outcome of one minimization.

    `hessian_eigenvalues` holds the spectrum at the final point (in the
    reduced coordinates for constrained fits).  `tau_trace` records every
    accepted iterate, starting value included; `objective_trace` the
    matching objective values.
    """

    tau_hat: np.ndarray
    objective: float
    grad_norm: float
    iterations: int
    halvings_total: int
    hessian_eigenvalues: np.ndarray
    status: FitStatus
    message: str = ""
    tau_trace: np.ndarray | None = None
    objective_trace: np.ndarray | None = None

    @property
    def converged(self) -> bool:
        return self.status is FitStatus.CONVERGED


Evaluator = Callable[[np.ndarray, int], Objective]


def _shrink_into_domain(evaluate_fn: Evaluator, tau0: np.ndarray):
    """Halve tau0 toward the origin until it evaluates; 0 is interior."""
    tau = tau0.astype(np.float64, copy=True)
    for _ in range(200):
        try:
            return tau, evaluate_fn(tau, 2)
        except (OutsideParameterSpaceError, NumericError):
            tau = tau / 2.0
    tau = np.zeros_like(tau)
    return tau, evaluate_fn(tau, 2)


def modified_newton(evaluate_fn: Evaluator, tau0, opts: NewtonOptions | None = None) -> FitResult:
    """Minimize a smooth barrier objective from tau0.

    `evaluate_fn(tau, order)` returns an Objective with value (order 0),
    gradient (1), and Hessian (2); infeasible points must raise
    OutsideParameterSpaceError.  Every accepted iterate is feasible, and
    with the monotone guard the objective never increases along the trace.
    """
    opts = opts or NewtonOptions()
    tau0 = np.atleast_1d(np.asarray(tau0, dtype=np.float64))
    d = tau0.shape[0]
    if d == 0:
        value = evaluate_fn(tau0, 0).value
        return FitResult(
            tau_hat=tau0,
            objective=value,
            grad_norm=0.0,
            iterations=0,
            halvings_total=0,
            hessian_eigenvalues=np.zeros(0),
            status=FitStatus.CONVERGED,
            tau_trace=tau0[None, :],
            objective_trace=np.array([value]),
        )

    tau, obj = _shrink_into_domain(evaluate_fn, tau0)
    halvings_total = 0
    trace = [tau.copy()]
    values = [obj.value]

    def finish(status: FitStatus, iterations: int, message: str = "") -> FitResult:
        eigs = sym_eig(obj.hessian).values
        if status is FitStatus.CONVERGED and np.min(eigs) < _MIN_EIGENVALUE:
            status = FitStatus.LOCAL_GEOMETRY
            message = (
                f"gradient criterion met but the Hessian has eigenvalue "
                f"{np.min(eigs):.3e}; stationary point is not a minimum"
            )
        return FitResult(
            tau_hat=tau,
            objective=obj.value,
            grad_norm=float(np.max(np.abs(obj.gradient))),
            iterations=iterations,
            halvings_total=halvings_total,
            hessian_eigenvalues=eigs,
            status=status,
            message=message,
            tau_trace=np.array(trace),
            objective_trace=np.array(values),
        )

    for t in range(opts.max_iter + 1):
        grad = obj.gradient
        if np.max(np.abs(grad)) < opts.grad_tol:
            return finish(FitStatus.CONVERGED, t)
        if t == opts.max_iter:
            return finish(FitStatus.MAX_ITERATIONS, t, "iteration budget exhausted")

        eig = sym_eig(obj.hessian)
        repaired = np.abs(eig.values) + opts.kappa
        step = -eig.vectors @ ((eig.vectors.T @ grad) / repaired)

        candidate = tau + step
        accepted = None
        # slack at the rounding level of the objective, so the guard cannot
        # reject true descent steps whose improvement is below float
        # resolution near the optimum
        slack = 1e-13 * (1.0 + abs(obj.value))
        for _ in range(opts.max_halvings + 1):
            try:
                cand_value = evaluate_fn(candidate, 0).value
            except (OutsideParameterSpaceError, NumericError):
                cand_value = None
            if cand_value is not None and (
                not opts.monotone_guard or cand_value <= obj.value + slack
            ):
                accepted = candidate
                break
            halvings_total += 1
            candidate = tau + (candidate - tau) / 2.0
        if accepted is None:
            return finish(
                FitStatus.LOCAL_GEOMETRY,
                t,
                f"step halving exhausted after {opts.max_halvings} halvings at "
                f"gradient norm {np.max(np.abs(grad)):.3e}",
            )
        tau = accepted
        obj = evaluate_fn(tau, 2)
        trace.append(tau.copy())
        values.append(obj.value)

    raise AssertionError("unreachable")


@dataclass(frozen=True)
class MomPlan:
    """Design-dependent pieces of the moment equations.

    `kernels[j]` is an orthonormal basis of the orthogonal complement of
    [X, Z_1..Z_j] (j = 0..d), `ranks[j]` its column count, and `coeff` the
    upper-triangular coefficient matrix of the expected-sums-of-squares
    system.  Building the plan is the expensive part; solving it for a new
    response costs a few matrix-vector products.
    """

    kernels: tuple[np.ndarray, ...]
    ranks: tuple[int, ...]
    coeff: np.ndarray


def mom_plan(design: DesignMatrices) -> MomPlan:
    """Kernel bases, ranks, and trace coefficients for the moment system."""
    mats = [design.x]
    kernels = [kernel_basis(design.x)]
    for z in design.z_blocks:
        mats.append(z)
        kernels.append(kernel_basis(np.hstack(mats)))
    ranks = tuple(u.shape[1] for u in kernels)
    for j in range(1, len(ranks)):
        if ranks[j] >= ranks[j - 1]:
            raise ConfoundedDesignError(
                f"random-effect block {j} is confounded with its predecessors "
                f"(kernel rank {ranks[j]} did not decrease from {ranks[j - 1]})"
            )
    d = design.d
    coeff = np.zeros((d, d))
    for j in range(d):  # equation index, uses kernels j and j+1
        u_prev, u_next = kernels[j], kernels[j + 1]
        for k in range(j, d):  # component index
            zk = design.z_blocks[k]
            t_prev = float(np.sum((zk.T @ u_prev) ** 2))
            if k == j:
                coeff[j, k] = t_prev
            else:
                t_next = float(np.sum((zk.T @ u_next) ** 2))
                coeff[j, k] = t_prev - t_next
    return MomPlan(kernels=tuple(kernels), ranks=ranks, coeff=coeff)


def _solve_moment_system(plan: MomPlan, ss_under: np.ndarray, total: float) -> np.ndarray:
    """Back-substitute the expected-sums-of-squares system for tau."""
    if ss_under[0] <= 1e-12 * max(total, 1.0):
        raise DegenerateResponseError(
            "response lies in the column space of the fixed-effect matrix"
        )
    r_d = plan.ranks[-1]
    if r_d == 0 or ss_under[-1] <= 0.0:
        raise DegenerateResponseError("no residual variation left to scale by")
    sigma2 = ss_under[-1] / r_d
    d = plan.coeff.shape[0]
    s = np.empty(d)
    for j in range(d):
        ss_j = ss_under[j] - ss_under[j + 1]
        s[j] = ss_j / sigma2 + plan.ranks[j + 1] - plan.ranks[j]
    return solve_triangular(plan.coeff, s, lower=False)


def mom_start(design: DesignMatrices, response, plan: MomPlan | None = None) -> np.ndarray:
    """Method-of-moments starting values.

    Equates the sequential sums of squares SS_j = ||U_{j-1}^T y||^2 -
    ||U_j^T y||^2 to their model expectations and solves the triangular
    system by back substitution, scaling by the residual variance estimate
    ||U_d^T y||^2 / rank(U_d).  Exact (stationary) on balanced designs.
    """
    y = np.asarray(response, dtype=np.float64)
    if y.shape != (design.n,):
        raise ValueError(f"response must have shape ({design.n},), got {y.shape}")
    plan = plan or mom_plan(design)
    ss_under = np.array([float(np.sum((u.T @ y) ** 2)) for u in plan.kernels])
    return _solve_moment_system(plan, ss_under, float(y @ y))


def _likelihood_evaluator(cache: LikelihoodCache) -> Evaluator:
    def ev(tau: np.ndarray, order: int) -> Objective:
        return evaluate(cache, tau, order=order)

    return ev


def _rotated_evaluator(cache: LikelihoodCache, rot: Rotation) -> Evaluator:
    q2 = rot.q2

    def ev(t2: np.ndarray, order: int) -> Objective:
        full = evaluate(cache, q2 @ t2, order=order)
        if order <= 0:
            return full
        grad = q2.T @ full.gradient
        if order == 1:
            return Objective(value=full.value, gradient=grad)
        return Objective(
            value=full.value, gradient=grad, hessian=q2.T @ full.hessian @ q2
        )

    return ev


def fit_unconstrained(
    design: DesignMatrices,
    response,
    opts: NewtonOptions | None = None,
    tau0=None,
    cache: LikelihoodCache | None = None,
    plan: MomPlan | None = None,
) -> FitResult:
    """Minimize the residual objective over the whole parameter space.

    Runs precompute, the moment start (unless `tau0` overrides it), and the
    modified Newton iteration.  `cache` and `plan` allow reusing
    factorizations when fitting many responses over one design.
    """
    cache = cache if cache is not None else precompute(design, response)
    if tau0 is None:
        tau0 = mom_start(design, np.asarray(response, dtype=np.float64), plan=plan)
    else:
        tau0 = as_components(tau0, design.d)
    return modified_newton(_likelihood_evaluator(cache), tau0, opts)


def fit_constrained(
    design: DesignMatrices,
    response,
    rot: Rotation,
    opts: NewtonOptions | None = None,
    tau0=None,
    cache: LikelihoodCache | None = None,
    plan: MomPlan | None = None,
) -> FitResult:
    """Minimize the residual objective over the null manifold {q2 @ t2}.

    The search runs in the (d - d0)-dimensional rotated coordinates with
    gradient q2^T g and Hessian q2^T H q2; the reported estimate is lifted
    back to the original coordinates, where it satisfies the contrast
    exactly.  `grad_norm` and `hessian_eigenvalues` refer to the reduced
    problem.
    """
    cache = cache if cache is not None else precompute(design, response)
    if rot.q2.shape[1] == 0:
        value = evaluate(cache, np.zeros(design.d), order=0).value
        zero = np.zeros(design.d)
        return FitResult(
            tau_hat=zero,
            objective=value,
            grad_norm=0.0,
            iterations=0,
            halvings_total=0,
            hessian_eigenvalues=np.zeros(0),
            status=FitStatus.CONVERGED,
            tau_trace=zero[None, :],
            objective_trace=np.array([value]),
        )
    if tau0 is None:
        tau0 = mom_start(design, np.asarray(response, dtype=np.float64), plan=plan)
    else:
        tau0 = as_components(tau0, design.d)
    reduced = modified_newton(_rotated_evaluator(cache, rot), rot.q2.T @ tau0, opts)
    lifted = rot.q2 @ reduced.tau_hat
    lifted_trace = None
    if reduced.tau_trace is not None:
        lifted_trace = reduced.tau_trace @ rot.q2.T
    return FitResult(
        tau_hat=lifted,
        objective=reduced.objective,
        grad_norm=reduced.grad_norm,
        iterations=reduced.iterations,
        halvings_total=reduced.halvings_total,
        hessian_eigenvalues=reduced.hessian_eigenvalues,
        status=reduced.status,
        message=reduced.message,
        tau_trace=lifted_trace,
        objective_trace=reduced.objective_trace,
    )
