"""Parametric bootstrap test of the linear contrast hypothesis A tau = 0.

The null sampler draws residual directions at the constrained estimate
without factoring any (N-p)-dimensional covariance: white noise is scaled
by the small Cholesky factor of the rotated covariance and pushed through
the stored Householder factors.  Each bootstrap replicate then refits the
model twice (free and constrained to the null manifold) on its own draw.

Replicates use independent, index-keyed random substreams, so results are
identical for any worker count and any execution order.
"""

from __future__ import annotations

import multiprocessing
from dataclasses import dataclass

import numpy as np

from .decomp import CholFactor, apply_q, apply_qt
from .errors import BootstrapFailureError, NonConvergenceError, VctestError
from .likelihood import LikelihoodCache, _with_transformed, precompute
from .model import (
    ContrastSpec,
    DesignMatrices,
    Rotation,
    require_covariance_factor,
    rotation_from_contrast,
)
from .optimizer import (
    FitResult,
    MomPlan,
    NewtonOptions,
    _likelihood_evaluator,
    _rotated_evaluator,
    _solve_moment_system,
    modified_newton,
    mom_plan,
    mom_start,
)

__all__ = ["TestResult", "sample_null_residual", "bootstrap_test"]

# a replicate whose two fits are inconsistent beyond this is counted failed
_LR_FLOOR = -1e-8


@dataclass(frozen=True)
class TestResult:
    """Observed fits, bootstrap draws, and the resulting p-values.

    `tau_star`, `lambda_star`, and `nll_star` have one row/entry per
    replicate (NaN where `success` is False).  `p_one` is None for a
    two-sided alternative.  Monte Carlo standard errors use the binomial
    formula at the effective replicate count.
    """

    tau_hat: np.ndarray
    tau_null: np.ndarray
    lr_obs: float
    statistic: str
    tau_star: np.ndarray
    lambda_star: np.ndarray
    nll_star: np.ndarray
    success: np.ndarray
    p_two: float
    p_one: float | None
    mc_se_two: float
    mc_se_one: float | None
    b: int
    n_failed: int
    seed: int
    fit: FitResult
    fit_null: FitResult


def _null_noise(cache: LikelihoodCache, l_null: CholFactor, rng, size: int) -> np.ndarray:
    """White noise adjusted to N(0, Sigma(tau_null)) in Z-rotated coordinates."""
    k = l_null.lower.shape[0]
    omega = rng.standard_normal(size=(cache.n, size))
    omega[:k] = l_null.lower @ omega[:k]
    return omega


def sample_null_residual(
    cache: LikelihoodCache,
    design: DesignMatrices,
    l_null: CholFactor,
    rng: np.random.Generator,
    normalize: bool = True,
    size: int | None = None,
):
    """Residual-direction draws under the fitted null covariance.

    Returns U_X^T omega* where omega* ~ N(0, Sigma(tau_null)); before
    normalization the draw has covariance U_X^T Sigma(tau_null) U_X.  With
    `size`, draws are returned as columns.
    """
    cols = 1 if size is None else int(size)
    v = _null_noise(cache, l_null, rng, cols)
    ambient = apply_q(cache.zqr, v)
    z = apply_qt(cache.xqr, ambient)[design.p :]
    if normalize:
        z = z / np.linalg.norm(z, axis=0, keepdims=True)
    return z[:, 0] if size is None else z


def _refit_pair(cache, rot, tau0, opts):
    """Free and null-constrained fits from a common starting value.

    If the free fit lands above the constrained one (a worse local minimum),
    it is retried from the constrained solution.
    """
    free = modified_newton(_likelihood_evaluator(cache), tau0, opts)
    reduced = modified_newton(_rotated_evaluator(cache, rot), rot.q2.T @ tau0, opts)
    null_tau = rot.q2 @ reduced.tau_hat
    if free.objective > reduced.objective + 1e-10:
        retry = modified_newton(_likelihood_evaluator(cache), null_tau, opts)
        if retry.objective < free.objective:
            free = retry
    return free, reduced, null_tau


_REPLICATE_STATE: dict | None = None


def _init_replicate_state(state):
    global _REPLICATE_STATE
    _REPLICATE_STATE = state


def _moment_start_from_transformed(plan: MomPlan, ut_kernels, v: np.ndarray, ynorm2: float):
    ss_under = np.array([float(np.sum((ut.T @ v) ** 2)) for ut in ut_kernels])
    return _solve_moment_system(plan, ss_under, ynorm2)


def _run_replicate(state: dict, index: int):
    cache = state["cache"]
    rot = state["rot"]
    opts = state["opts"]
    plan = state["plan"]
    l_null = state["l_null"]
    rng = np.random.default_rng(np.random.SeedSequence(state["seed"], spawn_key=(index,)))
    d = cache.d
    try:
        v = _null_noise(cache, l_null, rng, 1)[:, 0]
        ynorm2 = float(v @ v)
        rep_cache = _with_transformed(cache, v, ynorm2)
        tau0 = _moment_start_from_transformed(plan, state["ut_kernels"], v, ynorm2)
        free, reduced, _ = _refit_pair(rep_cache, rot, tau0, opts)
        lam = reduced.objective - free.objective
        ok = free.converged and reduced.converged and lam >= _LR_FLOOR
        return index, free.tau_hat, lam, free.objective, ok
    except VctestError:
        return index, np.full(d, np.nan), np.nan, np.nan, False


def _worker(index: int):
    return _run_replicate(_REPLICATE_STATE, index)


def bootstrap_test(
    design: DesignMatrices,
    response,
    contrast: ContrastSpec | np.ndarray,
    b: int,
    opts: NewtonOptions | None = None,
    seed: int = 0,
    statistic: str = "lr",
    workers: int = 1,
    plus_one: bool = False,
    max_failure_rate: float = 0.01,
    rotation: Rotation | None = None,
    cache: LikelihoodCache | None = None,
    plan: MomPlan | None = None,
) -> TestResult:
    """Parametric bootstrap test of A tau = 0.

    `statistic` selects the exceedance rule: "lr" compares likelihood-ratio
    statistics L(tau_null) - L(tau_hat) between the data and each replicate;
    "raw-minimum" counts replicates whose minimized objective is at least
    the observed minimized objective.  For a one-sided alternative the
    exceedance indicator is additionally intersected with membership of
    A tau*_b in the declared cone.  `plus_one` applies the (B+1)-style
    finite-sample correction to both p-values (off by default).

    Replicates exceeding `max_failure_rate` raise BootstrapFailureError;
    isolated failures are dropped from both numerator and denominator and
    reported in `n_failed`.
    """
    if b < 1:
        raise ValueError("need at least one bootstrap replicate")
    if statistic not in ("lr", "raw-minimum"):
        raise ValueError(f"unknown statistic {statistic!r}")
    if not isinstance(contrast, ContrastSpec):
        contrast = ContrastSpec(a=contrast)
    if contrast.d != design.d:
        raise ValueError(
            f"contrast has {contrast.d} columns but the design has {design.d} components"
        )
    opts = opts or NewtonOptions()
    y = np.asarray(response, dtype=np.float64)
    cache = cache if cache is not None else precompute(design, y)
    plan = plan if plan is not None else mom_plan(design)
    rot = rotation if rotation is not None else rotation_from_contrast(contrast)

    tau0 = mom_start(design, y, plan=plan)
    free, reduced, tau_null = _refit_pair(cache, rot, tau0, opts)
    if not (free.converged and reduced.converged):
        raise NonConvergenceError(
            f"observed fits did not converge (free: {free.status.value}, "
            f"null: {reduced.status.value})"
        )
    lr_obs = reduced.objective - free.objective
    if lr_obs < _LR_FLOOR:
        raise NonConvergenceError(
            f"constrained optimum beats the unconstrained one by {-lr_obs:.3e}"
        )
    l_null = require_covariance_factor(design, cache.zqr, tau_null)

    ut_kernels = tuple(apply_qt(cache.zqr, u) for u in plan.kernels)
    state = {
        "cache": cache,
        "rot": rot,
        "opts": opts,
        "plan": plan,
        "l_null": l_null,
        "seed": int(seed),
        "ut_kernels": ut_kernels,
    }

    if workers > 1:
        ctx = multiprocessing.get_context("fork")
        with ctx.Pool(workers, initializer=_init_replicate_state, initargs=(state,)) as pool:
            results = pool.map(_worker, range(b), chunksize=max(1, b // (4 * workers)))
    else:
        results = [_run_replicate(state, i) for i in range(b)]

    d = design.d
    tau_star = np.full((b, d), np.nan)
    lambda_star = np.full(b, np.nan)
    nll_star = np.full(b, np.nan)
    success = np.zeros(b, dtype=bool)
    for index, tau_hat_b, lam_b, nll_b, ok in results:
        tau_star[index] = tau_hat_b
        lambda_star[index] = lam_b
        nll_star[index] = nll_b
        success[index] = ok

    n_failed = int(b - success.sum())
    if n_failed > max_failure_rate * b:
        raise BootstrapFailureError(
            f"{n_failed} of {b} bootstrap replicates failed to converge "
            f"(limit {max_failure_rate:.1%})"
        )
    b_eff = b - n_failed
    if statistic == "lr":
        exceed = success & (lambda_star >= lr_obs)
    else:
        exceed = success & (nll_star >= free.objective)

    def p_value(count: int) -> float:
        if plus_one:
            return (count + 1) / (b_eff + 1)
        return count / b_eff

    def mc_se(p: float) -> float:
        return float(np.sqrt(p * (1.0 - p) / b_eff))

    p_two = p_value(int(exceed.sum()))
    p_one = None
    se_one = None
    if not contrast.two_sided:
        in_cone = np.zeros(b, dtype=bool)
        a = contrast.a
        for i in range(b):
            if success[i]:
                in_cone[i] = contrast.cone_contains(a @ tau_star[i])
        p_one = p_value(int((exceed & in_cone).sum()))
        se_one = mc_se(p_one)

    # reporting-shape constrained fit (lifted coordinates)
    null_fit = FitResult(
        tau_hat=tau_null,
        objective=reduced.objective,
        grad_norm=reduced.grad_norm,
        iterations=reduced.iterations,
        halvings_total=reduced.halvings_total,
        hessian_eigenvalues=reduced.hessian_eigenvalues,
        status=reduced.status,
        message=reduced.message,
    )
    return TestResult(
        tau_hat=free.tau_hat,
        tau_null=tau_null,
        lr_obs=lr_obs,
        statistic=statistic,
        tau_star=tau_star,
        lambda_star=lambda_star,
        nll_star=nll_star,
        success=success,
        p_two=p_two,
        p_one=p_one,
        mc_se_two=mc_se(p_two),
        mc_se_one=se_one,
        b=b,
        n_failed=n_failed,
        seed=int(seed),
        fit=free,
        fit_null=null_fit,
    )
