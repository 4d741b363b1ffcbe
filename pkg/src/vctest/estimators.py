"""Estimator-style wrappers with the scikit-learn calling conventions.

Constructor arguments are configuration only and are stored unmodified;
`fit` consumes the data and sets trailing-underscore attributes.
`get_params`/`set_params` make the classes compose with parameter sweeps
and pipelines in the wider ecosystem.
"""

from __future__ import annotations

import inspect

import numpy as np

from .bootstrap import bootstrap_test
from .model import ContrastSpec, DesignMatrices
from .optimizer import NewtonOptions, fit_unconstrained

__all__ = ["VarianceComponents", "VarianceContrastTest"]


class _ParamsMixin:
    @classmethod
    def _param_names(cls):
        sig = inspect.signature(cls.__init__)
        return [p for p in sig.parameters if p != "self"]

    def get_params(self, deep: bool = True) -> dict:
        return {name: getattr(self, name) for name in self._param_names()}

    def set_params(self, **params):
        valid = set(self._param_names())
        for key, value in params.items():
            if key not in valid:
                raise ValueError(f"invalid parameter {key!r} for {type(self).__name__}")
            setattr(self, key, value)
        return self

    def _options(self) -> NewtonOptions:
        return NewtonOptions(
            kappa=self.kappa,
            grad_tol=self.grad_tol,
            max_iter=self.max_iter,
            max_halvings=self.max_halvings,
            monotone_guard=self.monotone_guard,
        )


def _check_fit_inputs(design, y):
    if not isinstance(design, DesignMatrices):
        raise TypeError("design must be a DesignMatrices (see vctest.model.make_design)")
    y = np.asarray(y, dtype=np.float64).ravel()
    if y.shape != (design.n,):
        raise ValueError(f"y must have {design.n} entries, got {y.shape}")
    return y


class VarianceComponents(_ParamsMixin):
    """Variance-component estimation over the full feasible set.

    After `fit(design, y)`: `tau_` holds the estimated components,
    `objective_` the minimized criterion, `n_iter_` the Newton iteration
    count, `hessian_eigenvalues_` the curvature spectrum at the optimum,
    and `converged_` the status flag.
    """

    def __init__(self, kappa=1e-3, grad_tol=1e-6, max_iter=100, max_halvings=60,
                 monotone_guard=True):
        self.kappa = kappa
        self.grad_tol = grad_tol
        self.max_iter = max_iter
        self.max_halvings = max_halvings
        self.monotone_guard = monotone_guard

    def fit(self, design: DesignMatrices, y):
        y = _check_fit_inputs(design, y)
        result = fit_unconstrained(design, y, self._options())
        self.result_ = result
        self.tau_ = result.tau_hat
        self.objective_ = result.objective
        self.grad_norm_ = result.grad_norm
        self.n_iter_ = result.iterations
        self.hessian_eigenvalues_ = result.hessian_eigenvalues
        self.status_ = result.status.value
        self.converged_ = result.converged
        return self


class VarianceContrastTest(_ParamsMixin):
    """Parametric bootstrap test of a linear contrast of the components.

    After `fit(design, y)`: `p_value_` holds the two-sided p-value,
    `p_value_one_sided_` the cone-restricted one (None for a two-sided
    alternative), `statistic_` the observed likelihood-ratio value, and
    `result_` the full record of the bootstrap draws.
    """

    def __init__(self, contrast=None, alternative="two-sided", n_boot=1000,
                 seed=0, statistic="lr", workers=1, kappa=1e-3, grad_tol=1e-6,
                 max_iter=100, max_halvings=60, monotone_guard=True):
        self.contrast = contrast
        self.alternative = alternative
        self.n_boot = n_boot
        self.seed = seed
        self.statistic = statistic
        self.workers = workers
        self.kappa = kappa
        self.grad_tol = grad_tol
        self.max_iter = max_iter
        self.max_halvings = max_halvings
        self.monotone_guard = monotone_guard

    def fit(self, design: DesignMatrices, y):
        y = _check_fit_inputs(design, y)
        if self.contrast is None:
            raise ValueError("contrast must be set before fitting")
        spec = (
            self.contrast
            if isinstance(self.contrast, ContrastSpec)
            else ContrastSpec(a=np.asarray(self.contrast, dtype=np.float64),
                              alternative=self.alternative)
        )
        result = bootstrap_test(
            design,
            y,
            spec,
            b=self.n_boot,
            opts=self._options(),
            seed=self.seed,
            statistic=self.statistic,
            workers=self.workers,
        )
        self.result_ = result
        self.tau_ = result.tau_hat
        self.tau_null_ = result.tau_null
        self.statistic_ = result.lr_obs
        self.p_value_ = result.p_two
        self.p_value_one_sided_ = result.p_one
        return self
