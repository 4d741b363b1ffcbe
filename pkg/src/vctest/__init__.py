"""Variance-components models over the full feasible parameter space, with
parametric bootstrap tests of linear contrasts between components."""

from .bootstrap import TestResult, bootstrap_test, sample_null_residual
from .designs import (
    CrossedLayout,
    NestedLayout,
    SimulationConfig,
    crossed_design,
    gen_unbalanced_crossed,
    gen_unbalanced_nested,
    nested_design,
    simulate_response,
)
from .errors import (
    BootstrapFailureError,
    ConfoundedDesignError,
    DegenerateResponseError,
    MissingFixtureError,
    NonConvergenceError,
    NumericError,
    OutsideParameterSpaceError,
    SingularSystemError,
    VctestError,
)
from .estimators import VarianceComponents, VarianceContrastTest
from .likelihood import LikelihoodCache, nrll, nrll_gradient, nrll_hessian, precompute
from .model import (
    ContrastSpec,
    DesignMatrices,
    Rotation,
    in_parameter_space,
    lift,
    make_design,
    rotation_from_contrast,
)
from .optimizer import (
    FitResult,
    FitStatus,
    NewtonOptions,
    fit_constrained,
    fit_unconstrained,
    modified_newton,
    mom_start,
)

__version__ = "0.1.0"

__all__ = [
    "TestResult",
    "bootstrap_test",
    "sample_null_residual",
    "CrossedLayout",
    "NestedLayout",
    "SimulationConfig",
    "crossed_design",
    "gen_unbalanced_crossed",
    "gen_unbalanced_nested",
    "nested_design",
    "simulate_response",
    "BootstrapFailureError",
    "ConfoundedDesignError",
    "DegenerateResponseError",
    "MissingFixtureError",
    "NonConvergenceError",
    "NumericError",
    "OutsideParameterSpaceError",
    "SingularSystemError",
    "VctestError",
    "VarianceComponents",
    "VarianceContrastTest",
    "LikelihoodCache",
    "nrll",
    "nrll_gradient",
    "nrll_hessian",
    "precompute",
    "ContrastSpec",
    "DesignMatrices",
    "Rotation",
    "in_parameter_space",
    "lift",
    "make_design",
    "rotation_from_contrast",
    "FitResult",
    "FitStatus",
    "NewtonOptions",
    "fit_constrained",
    "fit_unconstrained",
    "modified_newton",
    "mom_start",
    "__version__",
]
