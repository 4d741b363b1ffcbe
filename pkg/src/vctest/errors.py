"""Exception types shared across the package."""

from __future__ import annotations


class VctestError(Exception):
    """Base class for all package-specific errors."""


class SingularSystemError(VctestError):
    """A triangular system has a zero diagonal entry."""


class DegenerateResponseError(VctestError):
    """The response lies in the column space of the fixed-effect matrix."""


class ConfoundedDesignError(VctestError):
    """A random-effect block adds nothing beyond its predecessors."""


class OutsideParameterSpaceError(VctestError):
    """A variance-component vector falls outside the feasible spectrahedron.

    Carries the offending point so optimizers can branch on it.
    """

    def __init__(self, tau, detail: str = ""):
        self.tau = tau
        msg = f"tau={tau!r} is outside the parameter space"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class NumericError(VctestError):
    """A non-finite intermediate appeared during likelihood evaluation."""

    def __init__(self, tau, detail: str = ""):
        self.tau = tau
        msg = f"numeric failure at tau={tau!r}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class BootstrapFailureError(VctestError):
    """Too many bootstrap replicates failed to converge."""


class MissingFixtureError(VctestError):
    """A bundled dataset is unavailable in this installation."""


class NonConvergenceError(VctestError):
    """A required model fit did not reach the convergence criterion."""
