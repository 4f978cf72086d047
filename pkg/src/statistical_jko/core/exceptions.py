"""
Exception hierarchy for the Statistical JKO Lab.

Every failure raised by the package derives from WgfError. Configuration
problems are ConfigError (CLI exit code 2); numerical failures derive from
NumericalError (CLI exit code 3). Exceptions carry keyword context that is
logged and written to the CLI error report.
"""

from typing import Any, Dict


class WgfError(Exception):
    """Base class for all errors raised by the lab."""

    def __init__(self, message: str, **context: Any):
        super().__init__(message)
        self.message = message
        self.context: Dict[str, Any] = context

    def to_dict(self) -> Dict[str, Any]:
        """Serializable error report."""
        return {
            "type": type(self).__name__,
            "message": self.message,
            "context": {k: _plain(v) for k, v in self.context.items()},
        }


class ConfigError(WgfError, ValueError):
    """Invalid settings or run configuration."""


class NumericalError(WgfError):
    """Base class for numerical failures."""


class AllMassLost(NumericalError):
    """A density has no positive mass left (diverged inner iteration)."""


class GridMismatch(NumericalError):
    """Two grids or time grids that must agree do not."""


class BandInfeasible(NumericalError):
    """Marginals cannot be matched inside the coupling band."""

    def __init__(self, message: str, band: int, **context: Any):
        super().__init__(message, band=band, **context)
        self.band = band


class InnerStall(NumericalError):
    """Flux descent hit its iteration cap with a large residual."""


class SingularJacobian(NumericalError):
    """Newton system (or plug-in A matrix) is not invertible."""


class NoConvergence(NumericalError):
    """An iterative solver did not reach its tolerance."""


class Diverged(NumericalError):
    """A simulated path left the overflow guard."""


class SolverBreakdown(NumericalError):
    """The tridiagonal solve hit a zero pivot."""


class TrajectoryTooShort(NumericalError):
    """An estimator trajectory has fewer entries than the run needs."""


class FixedPointDiverged(NumericalError):
    """The Bures-Wasserstein fixed-point iteration did not settle."""


class LostPositiveDefiniteness(NumericalError):
    """A covariance matrix stopped being positive definite."""


class DimensionTooLarge(NumericalError):
    """Tensor quadrature requested in too many dimensions."""


def _plain(value: Any) -> Any:
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    try:
        return float(value)
    except (TypeError, ValueError):
        return str(value)
