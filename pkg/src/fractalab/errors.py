"""Exception hierarchy shared by all fractalab modules."""


class FractalabError(Exception):
    """Base class for all errors raised by this package."""


class ResourceLimitError(FractalabError):
    """A requested discretization level exceeds the supported size bounds."""

    def __init__(self, message: str, estimated_size: int | None = None):
        super().__init__(message)
        self.estimated_size = estimated_size


class ResolutionError(FractalabError):
    """A scale parameter (radius, time step) fell below the discretization floor."""


class LevelMismatchError(FractalabError):
    """Function data and geometry live on incompatible levels."""


class FamilyMismatchError(FractalabError):
    """A function specification is not evaluable on this fractal family."""


class RegimeError(FractalabError):
    """Exponent parameters violate the regime a verifier requires."""


class UnsupportedParameterError(FractalabError):
    """A parameter combination is deliberately unsupported (e.g. gasket p=1 energies)."""


class ConvergenceError(FractalabError):
    """An iterative solver failed to reach its tolerance; carries the residual."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual={residual:.3e})")
        self.residual = residual


class SaturationError(FractalabError):
    """A heat-kernel diagnostic window reached stationarity and cannot be fitted."""
