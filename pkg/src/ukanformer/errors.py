"""Exception types raised across the package."""


class UKFError(Exception):
    """Base class for all package errors."""


class ShapeError(UKFError, ValueError):
    """Incompatible tensor or raster dimensions."""


class ResolutionError(ShapeError):
    """Input resolution differs from the one a module was built for."""


class ContractError(UKFError, RuntimeError):
    """A documented precondition of an operation was violated."""


class DegenerateVarianceError(ContractError):
    """Batch statistics requested over fewer than two elements."""


class LabelError(UKFError, ValueError):
    """Target labels outside the allowed class set."""


class ConfigError(UKFError, ValueError):
    """Invalid model, grid, training or run configuration."""


class SplitError(UKFError, ValueError):
    """Dataset cannot be split as requested."""


class SpecError(ConfigError):
    """Invalid synthetic-data specification."""


class ComparisonError(UKFError, ValueError):
    """Metric reports computed on different test sets."""
