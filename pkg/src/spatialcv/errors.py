"""Exception hierarchy shared across the package."""


class SpatialCVError(Exception):
    """Base class for all package errors."""


class ParameterError(SpatialCVError, ValueError):
    """Invalid method parameters, e.g. a buffer that empties an analysis set."""


class SimulationError(SpatialCVError):
    """Field sampling or predictor derivation failed."""


class EstimationError(SpatialCVError):
    """Variogram estimation or fitting failed."""


class SchemaError(SpatialCVError, ValueError):
    """Input table or feature matrix does not match the expected layout."""


class ConfigError(SpatialCVError, ValueError):
    """Unknown or invalid configuration keys."""
