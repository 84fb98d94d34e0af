"""Exception types shared across the package."""


class MlwsvmError(Exception):
    """Base class for all package errors."""


class DataError(MlwsvmError, ValueError):
    """Malformed input data or a violated data precondition."""


class ConfigError(MlwsvmError, ValueError):
    """Invalid experiment or model configuration."""


class UndefinedMeasureError(MlwsvmError, ValueError):
    """A performance measure is undefined because a class is absent."""


class SolverError(MlwsvmError, RuntimeError):
    """The SVM solver could not produce a model."""


class ImputationError(MlwsvmError, RuntimeError):
    """Covariance assembly or imputation failed."""
