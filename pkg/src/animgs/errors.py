"""Exception hierarchy shared across the package."""


class AnimGSError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(AnimGSError, ValueError):
    pass


class DegenerateGaussianError(AnimGSError, ValueError):
    pass


class InvalidSkeletonError(AnimGSError, ValueError):
    pass


class InvalidDirectionError(AnimGSError, ValueError):
    pass


class ConfigurationError(AnimGSError, ValueError):
    pass


class DatasetError(AnimGSError):
    """Malformed or missing dataset/template/checkpoint content."""


class CheckpointError(DatasetError):
    pass


class UnsupportedVersionError(CheckpointError):
    pass


class ConsistencyError(AnimGSError, RuntimeError):
    """Forward and backward state do not belong together."""


class NumericalError(AnimGSError, FloatingPointError):
    pass
