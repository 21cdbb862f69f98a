"""Exception hierarchy shared across the package."""


class XConstError(Exception):
    """Base class for all package errors."""


class ConfigError(XConstError):
    """Invalid configuration values or malformed config files."""


class DataError(XConstError):
    """Missing, empty, or corrupt input data."""


class ShapeError(XConstError):
    """Tensor shape mismatch; message carries both shapes."""


class ContractError(XConstError):
    """An operation was called outside its contract (bad mask, bad root, ...)."""


class NumericalError(XConstError):
    """NaN/Inf encountered where finite values are required."""


class CheckpointError(XConstError):
    """Unreadable, truncated, or version-mismatched checkpoint file."""


class StateError(XConstError):
    """Object is in the wrong state for the requested operation."""
