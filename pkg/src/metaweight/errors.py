"""Exception types shared across the package."""


class MetaweightError(Exception):
    """Base class for every error this package raises on purpose."""


class DimensionError(MetaweightError):
    """Operands have incompatible lengths or shapes."""


class DomainError(MetaweightError):
    """An argument or data state is outside the operation's domain."""


class ConfigError(MetaweightError):
    """Invalid configuration: unknown keys, bad policies, out-of-range settings."""


class DataError(MetaweightError):
    """Malformed input data; the message names the offending location."""


class NumericalError(MetaweightError):
    """A computation produced NaN or infinity."""
