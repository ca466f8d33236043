"""Exception taxonomy shared across the lab."""


class LabError(Exception):
    """Base class for all package-specific errors."""


class ConfigurationError(LabError):
    """Invalid configuration values (bad sizes, non-positive temperatures, ...)."""


class InputError(LabError):
    """A runtime argument violates an operation's precondition."""


class CapacityError(LabError):
    """An exact computation would exceed a declared enumeration or size cap."""


class DomainError(LabError):
    """A mathematical domain violation, e.g. KL support mismatch."""


class SchemaError(LabError):
    """A serialized artifact does not match the expected schema."""
