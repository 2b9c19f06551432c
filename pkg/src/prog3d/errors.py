"""Exception types shared across the engine."""


class ContractViolation(ValueError):
    """An operation was called with arguments that break its preconditions."""


class ConfigError(ValueError):
    """A run configuration failed validation. Message carries the field path."""


class CheckpointFormatError(IOError):
    """A field checkpoint is malformed. Message names the failing header field."""


class EditAbort(RuntimeError):
    """Optimization hit a non-finite value. Message names the term and iteration."""
