"""Exception types shared across the package."""


class ContractError(ValueError):
    """Shapes, counts or configuration incompatible with an operation."""


class DataError(Exception):
    """Unreadable container or malformed corpus."""


class SamplingError(ValueError):
    """Video too short for the requested clips."""


class ConfigError(ValueError):
    """Bad configuration file or value."""

    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class CheckpointError(Exception):
    """Corrupt, truncated or mismatched checkpoint / score cache."""


class NumericalError(RuntimeError):
    """Non-finite loss during training."""
