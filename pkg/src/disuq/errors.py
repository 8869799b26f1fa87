"""Exception types shared across the package."""


class DisuqError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(DisuqError):
    """Operand shapes are incompatible with the requested operation."""


class DomainError(DisuqError):
    """An input value lies outside an operation's numeric domain."""


class ContractError(DisuqError):
    """A caller broke an API precondition."""


class ConfigError(DisuqError):
    """Invalid or inconsistent configuration."""


class DataFormatError(DisuqError):
    """A dataset or prediction file cannot be parsed."""


class CheckpointError(DataFormatError):
    """Checkpoint file is corrupt or has an incompatible version."""
