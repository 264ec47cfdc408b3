"""Exception hierarchy shared across the toolkit.

Each class maps to one CLI exit code, see protolens.cli.
"""


class ProtolensError(Exception):
    """Base class for all toolkit errors."""


class ContractError(ProtolensError):
    """An operation was called with arguments violating its contract."""


class ValidationError(ProtolensError):
    """A manifest or config failed validation; message lists all violations."""


class FormatError(ProtolensError):
    """A binary or structured-text file is malformed; names the first bad field."""


class SingularityError(ProtolensError):
    """A free-mode transform is too ill-conditioned to invert safely."""


class TrainingError(ProtolensError):
    """Training diverged (NaN loss); message carries the epoch index."""


class PreservationError(ProtolensError):
    """The transformed pipeline changed a prediction it must not change."""
