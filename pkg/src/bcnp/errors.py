"""Exception hierarchy shared across the package.

CLI exit-code mapping: ValidationError (and subclasses) -> 2, every other
BcnpError -> 3.
"""


class BcnpError(Exception):
    """Base class for all package errors."""


class ValidationError(BcnpError, ValueError):
    """Bad input: wrong shape, out-of-range parameter, inconsistent config."""


class CyclicGraphError(ValidationError):
    """An operation that requires a DAG received a cyclic adjacency matrix."""


class UndefinedMetricError(ValidationError):
    """Metric is mathematically undefined for the given inputs."""


class NumericalError(BcnpError, RuntimeError):
    """A numerical routine failed (non-PD covariance, non-finite values)."""


class TrainingDivergedError(NumericalError):
    """Training loss became non-finite; carries the last good checkpoint."""

    def __init__(self, message, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint


class IntegrityError(BcnpError):
    """A file failed checksum or structural verification."""


class VersionMismatchError(IntegrityError):
    """A serialized artifact has an unsupported format version."""
