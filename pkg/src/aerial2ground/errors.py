"""
Exception hierarchy shared by every stage.

Each error class carries the CLI exit code it maps to, so `cli.main` can
translate any failure into the documented exit status without a lookup
table. Temporal activities let these propagate; the workflow marks the
validation-type errors as non-retryable (see workflows.py).
"""


class Aerial2GroundError(Exception):
    """Base class for all domain errors."""

    exit_code: int = 2


class ConfigError(Aerial2GroundError):
    """Invalid configuration values or unsatisfiable generator bounds."""


class ShapeError(Aerial2GroundError):
    """Array or tensor dimensions violate a documented shape contract."""


class DataError(Aerial2GroundError):
    """Empty or undersized inputs (datasets, batches, feature sets)."""


class CameraError(Aerial2GroundError):
    """Ground camera placed off-road or with an invalid field of view."""


class IoError(Aerial2GroundError):
    """Filesystem failure while reading or writing artifacts."""


class FormatError(Aerial2GroundError):
    """Malformed artifact on disk.

    `sample_id` and `field` locate the offending record when known.
    """

    def __init__(self, message: str, *, sample_id: str | None = None, field: str | None = None) -> None:
        self.sample_id = sample_id
        self.field = field
        where = ", ".join(p for p in (f"sample={sample_id}" if sample_id else "", f"field={field}" if field else "") if p)
        super().__init__(f"{message} ({where})" if where else message)


class DependencyError(Aerial2GroundError):
    """A prerequisite stage has not produced its checkpoint yet."""

    exit_code = 3

    def __init__(self, stage: str, message: str | None = None) -> None:
        self.stage = stage
        super().__init__(message or f"missing prerequisite stage: {stage}")


# Errors that retrying cannot fix; activities raise these as non-retryable.
NON_RETRYABLE = (ConfigError, ShapeError, DataError, CameraError, FormatError, DependencyError)
