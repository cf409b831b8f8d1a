"""Exception types shared across the package."""


class FormatError(ValueError):
    """A file's magic bytes, header, or layout do not match the format."""


class ConsistencyError(ValueError):
    """Two inputs that must agree (e.g. row counts) do not."""


class LabelError(ValueError):
    """A label is out of range or contradicts the fine-to-coarse map."""


class InsufficientDataError(ValueError):
    """A class does not have enough examples for the requested split."""


class TrainingError(RuntimeError):
    """Training diverged (non-finite loss)."""
