"""Exception types shared across the package."""


class C2VLError(Exception):
    """Base class for all package errors."""


class ConfigError(C2VLError, ValueError):
    """Invalid configuration. ``path`` names the offending field when known."""

    def __init__(self, message, path=None):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class DataError(C2VLError, ValueError):
    pass


class ParseError(DataError):
    """A skeleton file or container could not be parsed."""

    def __init__(self, message, file=None, offset=None):
        self.file = str(file) if file is not None else None
        self.offset = offset
        where = ""
        if self.file:
            where = f"{self.file}"
            if offset is not None:
                where += f" @ byte {offset}"
            where += ": "
        super().__init__(where + message)


class EmptySequenceError(DataError):
    pass


class ShapeError(C2VLError, ValueError):
    pass


class PartitionError(C2VLError, ValueError):
    pass


class NotFound(C2VLError, KeyError):
    pass


class TransportError(C2VLError):
    """Retryable failure talking to an external engine."""

    retryable = True


class NoPersonFound(C2VLError):
    def __init__(self, frame_index, best_score=None):
        self.frame_index = frame_index
        self.best_score = best_score
        super().__init__(
            f"no person detection above threshold on frame {frame_index}"
            + (f" (best score {best_score:.3f})" if best_score is not None else "")
        )


class EmptyCaption(C2VLError):
    pass


class TrainingDiverged(C2VLError):
    def __init__(self, message, sample_ids=()):
        self.sample_ids = list(sample_ids)
        super().__init__(message)
