"""Exception hierarchy. The CLI maps each family to an exit code."""


class WinarbError(Exception):
    """Base class for all package errors."""


class ConfigurationError(WinarbError, ValueError):
    """Invalid configuration value, unknown key or malformed config file."""


class DataError(WinarbError):
    """Input data does not satisfy an operation's preconditions."""


class SegmentationError(DataError):
    def __init__(self, recording_id, message):
        self.recording_id = recording_id
        super().__init__(f"recording {recording_id!r}: {message}")


class UnsupportedInputError(DataError):
    """Operation needs information the input does not carry (e.g. event annotations)."""


class DimensionError(DataError, ValueError):
    """Array shapes do not match what the model or representation expects."""


class FileFormatError(DataError):
    """Malformed score, result, model or recording file."""

    def __init__(self, path, message, row=None):
        self.path = str(path)
        self.row = row
        where = f"{self.path}" if row is None else f"{self.path}: row {row}"
        super().__init__(f"{where}: {message}")
