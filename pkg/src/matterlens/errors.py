"""Exception hierarchy. ``MatterLensError`` subclasses map to CLI exit code 3."""


class MatterLensError(Exception):
    """Base class for data errors raised by matterlens."""


class UnreadableFile(MatterLensError):
    """A capture file could not be opened or its container is malformed."""


class TooShort(MatterLensError):
    """A payload is too short to hold a Matter message header."""


class SchemaViolation(MatterLensError):
    """A trace or configuration document does not match its schema."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class InvalidConfig(MatterLensError):
    """A scenario or perturbation configuration is inconsistent."""


class MisalignedTraces(MatterLensError):
    """Predictions and ground truth do not cover the same samples."""
