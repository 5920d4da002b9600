# src/utils/exceptions.py


class InterruptedException(Exception):
    """Custom exception to indicate a user-initiated, graceful stop."""
    pass


class DCCError(Exception):
    """Root of every error raised by the comparator stack."""
    pass


class DimensionError(DCCError, ValueError):
    """Operand extents do not line up for an array operation."""

    def __init__(self, message: str, *shapes):
        self.shapes = tuple(tuple(s) for s in shapes)
        if self.shapes:
            message = f"{message} (shapes: {', '.join(str(s) for s in self.shapes)})"
        super().__init__(message)


class ShapeError(DCCError, ValueError):
    """A feature map, image or glimpse has the wrong geometry."""
    pass


class FormatError(DCCError):
    """A stored file (features, checkpoint, image, manifest) is malformed."""

    def __init__(self, message: str, expected_bytes: int | None = None, actual_bytes: int | None = None):
        self.expected_bytes = expected_bytes
        self.actual_bytes = actual_bytes
        if expected_bytes is not None and actual_bytes is not None:
            message = f"{message} (expected {expected_bytes} bytes, got {actual_bytes})"
        super().__init__(message)


class ContractError(DCCError):
    """A caller broke an operation's pre-condition."""
    pass


class NumericalError(DCCError, FloatingPointError):
    """A NaN or Inf showed up while the debug guard was on."""
    pass


class TrainingError(DCCError):
    """Training cannot continue; points at the last checkpoint that is safe to resume."""

    def __init__(self, message: str, parameter: str | None = None, checkpoint_path: str | None = None):
        self.parameter = parameter
        self.checkpoint_path = checkpoint_path
        if parameter:
            message = f"{message} [parameter: {parameter}]"
        if checkpoint_path:
            message = f"{message} [last good checkpoint: {checkpoint_path}]"
        super().__init__(message)


class ProtocolError(DCCError):
    """The evaluation protocol cannot be honoured for these labels."""

    def __init__(self, message: str, identities=()):
        self.identities = sorted(int(i) for i in identities)
        if self.identities:
            message = f"{message}: {self.identities}"
        super().__init__(message)


class DataError(DCCError):
    """A dataset or episode does not satisfy the sampling requirements."""
    pass


class ConfigError(DCCError):
    """A configuration file or override is invalid."""

    def __init__(self, message: str, key: str | None = None):
        self.key = key
        if key:
            message = f"{message} (key: {key})"
        super().__init__(message)
