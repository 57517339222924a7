"""Exception types shared across the pipeline."""


class InvalidModelError(RuntimeError):
    """A token model returned a malformed probability distribution."""


class BufferFormatError(ValueError):
    """A persisted buffer file failed to parse.

    Carries the 1-based line number of the offending line when known.
    """

    def __init__(self, message: str, line_number: int | None = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class ToyProgramError(RuntimeError):
    """A toy program failed to execute (stack underflow, unknown token, ...)."""


class BridgeError(RuntimeError):
    """Base class for model-bridge subprocess failures."""


class ProtocolError(BridgeError):
    """The bridge peer sent a malformed or invalid message."""

    def __init__(self, message: str, payload: str | None = None):
        if payload is not None:
            message = f"{message}; offending payload: {payload!r}"
        super().__init__(message)
        self.payload = payload


class BridgeClosedError(BridgeError):
    """The bridge subprocess exited or closed its streams."""
