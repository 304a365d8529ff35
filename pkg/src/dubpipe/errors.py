"""Exception types shared by every dubpipe module."""


class DubPipeError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(DubPipeError):
    """A file or serialized payload does not conform to its declared format."""


class ValidationError(DubPipeError):
    """A value violates its type's invariants or an operation's precondition."""


class ConfigError(DubPipeError):
    """A pipeline or stage configuration is inconsistent or incomplete."""


class StageError(DubPipeError):
    """A pipeline stage failed while processing its stream."""


class ProtocolError(DubPipeError):
    """An external stage broke the subprocess wire protocol."""
