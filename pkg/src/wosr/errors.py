"""Exception types shared across the package."""


class WosrError(Exception):
    """Base class for all package errors."""


class InvalidParams(WosrError, ValueError):
    """Synthesis or configuration parameters are out of their valid domain."""


class InvalidInput(WosrError, ValueError):
    """Data handed to an operation is degenerate or has the wrong shape."""


class InvalidState(WosrError, RuntimeError):
    """Operation called on a model that is not ready for it."""


class ContainerError(WosrError):
    """A model or dataset file could not be decoded."""


class ChecksumError(ContainerError):
    pass


class VersionError(ContainerError):
    pass
