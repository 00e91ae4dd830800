"""Exception types shared across the package."""


class VidshadowError(Exception):
    """Base class for all package errors."""


class NotFoundError(VidshadowError):
    """A requested dataset, video, or file does not exist."""


class FormatError(VidshadowError):
    """On-disk data violates the expected layout or encoding."""


class ConfigError(VidshadowError):
    """A configuration file or value is invalid."""


class ContractError(VidshadowError):
    """An operation was called with arguments violating its precondition."""
