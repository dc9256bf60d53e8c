"""Exception hierarchy shared by every lvic module."""


class LvicError(Exception):
    """Base class for all errors raised by lvic."""


class FormatError(LvicError, ValueError):
    """A file does not match its declared binary layout."""


class DataError(LvicError, ValueError):
    """A file parsed correctly but carries unusable values."""


class CalibrationError(LvicError, ValueError):
    """Camera calibration is malformed or physically invalid."""


class ConfigurationError(LvicError, ValueError):
    """Inputs are mutually inconsistent (dimensions, camera counts, ...)."""


class GenerationError(LvicError, RuntimeError):
    """A synthetic scene could not satisfy its constraints."""
