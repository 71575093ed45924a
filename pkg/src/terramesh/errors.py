"""Exception types shared across the package."""


class TerrameshError(Exception):
    """Base class for all package errors."""


class ConfigurationError(TerrameshError):
    """Invalid configuration value or malformed model/config file."""


class InputError(TerrameshError):
    """Malformed runtime input (frame, array shape, score vector, ...)."""


class DegenerateSimplexError(TerrameshError):
    """Barycentric transform requested for (near-)collinear vertices."""


class InconsistentCertaintyError(TerrameshError):
    """Two zero-variance height estimates disagree; fusion is undefined."""


class InsufficientDataError(TerrameshError):
    """Not enough samples for a statistical fit."""


class DegenerateDataError(TerrameshError):
    """Samples carry no spread; distribution fitting is undefined."""


class EvaluationError(TerrameshError):
    """Evaluation requested on an empty or inconsistent input set."""


class FormatError(TerrameshError):
    """On-disk artifact violates its documented format."""
