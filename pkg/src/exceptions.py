"""
Exception hierarchy shared by the restoration library and the CLI.
"""


class RestorationError(Exception):
    """Base class for every error raised by the library."""


class ParameterError(RestorationError, ValueError):
    """Invalid numeric parameter (nonpositive size, negative sigma, bad index...)."""


class ShapeMismatchError(RestorationError, ValueError):
    """Arrays whose shapes do not fit together."""


class KernelSizeError(ShapeMismatchError):
    """Kernel support larger than the image it is applied to."""


class ConfigurationError(ParameterError):
    """Configuration values that are individually valid but incompatible."""


class DivergenceError(RestorationError, RuntimeError):
    """An iterative solver produced non-finite values."""


class FormatError(RestorationError, ValueError):
    """Malformed or truncated file contents."""
