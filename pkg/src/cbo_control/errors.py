"""Exception types shared across the package."""


class CboControlError(Exception):
    """Base class for package-specific failures."""


class ShapeError(CboControlError, ValueError):
    """A network shape descriptor is structurally invalid."""


class DimensionError(CboControlError, ValueError):
    """Array sizes do not match the declared shapes."""


class NumericError(CboControlError, ArithmeticError):
    """A computation produced non-finite values or diverged."""


class ConfigError(CboControlError, ValueError):
    """An experiment configuration is missing or inconsistent."""
