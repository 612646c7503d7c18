"""Exception hierarchy shared across the package."""


class PromptEvoError(Exception):
    pass


class ShapeMismatchError(PromptEvoError, ValueError):
    """Two grids that must share dimensions do not."""


class DegenerateMaskError(PromptEvoError, ValueError):
    """Mask is empty, full, or otherwise unusable for the requested operation."""


class OutOfBoundsError(PromptEvoError, ValueError):
    pass


class UndefinedCorrelationError(PromptEvoError, ValueError):
    pass


class InvalidConfigError(PromptEvoError, ValueError):
    pass


class NonFiniteError(PromptEvoError, FloatingPointError):
    pass


class StaleCacheError(PromptEvoError, RuntimeError):
    pass


class PGMError(PromptEvoError, ValueError):
    pass


class PGMHeaderError(PGMError):
    pass


class PGMTruncatedError(PGMError):
    pass


class PGMMaxvalError(PGMError):
    pass


class WeightFileError(PromptEvoError, ValueError):
    pass


class BadMagicError(WeightFileError):
    pass


class UnsupportedVersionError(WeightFileError):
    pass


class TruncatedWeightsError(WeightFileError):
    pass


class DataError(PromptEvoError):
    """Dataset on disk is missing or inconsistent."""
