"""Exception hierarchy.

Everything raised on purpose derives from :class:`LcChangeError`.  The CLI maps
:class:`UsageError` to exit code 1 and :class:`DataError` to exit code 2.
"""


class LcChangeError(Exception):
    pass


class UsageError(LcChangeError):
    pass


class DataError(LcChangeError):
    pass


# raster / tile format
class SchemeDtypeMismatchError(DataError):
    pass


class OversizeDimensionError(DataError):
    pass


class BadMagicError(DataError):
    pass


class UnsupportedVersionError(DataError):
    pass


class TruncatedPayloadError(DataError):
    pass


class InvalidClassIdError(DataError):
    pass


class MissingPaletteEntryError(DataError):
    pass


class IoFailureError(DataError):
    pass


# taxonomy
class NotAProbabilityVectorError(DataError):
    pass


class DegenerateMassError(DataError):
    """Only raised by ``collapse_probs(..., strict=True)``; the default falls back."""


# neural net
class ShapeMismatchError(DataError):
    pass


class NonFiniteValueError(DataError):
    pass


class EmptyMaskError(DataError):
    pass


class InvalidSpecError(UsageError):
    pass


# training
class PatchLargerThanTileError(DataError):
    pass


# change / scoring
class DimensionMismatchError(DataError):
    pass


class InvalidCodeError(DataError):
    pass


class EmptyEvaluationError(DataError):
    pass


class OutOfRangeError(DataError):
    pass


# synthetic scenes
class InfeasibleChangeFractionError(DataError):
    pass
