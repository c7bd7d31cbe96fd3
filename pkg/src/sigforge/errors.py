"""Exception types raised across the pipeline.

Every failure mode the pipeline can report is a subclass of
:class:`SigforgeError`, so callers (and the CLI exit-code mapping) can
separate data problems from numerical ones without string matching.
"""


class SigforgeError(Exception):
    """Base class for all typed pipeline errors."""


class DataError(SigforgeError, ValueError):
    """Input data is malformed or unusable."""


class NumericalError(SigforgeError, ArithmeticError):
    """A computation produced non-finite values or cannot proceed."""


# --- signature file parsing -------------------------------------------------

class SignatureFormatError(DataError):
    """Base class for parser failures."""


class MalformedHeader(SignatureFormatError):
    pass


class MissingHeader(SignatureFormatError):
    pass


class UnknownLabel(SignatureFormatError):
    pass


class RowArity(SignatureFormatError):
    pass


class CountMismatch(SignatureFormatError):
    pass


class EmptyBody(SignatureFormatError):
    pass


class BadValue(SignatureFormatError):
    """A field could not be parsed or violates a point invariant."""


class InvalidSample(DataError):
    """A constructed sample or dataset violates its invariants."""


# --- features / reduction ---------------------------------------------------

class TooShort(DataError):
    pass


class CatalogueMismatch(DataError):
    pass


class EmptyInput(DataError):
    pass


class KTooLarge(DataError):
    pass


class NonFinite(NumericalError):
    pass


class DimensionMismatch(DataError):
    pass


class IndexOutOfRange(DataError):
    pass


# --- network ----------------------------------------------------------------

class ShapeMismatch(DataError):
    pass


class NonFiniteGradient(NumericalError):
    pass


class DegenerateLabels(DataError):
    pass


# --- protocol ---------------------------------------------------------------

class InsufficientGenuine(DataError):
    pass


class SingleWriterDataset(DataError):
    pass


class EmptyScores(DataError):
    pass


class ConfigError(SigforgeError, ValueError):
    """Configuration values are inconsistent or unusable."""
