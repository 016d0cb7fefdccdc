"""Typed exceptions shared across the package."""


class CcsNodeError(Exception):
    """Base class for all package errors."""


# --- method construction ---

class LengthMismatchError(CcsNodeError):
    pass


class NotMonicError(CcsNodeError):
    pass


class ImplicitNotSupportedError(CcsNodeError):
    pass


class NonFiniteCoefficientError(CcsNodeError):
    pass


# --- analysis ---

class NoConvergenceError(CcsNodeError):
    """Polynomial root iteration failed to converge within the cap."""


class BetaOutOfRangeError(CcsNodeError):
    pass


# --- integration ---

class GridMismatchError(CcsNodeError):
    """Time span is not an integer multiple of the step size."""


class DivergedStateError(CcsNodeError):
    """A state became non-finite during stepping.

    Carries the partial history so callers can report the blow-up
    instead of crashing.
    """

    def __init__(self, message, partial_states=None, first_bad_index=None):
        super().__init__(message)
        self.partial_states = partial_states
        self.first_bad_index = first_bad_index


class EmptySamplesError(CcsNodeError):
    pass


# --- autodiff / networks ---

class BadDimsError(CcsNodeError):
    pass


class DimMismatchError(CcsNodeError):
    pass


class NotScalarLossError(CcsNodeError):
    pass


# --- datasets ---

class BadMagicError(CcsNodeError):
    pass


class TruncatedFileError(CcsNodeError):
    pass


class CountMismatchError(CcsNodeError):
    pass


class TooFewError(CcsNodeError):
    pass
