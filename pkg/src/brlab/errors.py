"""Exception hierarchy shared by all modules."""

import numpy as np


class BetheLabError(Exception):
    """Base class for every error raised by brlab."""


class UsageError(BetheLabError, ValueError):
    """Invalid arguments or configuration (CLI exit code 1)."""


class NumericalError(BetheLabError, ArithmeticError):
    """A numerical kernel could not produce a trustworthy result (CLI exit code 2)."""


class SingularMatrix(NumericalError, np.linalg.LinAlgError):
    pass


class SingularComplement(SingularMatrix):
    pass


class NotHermitian(UsageError):
    pass


class DimensionMismatch(UsageError):
    pass


class VertexOutOfRange(UsageError):
    pass


class DimensionTooLarge(UsageError):
    pass


class DepthTooLarge(UsageError):
    pass


class NotBurnedIn(UsageError):
    pass


class InvalidExponent(UsageError):
    pass


class InvalidExponents(InvalidExponent):
    pass


class InvalidLevel(UsageError):
    pass


class ZeroVector(UsageError):
    pass


class MissingQuantile(UsageError):
    pass


class EmptySample(UsageError):
    pass


class BadMatrixFile(UsageError):
    pass


class UnknownFlag(UsageError):
    pass


class MissingRequired(UsageError):
    pass


class IoError(UsageError, OSError):
    pass
