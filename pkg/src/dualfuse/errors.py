"""Exception types raised across the package."""


class DualFuseError(Exception):
    """Base class for all package errors."""


class ShapeMismatchError(DualFuseError, ValueError):
    pass


class HeadsDontDivideError(DualFuseError, ValueError):
    pass


class NotScalarRootError(DualFuseError, ValueError):
    pass


class TapeConsumedError(DualFuseError, RuntimeError):
    pass


class NotOnTapeError(DualFuseError, ValueError):
    pass


class NonFiniteValueError(DualFuseError, FloatingPointError):
    pass


class NonDeterministicFunctionError(DualFuseError, RuntimeError):
    pass


class NegativeStdError(DualFuseError, ValueError):
    pass


class KernelTooLargeError(DualFuseError, ValueError):
    pass


class PoolTooLargeError(DualFuseError, ValueError):
    pass


class BadRateError(DualFuseError, ValueError):
    pass


class LabelOutOfRangeError(DualFuseError, ValueError):
    pass


class UnknownVariantError(DualFuseError, ValueError):
    pass


class BadMagicError(DualFuseError, ValueError):
    pass


class ShapeMismatchWithManifestError(DualFuseError, ValueError):
    pass


class TruncatedFileError(DualFuseError, ValueError):
    pass


class TooFewSamplesError(DualFuseError, ValueError):
    pass


class BadConfigError(DualFuseError, ValueError):
    pass


class EmptyEvalSetError(DualFuseError, ValueError):
    pass


class EmptyMatrixError(DualFuseError, ValueError):
    pass


class NonFiniteGradientError(DualFuseError, FloatingPointError):
    pass


class RatioMismatchError(DualFuseError, ValueError):
    pass


class BackboneMutatedError(DualFuseError, AssertionError):
    pass


class EmptyCandidatesError(DualFuseError, ValueError):
    pass
