"""Exception types shared across the package."""


class MaskMatchError(Exception):
    """Base class for every error this package raises on purpose."""


class DimensionError(MaskMatchError):
    """Operand shapes are incompatible."""


class ParameterError(MaskMatchError):
    """An argument value is outside its allowed range."""


class CapacityError(MaskMatchError):
    """An input exceeds a configured capacity limit."""


class EmptyMaskError(MaskMatchError):
    """A mask has no foreground pixels where at least one is required."""


class StateError(MaskMatchError):
    """An object is not in the state the operation requires."""


class PackValidationError(MaskMatchError):
    """A feature pack violates a structural invariant."""


class PackFormatError(PackValidationError):
    """A byte stream is not a feature pack (bad magic or version)."""


class PackTruncatedError(PackValidationError):
    """A byte stream ended before the pack layout was complete."""


class MaskCorruptionError(PackValidationError):
    """Run-length mask data does not decode to a valid grid."""


class NoNegativesError(MaskMatchError):
    """A training sample offers no candidate usable as a negative."""


class GenerationError(MaskMatchError):
    """Synthetic scene generation could not satisfy its constraints."""


class UsageError(MaskMatchError):
    """Bad command line arguments or configuration."""
