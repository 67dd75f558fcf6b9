"""Exception hierarchy shared across the package."""


class EigenpatchError(Exception):
    """Base class for all package-specific errors."""


class ArgumentError(EigenpatchError, ValueError):
    """An argument violates a documented precondition."""


class FormatError(EigenpatchError):
    """A file header or manifest is missing, unparseable, or unsupported."""


class SizeError(EigenpatchError):
    """Payload length disagrees with the declared dimensions."""


class DegenerateInputError(EigenpatchError):
    """Input has no usable variation (e.g. constant data, zero variance)."""


class SegmentationError(EigenpatchError):
    """Lung segmentation produced no usable components."""


class NumericalError(EigenpatchError):
    """A numerical routine produced non-finite values or failed to solve."""


class ConvergenceError(EigenpatchError):
    """An iterative solver exhausted its iteration budget."""


class ResampleError(EigenpatchError):
    """A bootstrap resample could not satisfy stratification constraints."""


class StratificationError(EigenpatchError):
    """A cross-validation fold cannot be formed with both classes present."""


class ConfigurationError(EigenpatchError):
    """A pipeline configuration is unsatisfiable for the given data."""


class GenerationError(EigenpatchError):
    """Phantom generation failed (e.g. lesion placement exhausted retries)."""
