"""Shared exception types."""


class StdnetError(Exception):
    """Base class for all library errors."""


class DimensionError(StdnetError):
    """Operand shapes are incompatible for the requested operation."""


class EmptyInputError(StdnetError):
    """An operation received an empty mesh, tree, or point set."""


class DegenerateMeshError(StdnetError):
    """Mesh geometry is unusable, e.g. every face has zero area."""


class DataFormatError(StdnetError):
    """A file does not conform to the expected on-disk format."""


class NumericalError(StdnetError):
    """A non-finite value appeared where a finite one is required."""
