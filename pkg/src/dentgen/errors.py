"""Exception types shared across the pipeline."""


class DentgenError(Exception):
    """Base class for all pipeline errors."""


class ParameterError(DentgenError):
    """A parameter violates its documented bound."""


class ParseError(DentgenError):
    """A file could not be parsed; message includes the offending line."""


class ShapeError(DentgenError):
    """Array shapes or resolutions do not line up."""


class GeometryError(DentgenError):
    """Degenerate geometry (zero-extent lattice box, empty mesh, ...)."""


class LookupError_(DentgenError):
    """A named group or key does not exist."""


class ConfigurationError(DentgenError):
    """Inputs cannot satisfy the sampling contract (e.g. too few key categories)."""


class ImageError(DentgenError):
    """An image file could not be decoded."""


class IngestionError(DentgenError):
    """A real-photo directory is missing or malformed."""


class SplitError(DentgenError):
    """A train/test split cannot be formed."""
