"""Exception types shared across the package."""


class NamegenError(Exception):
    pass


class ParseError(NamegenError):
    """Raised for malformed Java method source (position included when known)."""


class DataError(NamegenError):
    """Raised for malformed dataset records, id mismatches, missing artifacts."""


class DimensionError(NamegenError):
    """Raised when tensor shapes are incompatible."""


class TrainingError(NamegenError):
    """Raised when training must abort (non-finite loss/gradients, empty corpus)."""
