"""Exception types shared across the package."""


class SplatsimError(Exception):
    """Base class for all package errors."""


class FormatError(SplatsimError, ValueError):
    """A file could not be parsed (malformed header, truncated payload, bad version)."""


class StructuralError(SplatsimError, ValueError):
    """Inputs are individually valid but mutually inconsistent (e.g. count mismatch)."""


class ConfigError(SplatsimError, ValueError):
    """Invalid configuration: unmapped class ids, bad parameter combinations."""


class DegenerateNeighborhoodError(SplatsimError, ValueError):
    """A local neighborhood is too small or rank-deficient for PCA."""
