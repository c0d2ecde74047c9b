"""Exception hierarchy shared by all modules.

The CLI maps these onto exit codes: ConfigError -> 2, MissingInputError and
DataError -> 3, everything else raised by the package -> 4.
"""


class SgnnError(Exception):
    """Base class for errors raised by this package."""


class ShapeError(SgnnError):
    """Dimension mismatch in a matrix or model operation."""


class ConfigError(SgnnError):
    """Invalid or unknown configuration field."""


class MissingInputError(SgnnError):
    """A required input file or path is absent."""


class DataError(SgnnError):
    """An input file exists but its contents are malformed."""


class InvariantError(SgnnError):
    """A documented internal invariant was violated."""
