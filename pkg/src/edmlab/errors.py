"""Exception hierarchy shared across the package.

The CLI maps these onto distinct exit codes: configuration problems,
data/file problems, and runtime (numerical) failures.
"""


class EdmError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(EdmError):
    """Invalid or out-of-range configuration value."""


class DataError(EdmError):
    """A data file is missing, malformed, or inconsistent."""


class FormatError(DataError):
    """File header is malformed (bad magic string or unparseable fields)."""


class DimensionError(DataError):
    """Declared dimensions do not match the file body."""


class ChecksumError(DataError):
    """Trailing length checksum does not match the file content."""


class NumericsError(EdmError):
    """A non-finite loss or gradient aborted a training step."""
