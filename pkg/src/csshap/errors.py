"""Exception types shared across the package.

The CLI maps these onto process exit codes, so library code should raise
the most specific type that applies rather than bare ValueError.
"""


class CsShapError(Exception):
    """Base class for all package-specific errors."""


class InvalidInputError(CsShapError, ValueError):
    """Raised when runtime data violates a documented precondition."""


class ConfigurationError(CsShapError, ValueError):
    """Raised when a configuration object or file is inconsistent."""


class CapacityError(CsShapError, ValueError):
    """Raised when a request exceeds a hard resource bound (e.g. exact
    Shapley enumeration beyond the supported player count)."""


class FormatError(CsShapError, ValueError):
    """Raised when a serialized artifact (model file, CSV, raw blob)
    cannot be parsed or fails integrity checks."""


class TrainingError(CsShapError, RuntimeError):
    """Raised when optimization diverges or produces non-finite values."""
