"""Exception hierarchy; the CLI maps each class to a stable exit code."""


class SupplyShareError(Exception):
    """Base class for package errors."""


class ConfigError(SupplyShareError, ValueError):
    """Invalid configuration or unknown model token (CLI exit code 2)."""


class MissingArtifactError(SupplyShareError, FileNotFoundError):
    """A required run artifact such as a draw file is absent (CLI exit code 3)."""


class DataError(SupplyShareError, ValueError):
    """Invalid or unusable input data (CLI exit code 4)."""


class SchemaError(DataError):
    """Input file is missing a required column."""


class RowValidationError(DataError):
    """A specific input row failed validation."""

    def __init__(self, row, message):
        super().__init__(f"row {row}: {message}")
        self.row = row


class ConvergenceWarning(UserWarning):
    """Emitted when a convergence diagnostic cannot be computed meaningfully."""
