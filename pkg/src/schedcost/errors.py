"""Exception types shared across the package."""


class SchedCostError(Exception):
    """Base class for all package errors."""


class RecordParseError(SchedCostError, ValueError):
    """A dataset line could not be decoded."""

    def __init__(self, message: str, line_number: int | None = None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class RegistryError(SchedCostError, KeyError):
    """Unknown primitive type mnemonic."""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "registry error"


class ValidationError(SchedCostError, ValueError):
    """Input violates a semantic precondition."""


class ConfigError(SchedCostError, ValueError):
    """Inconsistent or mismatched configuration."""


class CheckpointError(SchedCostError):
    """Checkpoint files are missing, truncated or fail digest checks."""


class NumericalError(SchedCostError, ArithmeticError):
    """Training diverged (NaN or inf loss)."""
