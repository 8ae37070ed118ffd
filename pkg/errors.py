class IwgsError(Exception):
    """Base class for failures the CLI maps onto exit codes"""
    exit_code = 1


class ConfigError(IwgsError, ValueError):
    """Invalid or unknown configuration"""
    exit_code = 2


class DataError(IwgsError, ValueError):
    """Missing, truncated or malformed input data"""
    exit_code = 3


class NumericError(IwgsError, ArithmeticError):
    """NaN or Inf showed up in a computation"""
    exit_code = 4


class StageError(IwgsError):
    """A pipeline stage failed; keeps the stage name and the original error"""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1)
