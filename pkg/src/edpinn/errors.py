"""Exception classes shared across the package.

Each class carries the process exit code the CLI uses for it.
"""
from .autodiff import NumericOverflowError


class EDError(Exception):
    exit_code = 1


class InvalidParameterError(EDError, ValueError):
    exit_code = 2


class DomainError(EDError, ValueError):
    exit_code = 3


class InfeasibleDesignError(EDError, ValueError):
    exit_code = 4


class TrainingDivergedError(EDError, ArithmeticError):
    exit_code = 5

    def __init__(self, step: int, detail: str = ""):
        self.step = step
        msg = f"training diverged at step {step}"
        super().__init__(msg + (f": {detail}" if detail else ""))


class CriterionDivergedError(EDError, ArithmeticError):
    exit_code = 6


class IllConditionedError(EDError, ArithmeticError):
    """Kernel or Hessian solve failed after jitter escalation."""
    exit_code = 7


class DegenerateDesignError(EDError, ArithmeticError):
    exit_code = 8


class NoFeasibleDesignError(EDError, RuntimeError):
    exit_code = 9


class ConfigError(EDError, ValueError):
    exit_code = 10

    def __init__(self, keys, detail: str = ""):
        self.keys = list(keys)
        msg = "invalid config keys: " + ", ".join(self.keys)
        super().__init__(msg + (f" ({detail})" if detail else ""))


class StageError(EDError, RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1)
        super().__init__(f"stage '{stage}' failed: {cause}")


NumericOverflowError.exit_code = 11

__all__ = [
    "EDError", "InvalidParameterError", "DomainError", "InfeasibleDesignError",
    "TrainingDivergedError", "CriterionDivergedError", "IllConditionedError",
    "DegenerateDesignError", "NoFeasibleDesignError", "ConfigError", "StageError",
    "NumericOverflowError",
]
