from typing import Optional


class HierSsdError(Exception):
    """Base error. The CLI turns it into a logged message and ``exit_code``."""

    exit_code = 1

    def __init__(self, detail: str, exit_code: Optional[int] = None):
        super().__init__(detail)
        self.detail = detail
        if exit_code is not None:
            self.exit_code = exit_code


class ConfigError(HierSsdError):
    exit_code = 2


class SchemaError(HierSsdError):
    def __init__(self, detail: str, column: Optional[str] = None):
        super().__init__(detail)
        self.column = column


class ParseError(HierSsdError):
    def __init__(self, detail: str, row: int):
        super().__init__(f"row {row}: {detail}")
        self.row = row


class DataValidationError(HierSsdError):
    def __init__(self, detail: str, row: int):
        super().__init__(f"row {row}: {detail}")
        self.row = row


class EmptySelectionError(HierSsdError):
    pass


class NoControlError(HierSsdError):
    pass


class InsufficientDataError(HierSsdError):
    pass


class DomainError(HierSsdError, ValueError):
    pass


class DegenerateSampleError(HierSsdError):
    pass


class UnstableFitError(HierSsdError):
    def __init__(self, detail: str, failure_fraction: float):
        super().__init__(f"{detail} (failure fraction {failure_fraction:.3f})")
        self.failure_fraction = failure_fraction


class InitializationError(HierSsdError):
    def __init__(self, detail: str, component: str):
        super().__init__(f"{detail}: non-finite {component}")
        self.component = component


class ConvergenceError(HierSsdError):
    def __init__(self, rhat: dict[str, float], threshold: float):
        names = ", ".join(f"{k}={v:.3f}" for k, v in rhat.items())
        super().__init__(f"Gelman-Rubin >= {threshold} for {names}")
        self.rhat = rhat
        self.threshold = threshold


class NumericalError(HierSsdError):
    def __init__(self, detail: str, theta_index: Optional[int] = None):
        if theta_index is not None:
            detail = f"theta draw {theta_index}: {detail}"
        super().__init__(detail)
        self.theta_index = theta_index


class UndefinedDiagnosticError(HierSsdError):
    pass
