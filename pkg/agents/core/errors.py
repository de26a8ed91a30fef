"""Exception hierarchy shared by the library and the stage agents."""

from __future__ import annotations


class ModHealthError(Exception):
    """Base class for every error raised by modhealth."""


class ConfigError(ModHealthError):
    """Invalid or inconsistent configuration."""


class InputError(ModHealthError):
    """Input data violates a precondition."""


class DomainError(InputError):
    """Evaluation requested outside the window a model was fitted on."""


class DegenerateColumnError(InputError):
    """Column without spread, or a self-information that is not positive."""


class StateError(ModHealthError):
    """Operation not valid for the current selection state."""


class SelectionError(ModHealthError):
    """Feature selection could not produce a result."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class NumericError(ModHealthError):
    """Numerical procedure failed."""


class SolverError(NumericError):
    """Current-split root finding did not converge."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (last residual {residual:.3e})")
        self.residual = residual


class FitError(NumericError):
    """Curve smoothing failed; ``report`` holds the conditioning details."""

    def __init__(self, message: str, report: dict | None = None):
        super().__init__(message)
        self.report = report or {}


class DegenerateModelError(NumericError):
    """Every basis function of a sparse model was pruned."""


class ChargeComplete(Exception):
    """Signal raised when every cell of a module is fully charged."""
