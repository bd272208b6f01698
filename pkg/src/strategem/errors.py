class StrategemError(Exception):
    """Base class for all package errors."""


class ValidationError(StrategemError, ValueError):
    """Raised when an input (config, workload, strategy) violates its contract."""


class InfeasiblePlanError(StrategemError):
    """Raised when no strategy assignment fits the per-device memory budget."""

    def __init__(self, message, mem_required=None, mem_budget=None):
        super().__init__(message)
        self.mem_required = mem_required
        self.mem_budget = mem_budget


class SearchSpaceTooLarge(StrategemError):
    """Raised by the exhaustive solver when enumeration would be too expensive."""


class InvariantViolation(StrategemError, AssertionError):
    """An internal consistency check failed."""
