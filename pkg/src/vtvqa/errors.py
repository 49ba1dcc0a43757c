"""Exception types shared across the package."""


class VtvqaError(Exception):
    """Base class for all package errors."""


class AnnotationError(VtvqaError):
    """Annotation file cannot be parsed."""


class ValidationError(VtvqaError):
    """Input data violates a documented invariant."""


class ConfigError(VtvqaError):
    """Configuration is inconsistent or incomplete."""


class CapacityError(VtvqaError):
    """Input exceeds a configured model capacity."""


class ContractViolation(VtvqaError):
    """A caller-side precondition was broken."""


class NumericError(VtvqaError):
    """Non-finite values encountered where finite math is required."""
