"""Exception hierarchy shared across the toolkit."""


class LendAuditError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(LendAuditError):
    """Input data violates a documented invariant (exit code 2)."""


class SchemaError(ValidationError):
    """A required column or field is missing from an input file."""


class NumericalError(LendAuditError):
    """A solver or statistical routine failed (exit code 3)."""


class DegenerateInputError(ValidationError):
    """Well-formed input that is degenerate for the requested operation
    (empty collection, zero total weight, constant regressor, ...)."""
