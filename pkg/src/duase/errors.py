"""Exception types shared across the package."""


class DuaseError(Exception):
    """Base class for all library errors."""


class ValidationError(DuaseError):
    """Invalid inputs or violated data invariants (CLI exit code 2)."""


class NumericalError(DuaseError):
    """Numerical failure such as a singular system (CLI exit code 3)."""


class ConvergenceError(NumericalError):
    """An iterative solver exhausted its iteration budget."""
