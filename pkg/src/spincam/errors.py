"""Exception hierarchy shared across the package.

CLI exit codes map onto these classes: PreconditionError -> 2,
SolverError -> 3, FitError -> 4.
"""


class SpincamError(Exception):
    """Base class for all package errors."""


class PreconditionError(SpincamError, ValueError):
    """Invalid input or configuration detected before any computation."""


class CapacityError(PreconditionError):
    """Requested cluster or operator exceeds a hard size cap."""


class SolverError(SpincamError, RuntimeError):
    """Time evolution or steady-state solve failed or violated an invariant."""


class DegenerateSteadyStateError(SolverError):
    """Null space of the generator has dimension > 1; steady state not unique."""


class FitError(SpincamError, RuntimeError):
    """Regression (linear response, singularity, or scaling) failed."""
