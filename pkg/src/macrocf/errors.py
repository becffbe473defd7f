"""Exception hierarchy.

``InputError`` covers bad user input (shapes, schemas, configs) and maps to
CLI exit code 1; ``NumericalError`` covers failures of the numerics
(singular systems, non-convergence, failed definiteness checks) and maps to
exit code 2.
"""


class MacrocfError(Exception):
    pass


class InputError(MacrocfError):
    pass


class ShapeError(InputError):
    """Dimension or finiteness violation in a numerical input."""


class SchemaError(InputError):
    """Malformed data file or configuration."""


class NumericalError(MacrocfError):
    pass


class SingularMatrixError(NumericalError):
    """A matrix that must be solved exactly is numerically singular."""


class WeakInstrumentError(SingularMatrixError):
    """Instrument/regressor cross-moment matrix is near singular."""


class DefinitenessError(NumericalError):
    """A required (semi)definiteness condition failed."""


class ConvergenceError(NumericalError):
    """An iterative solver did not converge."""


class RecoveryError(NumericalError):
    """Structural shocks could not be recovered from observables."""
