"""Exception hierarchy shared across the package.

Two broad families matter to callers: data/structure problems
(:class:`DataError`) and numerical failures (:class:`NumericalError`).
The CLI maps them to distinct exit codes.
"""


class GridModelError(Exception):
    """Base class for all errors raised by this package."""


class DataError(GridModelError):
    """Bad inputs: files, schemas, graph structure, masks."""


class SchemaError(DataError):
    """A serialized artifact does not match its documented schema."""


class ValidationError(DataError):
    """A factor graph violates its structural invariants."""


class SchedulingError(DataError):
    """Message ordering is impossible or a prerequisite is missing."""


class ConnectivityError(DataError):
    """An operation requiring a connected graph got a disconnected one."""


class ObservabilityError(DataError):
    """The available observations do not pin down the requested state."""


class NumericalError(GridModelError):
    """A numerical procedure failed."""


class SingularMatrixError(NumericalError):
    """A matrix that must be invertible is singular (names the matrix)."""


class InversionDivergenceError(NumericalError):
    """Latent-code gradient descent failed to make progress."""


class TrainingError(NumericalError):
    """Decoder training hit a non-finite loss."""


class DegenerateModelError(NumericalError):
    """A decoder's observed-row Jacobian is rank deficient."""
