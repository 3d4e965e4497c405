"""Information-form Gaussians and first-order factor linearization.

Everything downstream (messages, factors, marginals) is carried as a
precision matrix ``J`` plus an information vector ``h`` over the *correction*
to the current linearization point; posterior moments are recovered by a
single solve.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError, SingularMatrixError

# ridge is applied when a solve fails or its residual is untrustworthy;
# epsilon follows trace/dim scaling so it is unit free
RIDGE_SCALE = 1e-9
CONDITION_LIMIT = 1e10
MOMENT_CONDITION_LIMIT = 1e12
SOLVE_RESIDUAL_TOL = 1e-8


def symmetrize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


def _as_matrix(a, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"{name}: expected a square matrix, got shape {a.shape}")
    return a


def _as_vector(a, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=float).reshape(-1)
    if not np.all(np.isfinite(a)):
        raise NumericalError(f"{name}: non-finite entries")
    return a


def _solve_checked(a: np.ndarray, b: np.ndarray):
    """Solve and accept only if the residual is small relative to scale."""
    try:
        x = np.linalg.solve(a, b)
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(x)):
        return None
    scale = np.abs(a).max() * max(np.abs(x).max(), 1.0) + np.abs(b).max() + 1e-300
    if np.abs(a @ x - b).max() > SOLVE_RESIDUAL_TOL * scale:
        return None
    return x


def robust_solve(a, b, *, name: str = "matrix") -> np.ndarray:
    """Solve ``a x = b`` for symmetric ``a``, ridging the diagonal if needed.

    The ridge (``1e-9 * trace/dim``) is only added when the direct solve is
    unusable; a matrix that stays singular afterwards raises
    :class:`SingularMatrixError` naming ``name``.
    """
    a = symmetrize(_as_matrix(a, name))
    b = np.asarray(b, dtype=float)
    x = _solve_checked(a, b)
    if x is not None:
        return x
    eps = RIDGE_SCALE * np.trace(a) / a.shape[0]
    if eps > 0:
        x = _solve_checked(a + eps * np.eye(a.shape[0]), b)
        if x is not None:
            return x
    raise SingularMatrixError(f"{name} is singular (dim {a.shape[0]})")


def robust_inv(a, *, name: str = "matrix") -> np.ndarray:
    return symmetrize(robust_solve(a, np.eye(_as_matrix(a, name).shape[0]), name=name))


def apply_ridge(a: np.ndarray) -> np.ndarray:
    """Add the standard ridge when ``a`` is badly conditioned, else return as is."""
    a = symmetrize(a)
    cond = np.linalg.cond(a)
    if np.isfinite(cond) and cond <= CONDITION_LIMIT:
        return a
    eps = RIDGE_SCALE * max(np.trace(a), 0.0) / a.shape[0]
    return a + eps * np.eye(a.shape[0])


@dataclass(frozen=True)
class CanonicalGaussian:
    """Gaussian in canonical form: density proportional to exp(-x'Jx/2 + x'h).

    ``J`` is symmetrized on construction. Positive semi-definiteness is a
    maintained invariant of every quadratic-form construction in this module
    and is asserted by :meth:`validate` in the test suites rather than on
    every message allocation.
    """

    J: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        J = symmetrize(_as_matrix(self.J, "J"))
        h = _as_vector(self.h, "h")
        if J.shape[0] != h.shape[0]:
            raise ValueError(f"J is {J.shape} but h has length {h.shape[0]}")
        if not np.all(np.isfinite(J)):
            raise NumericalError("precision matrix has non-finite entries")
        object.__setattr__(self, "J", J)
        object.__setattr__(self, "h", h)

    @property
    def dim(self) -> int:
        return self.h.shape[0]

    @classmethod
    def zero(cls, dim: int) -> "CanonicalGaussian":
        """Uninformative message of the given dimension."""
        return cls(np.zeros((dim, dim)), np.zeros(dim))

    def __add__(self, other: "CanonicalGaussian") -> "CanonicalGaussian":
        if self.dim != other.dim:
            raise ValueError(f"dimension mismatch: {self.dim} vs {other.dim}")
        return CanonicalGaussian(self.J + other.J, self.h + other.h)

    def to_moments(self, *, name: str = "precision matrix"):
        """Return ``(mean, covariance)``; raises if ``J`` is singular."""
        cov = robust_inv(self.J, name=name)
        return cov @ self.h, cov

    def validate(self, *, psd_tol: float = 1e-9) -> None:
        """Assert the symmetric-PSD invariant (tolerance scales with ||J||)."""
        scale = max(1.0, np.abs(self.J).max())
        if np.abs(self.J - self.J.T).max() > 1e-10 * scale:
            raise NumericalError("precision matrix lost symmetry")
        if np.linalg.eigvalsh(self.J).min() < -psd_tol * scale:
            raise NumericalError("precision matrix is not positive semi-definite")


def canonical_from_moments(mean, cov) -> CanonicalGaussian:
    """Convert ``(mean, covariance)`` to canonical form.

    The covariance must be comfortably invertible (condition number below
    1e12), otherwise :class:`SingularMatrixError` names it.
    """
    mean = _as_vector(mean, "mean")
    cov = symmetrize(_as_matrix(cov, "covariance"))
    if cov.shape[0] != mean.shape[0]:
        raise ValueError(f"covariance is {cov.shape} but mean has length {mean.shape[0]}")
    cond = np.linalg.cond(cov)
    if not np.isfinite(cond) or cond > MOMENT_CONDITION_LIMIT:
        raise SingularMatrixError(
            f"covariance is numerically singular (condition number {cond:.3g})"
        )
    J = symmetrize(np.linalg.inv(cov))
    return CanonicalGaussian(J, J @ mean)


class LinearMap:
    """Affine map ``x -> A x + offset`` with a constant Jacobian."""

    def __init__(self, matrix, offset=None):
        self.matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
        if offset is None:
            offset = np.zeros(self.matrix.shape[0])
        self.offset = np.asarray(offset, dtype=float).reshape(-1)
        if self.offset.shape[0] != self.matrix.shape[0]:
            raise ValueError("offset length does not match the matrix row count")

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.matrix @ np.asarray(x, dtype=float) + self.offset

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        return self.matrix

    @property
    def is_identity(self) -> bool:
        m = self.matrix
        return (
            m.shape[0] == m.shape[1]
            and np.array_equal(m, np.eye(m.shape[0]))
            and not self.offset.any()
        )


def identity_map(dim: int) -> LinearMap:
    return LinearMap(np.eye(dim))


class FunctionMap:
    """Differentiable map given as a pair of callables ``(fn, jac)``."""

    is_identity = False

    def __init__(self, fn, jac):
        self.fn = fn
        self.jac = jac

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(self.fn(np.asarray(x, dtype=float)), dtype=float).reshape(-1)

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        return np.atleast_2d(np.asarray(self.jac(np.asarray(x, dtype=float)), dtype=float))


def as_linearization_point(x, dim: int | None = None) -> np.ndarray:
    """Validated expansion point: finite, one dimensional, optional length check."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if not np.all(np.isfinite(x)):
        raise NumericalError("linearization point has non-finite entries")
    if dim is not None and x.shape[0] != dim:
        raise ValueError(f"linearization point has length {x.shape[0]}, expected {dim}")
    return x


def _weighted_jacobian(mapping, noise, point, *, noise_name: str):
    point = as_linearization_point(point)
    F = np.atleast_2d(np.asarray(mapping.jacobian(point), dtype=float))
    if not np.all(np.isfinite(F)):
        raise NumericalError("Jacobian has non-finite entries")
    noise = symmetrize(_as_matrix(noise, noise_name))
    if noise.shape[0] != F.shape[0]:
        raise ValueError(
            f"{noise_name} is {noise.shape} but the map produces {F.shape[0]} outputs"
        )
    prediction = np.asarray(mapping(point), dtype=float).reshape(-1)
    if prediction.shape[0] != F.shape[0]:
        raise ValueError("map output and Jacobian row count disagree")
    return point, F, noise, prediction


def linearize_conditional(mapping, noise, observation, point) -> CanonicalGaussian:
    """Canonical factor for an observation model ``y = f(x) + noise``.

    The returned Gaussian lives on the correction ``x - point``:
    ``J = F' R^-1 F`` and ``h = F' R^-1 (y - f(point))`` with ``F`` the
    Jacobian of ``mapping`` at ``point``.
    """
    point, F, noise, prediction = _weighted_jacobian(
        mapping, noise, point, noise_name="noise covariance R"
    )
    observation = _as_vector(observation, "observation")
    if observation.shape[0] != F.shape[0]:
        raise ValueError(
            f"observation has length {observation.shape[0]}, map produces {F.shape[0]}"
        )
    rhs = np.column_stack([F, (observation - prediction)[:, None]])
    solved = robust_solve(noise, rhs, name="noise covariance R")
    J = symmetrize(F.T @ solved[:, :-1])
    h = F.T @ solved[:, -1]
    return CanonicalGaussian(J, h)


def linearize_joint(mapping, cov, point) -> CanonicalGaussian:
    """Canonical factor for a self-consistency model ``x ~ g(x)``.

    ``J = G' S^-1 G`` and ``h = G' S^-1 (point - g(point))``; the residual is
    evaluated at the expansion point so the factor is constant during a sweep.
    """
    point, G, cov, prediction = _weighted_jacobian(
        mapping, cov, point, noise_name="factor covariance S"
    )
    if G.shape[1] != point.shape[0]:
        raise ValueError(
            f"Jacobian has {G.shape[1]} columns but the point has length {point.shape[0]}"
        )
    rhs = np.column_stack([G, (point - prediction)[:, None]])
    solved = robust_solve(cov, rhs, name="factor covariance S")
    J = symmetrize(G.T @ solved[:, :-1])
    h = G.T @ solved[:, -1]
    return CanonicalGaussian(J, h)
