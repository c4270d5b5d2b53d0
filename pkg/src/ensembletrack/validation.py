"""Input validation helpers and the package exception hierarchy.

All solver entry points funnel their inputs through these checks so that
dimension mismatches, non-finite entries and infeasible data are rejected
with a named field before any numerics run.
"""

from __future__ import annotations

import numpy as np


class EnsembleTrackError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(EnsembleTrackError, ValueError):
    """Raised when an input violates a documented precondition."""


class SingularMatrixError(EnsembleTrackError, ValueError):
    """Raised for matrices that are singular to working tolerance.

    Attributes:
        condition: estimated condition number of the offending matrix.
    """

    def __init__(self, message: str, condition: float = np.inf):
        super().__init__(message)
        self.condition = float(condition)


class ConvergenceError(EnsembleTrackError, RuntimeError):
    """Raised when an iterative solver exhausts its iteration budget.

    Attributes:
        residual: final residual (solver-specific norm) at abort time.
    """

    def __init__(self, message: str, residual: float = np.nan):
        super().__init__(message)
        self.residual = float(residual)


class DualInfeasibleError(ValidationError):
    """Raised when dual potentials violate the pointwise cost bound.

    Attributes:
        violation: magnitude of the worst constraint violation.
        witness: index tuple of the worst violating point chain, if known.
    """

    def __init__(self, message: str, violation: float, witness=None):
        super().__init__(message)
        self.violation = float(violation)
        self.witness = witness


def check_matrix(a, name: str, *, shape=None, square: bool = False) -> np.ndarray:
    """Coerce ``a`` to a float 2-d array with only finite entries."""
    arr = np.asarray(a, dtype=float)
    if arr.ndim != 2:
        raise ValidationError(f"{name} must be a 2-d array, got ndim={arr.ndim}")
    if not np.isfinite(arr).all():
        raise ValidationError(f"{name} contains non-finite entries")
    if square and arr.shape[0] != arr.shape[1]:
        raise ValidationError(f"{name} must be square, got shape {arr.shape}")
    if shape is not None and arr.shape != tuple(shape):
        raise ValidationError(f"{name} must have shape {tuple(shape)}, got {arr.shape}")
    return arr


def check_vector(a, name: str, *, size: int | None = None) -> np.ndarray:
    """Coerce ``a`` to a finite float 1-d array."""
    arr = np.asarray(a, dtype=float)
    if arr.ndim != 1:
        raise ValidationError(f"{name} must be a 1-d array, got ndim={arr.ndim}")
    if not np.isfinite(arr).all():
        raise ValidationError(f"{name} contains non-finite entries")
    if size is not None and arr.size != size:
        raise ValidationError(f"{name} must have length {size}, got {arr.size}")
    return arr


def check_symmetric(a, name: str, *, tol: float = 1e-8) -> np.ndarray:
    """Validate symmetry to ``tol`` and return the exactly symmetrized copy."""
    arr = check_matrix(a, name, square=True)
    scale = max(1.0, float(np.abs(arr).max()))
    if np.abs(arr - arr.T).max() > tol * scale:
        raise ValidationError(f"{name} is not symmetric to tolerance {tol}")
    return 0.5 * (arr + arr.T)


def check_psd(a, name: str, *, tol: float = 1e-8) -> np.ndarray:
    """Validate that ``a`` is symmetric positive semidefinite to ``tol``."""
    arr = check_symmetric(a, name, tol=tol)
    w = np.linalg.eigvalsh(arr)
    lam_max = max(float(w[-1]), 0.0)
    if w[0] < -tol * max(1.0, lam_max):
        raise ValidationError(
            f"{name} is not positive semidefinite (min eigenvalue {w[0]:.3e})"
        )
    return arr


def check_times(times, name: str = "times", min_points: int = 2) -> np.ndarray:
    """Validate a strictly increasing 1-d time grid."""
    arr = check_vector(times, name)
    if arr.size < min_points:
        raise ValidationError(f"{name} must contain at least {min_points} time points")
    if not (np.diff(arr) > 0).all():
        raise ValidationError(f"{name} must be strictly increasing")
    return arr


def check_weights(w, name: str = "weights") -> np.ndarray:
    """Validate nonnegative weights with positive total mass."""
    arr = check_vector(w, name)
    if (arr < 0).any():
        raise ValidationError(f"{name} must be nonnegative")
    if arr.sum() <= 0:
        raise ValidationError(f"{name} must have positive total mass")
    return arr
