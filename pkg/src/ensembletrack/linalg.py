"""Dense real linear algebra primitives shared by the solver modules.

Thin, contract-checked wrappers around LAPACK routines (via numpy/scipy):
symmetric eigendecomposition, matrix exponential, Frobenius-nearest PSD
projection and linear solves with an explicit conditioning guard.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg

from .validation import SingularMatrixError, ValidationError, check_matrix, check_symmetric

__all__ = ["sym_eig", "matrix_exp", "psd_project", "linear_solve", "symmetrize"]

#: condition number beyond which a square system is treated as singular
COND_LIMIT = 1e12


def symmetrize(a: np.ndarray) -> np.ndarray:
    """Return the symmetric part ``(a + a.T) / 2``."""
    return 0.5 * (a + a.T)


def sym_eig(s) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix.

    Returns (eigenvalues, eigenvectors) with eigenvalues sorted descending
    and eigenvectors as orthonormal columns, so that
    ``s == V @ diag(w) @ V.T`` to roundoff.
    """
    s = check_symmetric(s, "S")
    try:
        w, v = np.linalg.eigh(s)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - eigh rarely fails
        residual = float(np.linalg.norm(s))
        raise SingularMatrixError(
            f"symmetric eigendecomposition did not converge (residual {residual:.3e})"
        ) from exc
    order = np.argsort(w)[::-1]
    return w[order], v[:, order]


def matrix_exp(a, t: float = 1.0) -> np.ndarray:
    """Matrix exponential ``expm(a * t)`` (scaling-and-squaring Pade)."""
    a = check_matrix(a, "A", square=True)
    return scipy.linalg.expm(a * float(t))


def psd_project(s) -> np.ndarray:
    """Frobenius-nearest positive semidefinite matrix.

    Clamps negative eigenvalues to zero in the eigenbasis; idempotent.
    """
    w, v = sym_eig(s)
    w = np.maximum(w, 0.0)
    return symmetrize((v * w) @ v.T)


def linear_solve(m, b) -> np.ndarray:
    """Solve ``m @ x = b`` for a numerically nonsingular square ``m``.

    Raises:
        SingularMatrixError: if the condition number of ``m`` exceeds
            ``COND_LIMIT``; the estimate is attached to the exception.
    """
    m = check_matrix(m, "M", square=True)
    b_arr = np.asarray(b, dtype=float)
    if b_arr.ndim not in (1, 2):
        raise ValidationError("b must be a vector or a matrix")
    if b_arr.shape[0] != m.shape[0]:
        raise ValidationError(
            f"b has leading dimension {b_arr.shape[0]}, expected {m.shape[0]}"
        )
    if not np.isfinite(b_arr).all():
        raise ValidationError("b contains non-finite entries")
    cond = np.linalg.cond(m)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise SingularMatrixError(
            f"matrix is singular to working precision (cond ~ {cond:.3e})",
            condition=cond,
        )
    return scipy.linalg.solve(m, b_arr)
