"""Transport cost kernels induced by a prior linear system.

A continuous-time system ``xdot = A x + B u`` with outputs ``y = C x``
induces, over an interval of length ``dt``, a quadratic cost on state
pairs: the minimum control energy needed to steer from ``x0`` to ``x1``.
The cost is ``(x1 - Phi x0)' W (x1 - Phi x0)`` with ``Phi`` the transition
matrix and ``W`` the inverse of the controllability Gramian over the
interval. This module builds those kernels and the closed-form
minimum-energy bridge used to reconstruct continuous trajectories between
endpoint pairs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import matrix_exp, linear_solve, symmetrize
from .validation import SingularMatrixError, ValidationError, check_matrix, check_vector

__all__ = [
    "LinearSystem",
    "StepKernel",
    "BridgePair",
    "make_kernel",
    "step_cost",
    "step_cost_matrix",
    "bridge",
]

#: singular-value ratio below which controllability directions count as lost
CTRB_RANK_TOL = 1e-10


@dataclass(frozen=True)
class LinearSystem:
    """Prior dynamics ``xdot = A x + B u`` with observation map ``y = C x``.

    The pair ``(A, B)`` must be controllable (Kalman rank test with a
    singular-value threshold); this is validated at construction. Arrays
    are stored read-only and instances are safe to share across threads.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        a = check_matrix(self.A, "A", square=True)
        n = a.shape[0]
        b = check_matrix(self.B, "B")
        if b.shape[0] != n:
            raise ValidationError(f"B must have {n} rows, got {b.shape[0]}")
        c = check_matrix(self.C, "C")
        if c.shape[1] != n:
            raise ValidationError(f"C must have {n} columns, got {c.shape[1]}")
        if np.linalg.matrix_rank(c) < c.shape[0]:
            raise ValidationError("C must have full row rank")
        rank = controllability_rank(a, b)
        if rank < n:
            raise ValidationError(
                f"(A, B) is not controllable: Kalman matrix has rank {rank} < {n}"
            )
        for arr, name in ((a, "A"), (b, "B"), (c, "C")):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.B.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.C.shape[0]


@dataclass(frozen=True)
class StepKernel:
    """Pairwise transport cost data for one observation interval.

    Attributes:
        dt: interval length.
        transition: state transition matrix over the interval.
        gramian: controllability Gramian over the interval (SPD).
        weight: inverse Gramian, the weighting matrix of the cost form.
    """

    dt: float
    transition: np.ndarray
    gramian: np.ndarray
    weight: np.ndarray

    def __post_init__(self):
        for name in ("transition", "gramian", "weight"):
            arr = getattr(self, name)
            arr.setflags(write=False)

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]


@dataclass(frozen=True)
class BridgePair:
    """Endpoint-to-trajectory map of the minimum-energy bridge.

    At normalized time ``tau`` in [0, 1] the optimal path between ``x0``
    and ``x1`` is ``from_start @ x0 + from_end @ x1``. The maps satisfy
    ``from_start(0) = I``, ``from_end(0) = 0`` and ``from_start(1) = 0``,
    ``from_end(1) = I``.
    """

    tau: float
    from_start: np.ndarray
    from_end: np.ndarray

    def interpolate(self, x0, x1) -> np.ndarray:
        """Evaluate the bridge at its time for endpoints ``x0``, ``x1``."""
        return self.from_start @ np.asarray(x0, float) + self.from_end @ np.asarray(x1, float)


def controllability_rank(a: np.ndarray, b: np.ndarray) -> int:
    """Numerical rank of the Kalman controllability matrix ``[B, AB, ...]``."""
    n = a.shape[0]
    blocks = [b]
    for _ in range(n - 1):
        blocks.append(a @ blocks[-1])
    ctrb = np.hstack(blocks)
    sv = np.linalg.svd(ctrb, compute_uv=False)
    if sv.size == 0 or sv[0] == 0.0:
        return 0
    return int(np.sum(sv > CTRB_RANK_TOL * sv[0]))


def gramian(sys: LinearSystem, dt: float) -> np.ndarray:
    """Controllability Gramian over ``[0, dt]`` via the augmented exponential.

    Exponentiates the 2n x 2n block matrix ``[[-A, B B'], [0, A']] * dt``;
    the Gramian is recovered from its blocks (Van Loan's identity). One
    matrix exponential, machine-precision accurate; no quadrature.
    """
    if dt <= 0:
        raise ValidationError(f"dt must be positive, got {dt}")
    n = sys.n_states
    bbt = sys.B @ sys.B.T
    aug = np.zeros((2 * n, 2 * n))
    aug[:n, :n] = -sys.A
    aug[:n, n:] = bbt
    aug[n:, n:] = sys.A.T
    e = matrix_exp(aug, dt)
    # exp blocks: top-right = expm(-A dt) @ integral, bottom-right = expm(A' dt)
    return symmetrize(e[n:, n:].T @ e[:n, n:])


def make_kernel(sys: LinearSystem, dt: float) -> StepKernel:
    """Build the transport cost kernel of ``sys`` over an interval ``dt``.

    Raises:
        SingularMatrixError: if the Gramian is singular to tolerance;
            shortening ``dt`` or reviewing controllability usually helps.
    """
    m = gramian(sys, dt)
    cond = np.linalg.cond(m)
    if not np.isfinite(cond) or cond > 1e12:
        raise SingularMatrixError(
            f"controllability Gramian over dt={dt} is numerically singular "
            f"(cond ~ {cond:.3e}); review dt or the controllability of (A, B)",
            condition=cond,
        )
    q = symmetrize(linear_solve(m, np.eye(sys.n_states)))
    phi = matrix_exp(sys.A, dt)
    return StepKernel(dt=float(dt), transition=phi, gramian=m, weight=q)


def step_cost(kernel: StepKernel, x0, x1) -> float:
    """Minimum control energy to steer from ``x0`` to ``x1`` in one step.

    Zero exactly when ``x1`` equals the free flow ``transition @ x0``.
    """
    n = kernel.n_states
    x0 = check_vector(x0, "x0", size=n)
    x1 = check_vector(x1, "x1", size=n)
    r = x1 - kernel.transition @ x0
    return float(r @ kernel.weight @ r)


def step_cost_matrix(kernel: StepKernel, points0: np.ndarray, points1: np.ndarray) -> np.ndarray:
    """All pairwise step costs between two point sets.

    Args:
        points0: array (N0, n) of start states.
        points1: array (N1, n) of end states.

    Returns:
        Array (N0, N1) with entry (i, j) = step_cost(kernel, points0[i], points1[j]).
    """
    p0 = np.atleast_2d(np.asarray(points0, dtype=float))
    p1 = np.atleast_2d(np.asarray(points1, dtype=float))
    flow = p0 @ kernel.transition.T
    qf = flow @ kernel.weight
    q1 = p1 @ kernel.weight
    cost = (
        np.einsum("ij,ij->i", qf, flow)[:, None]
        - 2.0 * flow @ q1.T
        + np.einsum("ij,ij->i", q1, p1)[None, :]
    )
    # quadratic form is nonnegative; clip the roundoff
    return np.maximum(cost, 0.0)


def bridge(sys: LinearSystem, tau: float, dt: float = 1.0) -> BridgePair:
    """Endpoint maps of the minimum-energy bridge at normalized time ``tau``.

    For an interval of length ``dt``, the optimal trajectory steering
    ``x0`` to ``x1`` is ``x(tau) = G x0 + H x1`` where, writing
    ``t = tau * dt``,

        ``H = M(t) Phi(dt - t)' W(dt)``,   ``G = Phi(t) - H Phi(dt)``,

    with ``M(t)`` the Gramian over ``[0, t]``, ``Phi`` the transition map
    and ``W(dt)`` the inverse of the full-interval Gramian. This follows
    from the adjoint characterization of the optimal control
    ``u(t) = B' lam(t)`` with ``lamdot = -A' lam``.
    """
    if not 0.0 <= tau <= 1.0:
        raise ValidationError(f"tau must lie in [0, 1], got {tau}")
    kernel = make_kernel(sys, dt)
    return bridge_from_kernel(sys, kernel, tau)


def bridge_from_kernel(sys: LinearSystem, kernel: StepKernel, tau: float) -> BridgePair:
    """Like :func:`bridge` but reusing an existing kernel for the interval."""
    if not 0.0 <= tau <= 1.0:
        raise ValidationError(f"tau must lie in [0, 1], got {tau}")
    dt = kernel.dt
    t = tau * dt
    n = sys.n_states
    if tau == 0.0:
        return BridgePair(tau=0.0, from_start=np.eye(n), from_end=np.zeros((n, n)))
    if tau == 1.0:
        return BridgePair(tau=1.0, from_start=np.zeros((n, n)), from_end=np.eye(n))
    m_t = gramian(sys, t)
    phi_rest = matrix_exp(sys.A, dt - t)
    from_end = m_t @ phi_rest.T @ kernel.weight
    from_start = matrix_exp(sys.A, t) - from_end @ kernel.transition
    return BridgePair(tau=float(tau), from_start=from_start, from_end=from_end)
