"""Chain-structured transport over discretized state grids.

Observation frames are unordered point sets in output space. Each frame's
empirical measure constrains the pushforward of an unknown state-space
measure supported on a grid, and consecutive state measures are coupled by
the control-energy cost of the prior dynamics. The resulting linear
program couples the chain only through per-time pushforward constraints,
so it decomposes into forward/backward message passing.

The solver is entropically regularized iterative scaling, run in the log
domain with a geometric annealing schedule on the regularization weight.
One scaling update matches the aggregated mass of all grid points sharing
an output bin to that bin's observed weight; the scaling factors are the
exponentiated dual potentials. After annealing, the potentials are
shifted by the exact worst-case constraint violation (computed by a
max-plus recursion along the chain) so they are feasible for the
unregularized dual, which yields a certified duality gap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy.special import logsumexp

from .dynamics import LinearSystem, StepKernel, step_cost_matrix
from .gaussian import output_form_from_kernels
from .linalg import linear_solve
from .validation import (
    ConvergenceError,
    DualInfeasibleError,
    ValidationError,
    check_matrix,
    check_weights,
)

__all__ = [
    "DiscreteMeasure",
    "StateGrid",
    "GridConfig",
    "CouplingChain",
    "DualPotentials",
    "ChainSolution",
    "GapReport",
    "TrajectoryEstimate",
    "BruteForceResult",
    "GluedChain",
    "build_state_grids",
    "solve_chain",
    "brute_force_assignment",
    "duality_gap",
    "extract_trajectories",
    "glue_chain",
]


@dataclass(frozen=True)
class DiscreteMeasure:
    """Weighted point set in output space."""

    support: np.ndarray  # (N, m)
    weights: np.ndarray  # (N,)

    def __post_init__(self):
        support = np.atleast_2d(np.asarray(self.support, dtype=float))
        if not np.isfinite(support).all():
            raise ValidationError("support contains non-finite entries")
        if support.shape[0] == 0:
            raise ValidationError("support must contain at least one point")
        weights = check_weights(self.weights, "weights")
        if weights.size != support.shape[0]:
            raise ValidationError(
                f"weights length {weights.size} does not match {support.shape[0]} support points"
            )
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def from_points(cls, points, weight: float = 1.0) -> "DiscreteMeasure":
        """Equal-weight measure on a point cloud (one unit per point by default)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return cls(support=pts, weights=np.full(pts.shape[0], float(weight)))

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum())

    @property
    def n_points(self) -> int:
        return self.support.shape[0]


@dataclass(frozen=True)
class StateGrid:
    """Candidate state points at one time, tagged with their output bin.

    ``bin_index[i]`` is the index of the output-support point that grid
    point ``i`` maps to under the observation matrix, or -1 if it maps to
    none (such points can carry no mass).
    """

    points: np.ndarray  # (G, n)
    bin_index: np.ndarray  # (G,) int
    n_bins: int

    def __post_init__(self):
        points = np.atleast_2d(np.asarray(self.points, dtype=float))
        bins = np.asarray(self.bin_index, dtype=int)
        if bins.shape != (points.shape[0],):
            raise ValidationError("bin_index must have one entry per grid point")
        if bins.size and (bins.min() < -1 or bins.max() >= self.n_bins):
            raise ValidationError("bin_index entries must lie in [-1, n_bins)")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "bin_index", bins)

    @property
    def n_points(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class GridConfig:
    """Grid construction settings for the unobserved state directions."""

    bounds: tuple[float, float] = (-7.0, 7.0)
    points_per_dim: int = 150
    complement_basis: np.ndarray | None = None
    snap_tol: float = 1e-9


@dataclass
class CouplingChain:
    """Pairwise couplings and state marginals solving the chain problem."""

    couplings: list[np.ndarray]  # T arrays (G_k, G_{k+1}), raw mass
    state_marginals: list[np.ndarray]  # T+1 arrays (G_k,), raw mass
    grids: list[StateGrid]
    costs: list[np.ndarray]  # T cost matrices matching couplings
    total_mass: float

    @property
    def n_steps(self) -> int:
        return len(self.couplings)

    def marginal_residuals(self) -> tuple[float, float]:
        """Max row/column-sum mismatch of the couplings vs the marginals."""
        row = 0.0
        col = 0.0
        for k, pi in enumerate(self.couplings):
            row = max(row, float(np.abs(pi.sum(axis=1) - self.state_marginals[k]).max()))
            col = max(col, float(np.abs(pi.sum(axis=0) - self.state_marginals[k + 1]).max()))
        return row, col


@dataclass
class DualPotentials:
    """One potential value per output-support point and time."""

    values: list[np.ndarray]

    def lifted(self, grids: Sequence[StateGrid]) -> list[np.ndarray]:
        """Potentials pulled back to grid points (-inf off the support)."""
        out = []
        for phi, grid in zip(self.values, grids):
            lifted = np.full(grid.n_points, -np.inf)
            mask = grid.bin_index >= 0
            lifted[mask] = phi[grid.bin_index[mask]]
            out.append(lifted)
        return out


@dataclass
class ChainSolution:
    """Converged output of :func:`solve_chain`."""

    chain: CouplingChain
    potentials: DualPotentials
    objective: float
    objective_normalized: float
    dual_objective: float
    gap: float
    iterations: int
    residual: float
    epsilon: float


class GapReport(NamedTuple):
    primal: float
    dual: float
    gap: float


@dataclass
class TrajectoryEstimate:
    """Path decomposition of a coupling chain.

    ``mode`` is "paths" when the chain is close enough to a permutation
    flow to decompose greedily; otherwise "edges", in which case ``edges``
    holds per-interval arrays with columns (from index, to index, mass).
    """

    mode: str
    paths: list[np.ndarray] = field(default_factory=list)  # each (T+1, n)
    masses: list[float] = field(default_factory=list)
    indices: list[np.ndarray] = field(default_factory=list)  # grid indices per path
    edges: list[np.ndarray] | None = None
    sharpness: float = 0.0


@dataclass
class BruteForceResult:
    """Globally optimal association from exhaustive enumeration."""

    association: tuple
    cost: float
    states: np.ndarray  # (N, T+1, n)
    runner_up_cost: float
    n_assignments: int


def _is_coordinate_selection(c: np.ndarray) -> np.ndarray | None:
    """Return selected column indices if C picks distinct coordinates, else None."""
    cols = []
    for row in c:
        nz = np.nonzero(row)[0]
        if nz.size != 1 or row[nz[0]] != 1.0:
            return None
        cols.append(nz[0])
    if len(set(cols)) != len(cols):
        return None
    return np.asarray(cols, dtype=int)


def build_state_grids(
    outputs: Sequence[DiscreteMeasure],
    sys: LinearSystem,
    config: GridConfig = GridConfig(),
) -> list[StateGrid]:
    """Lift each frame's output support to a state-space grid.

    Each grid is the product of the observed support with a uniform grid
    of ``points_per_dim`` values per unobserved state direction over
    ``bounds``. Requires the observation matrix to select coordinates, or
    an explicit ``complement_basis`` spanning its null space.
    """
    if len(outputs) == 0:
        raise ValidationError("outputs must contain at least one frame")
    c = sys.C
    n, m = sys.n_states, sys.n_outputs
    free_dim = n - m
    if free_dim < 0:
        raise ValidationError("C cannot have more rows than states")

    if free_dim == 0:
        lift = linear_solve(c, np.eye(n))
        basis = np.zeros((n, 0))
        mesh = np.zeros((1, 0))
    else:
        cols = _is_coordinate_selection(c)
        if cols is not None and config.complement_basis is None:
            lift = c.T
            free_cols = [j for j in range(n) if j not in set(cols.tolist())]
            basis = np.eye(n)[:, free_cols]
        elif config.complement_basis is not None:
            basis = check_matrix(config.complement_basis, "complement_basis", shape=(n, free_dim))
            if np.abs(c @ basis).max() > 1e-12 * max(1.0, np.abs(c).max()):
                raise ValidationError("complement_basis must span the null space of C")
            if np.linalg.matrix_rank(basis) < free_dim:
                raise ValidationError("complement_basis must have full column rank")
            lift = c.T @ linear_solve(c @ c.T, np.eye(m))
        else:
            raise ValidationError(
                "C is not a coordinate selection; supply complement_basis for the "
                "unobserved subspace"
            )
        lo, hi = config.bounds
        if not hi > lo:
            raise ValidationError(f"grid bounds must satisfy lo < hi, got {config.bounds}")
        axis = np.linspace(lo, hi, config.points_per_dim)
        mesh = np.stack(
            np.meshgrid(*([axis] * free_dim), indexing="ij"), axis=-1
        ).reshape(-1, free_dim)

    grids = []
    offsets = mesh @ basis.T  # (P, n)
    for measure in outputs:
        if measure.support.shape[1] != m:
            raise ValidationError(
                f"support dimension {measure.support.shape[1]} does not match C with {m} rows"
            )
        bases = measure.support @ lift.T  # (N, n)
        pts = (bases[:, None, :] + offsets[None, :, :]).reshape(-1, n)
        bins = np.repeat(np.arange(measure.n_points), offsets.shape[0])
        snap = np.abs(pts @ c.T - measure.support[bins]).max() if pts.size else 0.0
        if snap > config.snap_tol:
            raise ValidationError(
                f"grid points miss their output bins by {snap:.3e} (> snap_tol)"
            )
        grids.append(StateGrid(points=pts, bin_index=bins, n_bins=measure.n_points))
    return grids


def _segment_lse(values: np.ndarray, bins: np.ndarray, n_bins: int) -> np.ndarray:
    """Log-sum-exp of ``values`` grouped by bin index (-1 entries ignored)."""
    out = np.full(n_bins, -np.inf)
    mask = (bins >= 0) & (values > -np.inf)
    if not mask.any():
        return out
    v = values[mask]
    b = bins[mask]
    peak = np.full(n_bins, -np.inf)
    np.maximum.at(peak, b, v)
    sums = np.zeros(n_bins)
    np.add.at(sums, b, np.exp(v - peak[b]))
    hit = sums > 0
    out[hit] = peak[hit] + np.log(sums[hit])
    return out


def _lift_log_scaling(phi_over_eps: np.ndarray, grid: StateGrid) -> np.ndarray:
    lifted = np.full(grid.n_points, -np.inf)
    mask = grid.bin_index >= 0
    lifted[mask] = phi_over_eps[grid.bin_index[mask]]
    return lifted


def _validate_solve_inputs(kernels, outputs, grids):
    if len(outputs) < 2:
        raise ValidationError("need at least two observation frames")
    if len(grids) != len(outputs):
        raise ValidationError("grids and outputs must have equal length")
    if len(kernels) != len(outputs) - 1:
        raise ValidationError("need one kernel per consecutive frame pair")
    n = kernels[0].n_states
    for k, grid in enumerate(grids):
        if grid.points.shape[1] != n:
            raise ValidationError(f"grid {k} has state dimension {grid.points.shape[1]}, expected {n}")
        if grid.n_bins != outputs[k].n_points:
            raise ValidationError(f"grid {k} bins do not match frame {k} support")
    masses = np.array([m.total_mass for m in outputs])
    if np.abs(masses - masses[0]).max() > 1e-9 * max(1.0, masses[0]):
        raise ValidationError(
            f"all frames must carry equal total mass, got {masses.tolist()}"
        )
    for k, (measure, grid) in enumerate(zip(outputs, grids)):
        covered = np.bincount(grid.bin_index[grid.bin_index >= 0], minlength=grid.n_bins) > 0
        missing = np.nonzero((measure.weights > 0) & ~covered)[0]
        if missing.size:
            raise ValidationError(
                f"frame {k}: support point {missing[0]} has positive mass but no grid point"
            )
    return float(masses[0])


def _epsilon_schedule(epsilon: float, start: float, factor: float) -> list[float]:
    if epsilon <= 0:
        raise ValidationError("epsilon must be positive")
    if not 0 < factor < 1:
        raise ValidationError("anneal_factor must lie in (0, 1)")
    stages = []
    e = start
    while e > epsilon * (1 + 1e-12):
        stages.append(e)
        e *= factor
    stages.append(epsilon)
    return stages


def _max_violation(lifted_phis: list[np.ndarray], costs: list[np.ndarray]):
    """Exact max of sum(potentials) - sum(costs) over all grid chains.

    Max-plus forward recursion; returns (violation, witness index tuple).
    Equivalent to exhaustively checking every tuple of grid points.
    """
    score = lifted_phis[0].copy()
    back = []
    for k, cost in enumerate(costs):
        stage = score[:, None] - cost
        best = np.argmax(stage, axis=0)
        score = stage[best, np.arange(cost.shape[1])] + lifted_phis[k + 1]
        back.append(best)
    j = int(np.argmax(score))
    violation = float(score[j])
    witness = [j]
    for best in reversed(back):
        witness.append(int(best[witness[-1]]))
    witness.reverse()
    return violation, tuple(witness)


def solve_chain(
    kernels: Sequence[StepKernel],
    outputs: Sequence[DiscreteMeasure],
    grids: Sequence[StateGrid],
    epsilon: float = 1e-3,
    tol: float = 1e-8,
    *,
    anneal_start: float = 1.0,
    anneal_factor: float = 0.5,
    max_iter: int = 5000,
    mode: str = "log",
) -> ChainSolution:
    """Solve the chain transport problem with pushforward marginal constraints.

    Minimizes the summed pairwise step costs over couplings whose state
    marginals push forward (through the output bins of each grid) to the
    observed frame weights, using entropic regularization annealed from
    ``anneal_start`` down to ``epsilon`` by ``anneal_factor`` per stage.

    Args:
        kernels: one step kernel per consecutive frame pair.
        outputs: observed output measures, equal total mass.
        grids: state grids ordered like ``outputs``.
        epsilon: final entropic weight.
        tol: total-variation tolerance on the pushforward constraints.
        max_iter: sweep budget per annealing stage.
        mode: "log" (default, stable at small epsilon) or "scaling"
            (plain-domain, faster but prone to underflow).

    Returns:
        A :class:`ChainSolution` with raw-mass couplings, feasibility-shifted
        dual potentials, both objectives and the certified duality gap.
    """
    kappa = _validate_solve_inputs(kernels, outputs, grids)
    if mode not in ("log", "scaling"):
        raise ValidationError(f"unknown mode {mode!r}")
    n_frames = len(outputs)
    weights = [m.weights / kappa for m in outputs]
    with np.errstate(divide="ignore"):
        log_w = [np.log(w) for w in weights]

    costs = [
        step_cost_matrix(kern, grids[k].points, grids[k + 1].points)
        for k, kern in enumerate(kernels)
    ]

    phis = [np.where(w > 0, 0.0, -np.inf) for w in weights]
    stages = _epsilon_schedule(epsilon, anneal_start, anneal_factor)
    total_sweeps = 0
    residual = np.inf
    for stage_idx, eps in enumerate(stages):
        final_stage = stage_idx == len(stages) - 1
        # intermediate stages only warm-start the next one, so a coarse
        # pass is enough; the requested tolerance applies at the final eps
        stage_tol = tol if final_stage else max(tol, 1e-3)
        stage_cap = max_iter if final_stage else min(max_iter, 300)
        if mode == "log":
            phis, sweeps, residual = _stage_log(
                costs, grids, log_w, phis, eps, stage_tol, stage_cap
            )
        else:
            phis, sweeps, residual = _stage_scaling(
                costs, grids, weights, phis, eps, stage_tol, stage_cap
            )
        total_sweeps += sweeps
        if final_stage and residual > stage_tol:
            raise ConvergenceError(
                f"marginal constraints not met after {max_iter} sweeps at epsilon="
                f"{eps:.3e} (max TV residual {residual:.3e})",
                residual=residual,
            )

    # final message pass at the last epsilon
    eps = stages[-1]
    log_k = [-c / eps for c in costs]
    lus = [_lift_log_scaling(phi / eps, grid) for phi, grid in zip(phis, grids)]
    lb = [None] * n_frames
    lb[-1] = np.zeros(grids[-1].n_points)
    for k in range(n_frames - 2, -1, -1):
        lb[k] = logsumexp(log_k[k] + (lus[k + 1] + lb[k + 1])[None, :], axis=1)
    la = [None] * n_frames
    la[0] = np.zeros(grids[0].n_points)
    for k in range(n_frames - 1):
        la[k + 1] = logsumexp(log_k[k] + (la[k] + lus[k])[:, None], axis=0)

    marginals = [np.exp(lus[k] + la[k] + lb[k]) for k in range(n_frames)]
    couplings = []
    for k in range(n_frames - 1):
        log_pi = (
            (la[k] + lus[k])[:, None]
            + log_k[k]
            + (lus[k + 1] + lb[k + 1])[None, :]
        )
        couplings.append(np.exp(log_pi))

    objective_normalized = float(sum(np.sum(pi * c) for pi, c in zip(couplings, costs)))
    objective = kappa * objective_normalized

    # shift potentials so the pointwise dual constraint holds exactly
    lifted = [_lift_log_scaling(phi, grid) for phi, grid in zip(phis, grids)]
    violation, _ = _max_violation(lifted, costs)
    if violation > 0:
        shifted0 = phis[0].copy()
        shifted0[np.isfinite(shifted0)] -= violation
        phis = [shifted0] + [phi.copy() for phi in phis[1:]]

    dual_objective = kappa * float(
        sum(np.sum(phi[w > 0] * w[w > 0]) for phi, w in zip(phis, weights))
    )

    chain = CouplingChain(
        couplings=[kappa * pi for pi in couplings],
        state_marginals=[kappa * r for r in marginals],
        grids=list(grids),
        costs=costs,
        total_mass=kappa,
    )
    potentials = DualPotentials(values=[phi.copy() for phi in phis])
    return ChainSolution(
        chain=chain,
        potentials=potentials,
        objective=objective,
        objective_normalized=objective_normalized,
        dual_objective=dual_objective,
        gap=objective - dual_objective,
        iterations=total_sweeps,
        residual=residual,
        epsilon=eps,
    )


def _stage_log(costs, grids, log_w, phis, eps, stage_tol, max_iter):
    """One annealing stage of log-domain scaling sweeps."""
    n_frames = len(grids)
    log_k = [-c / eps for c in costs]
    phis = [phi.copy() for phi in phis]
    lus = [_lift_log_scaling(phi / eps, grid) for phi, grid in zip(phis, grids)]
    residual = np.inf
    for sweep in range(1, max_iter + 1):
        lb = [None] * n_frames
        lb[-1] = np.zeros(grids[-1].n_points)
        for k in range(n_frames - 2, -1, -1):
            lb[k] = logsumexp(log_k[k] + (lus[k + 1] + lb[k + 1])[None, :], axis=1)
        la_k = np.zeros(grids[0].n_points)
        max_tv = 0.0
        for k in range(n_frames):
            lm = la_k + lb[k]
            agg = _segment_lse(lm, grids[k].bin_index, grids[k].n_bins)
            finite_target = log_w[k] > -np.inf
            if np.any(finite_target & (agg == -np.inf)):
                raise ConvergenceError(
                    f"frame {k}: no mass can reach a support point with positive weight",
                    residual=np.inf,
                )
            with np.errstate(invalid="ignore"):
                current = np.exp(phis[k] / eps + agg)
            current[~finite_target] = 0.0
            max_tv = max(max_tv, 0.5 * float(np.abs(current - np.exp(log_w[k])).sum()))
            phis[k] = np.where(finite_target, eps * (log_w[k] - agg), -np.inf)
            lus[k] = _lift_log_scaling(phis[k] / eps, grids[k])
            if k < n_frames - 1:
                la_k = logsumexp(log_k[k] + (la_k + lus[k])[:, None], axis=0)
        residual = max_tv
        if residual <= stage_tol:
            return phis, sweep, residual
    return phis, max_iter, residual


def _stage_scaling(costs, grids, weights, phis, eps, stage_tol, max_iter):
    """Plain-domain scaling sweeps; raises on underflow."""
    n_frames = len(grids)
    kmats = [np.exp(-c / eps) for c in costs]
    phis = [phi.copy() for phi in phis]

    def lift_u(phi, grid):
        with np.errstate(over="ignore"):
            u_bin = np.exp(phi / eps)
        u = np.zeros(grid.n_points)
        mask = grid.bin_index >= 0
        u[mask] = u_bin[grid.bin_index[mask]]
        return u

    us = [lift_u(phi, grid) for phi, grid in zip(phis, grids)]
    residual = np.inf
    for sweep in range(1, max_iter + 1):
        beta = [None] * n_frames
        beta[-1] = np.ones(grids[-1].n_points)
        for k in range(n_frames - 2, -1, -1):
            beta[k] = kmats[k] @ (us[k + 1] * beta[k + 1])
        alpha_k = np.ones(grids[0].n_points)
        max_tv = 0.0
        for k in range(n_frames):
            prod = alpha_k * beta[k]
            agg = np.zeros(grids[k].n_bins)
            mask = grids[k].bin_index >= 0
            np.add.at(agg, grids[k].bin_index[mask], prod[mask])
            if not np.isfinite(agg).all():
                raise ConvergenceError(
                    "numerical overflow in scaling mode; use mode='log' (the default)",
                    residual=np.inf,
                )
            pos = weights[k] > 0
            if np.any(pos & (agg <= 0.0)):
                raise ConvergenceError(
                    "numerical underflow in scaling mode; use mode='log' (the default)",
                    residual=np.inf,
                )
            with np.errstate(over="ignore"):
                u_bin = np.exp(phis[k] / eps)
            max_tv = max(max_tv, 0.5 * float(np.abs(u_bin * agg - weights[k]).sum()))
            new_u = np.where(pos, weights[k] / np.where(agg > 0, agg, 1.0), 0.0)
            with np.errstate(divide="ignore"):
                phis[k] = np.where(pos, eps * np.log(new_u), -np.inf)
            us[k] = lift_u(phis[k], grids[k])
            if k < n_frames - 1:
                alpha_k = kmats[k].T @ (alpha_k * us[k])
        residual = max_tv
        if residual <= stage_tol:
            return phis, sweep, residual
    return phis, max_iter, residual


def duality_gap(
    chain: CouplingChain,
    potentials: DualPotentials,
    outputs: Sequence[DiscreteMeasure],
    feas_tol: float = 1e-8,
) -> GapReport:
    """Primal and dual objectives with verified dual feasibility.

    Feasibility of the potentials (sum of potentials below sum of costs on
    every chain of grid points) is verified exactly by the max-plus
    recursion; the worst violating tuple is reported on failure.
    """
    lifted = potentials.lifted(chain.grids)
    violation, witness = _max_violation(lifted, chain.costs)
    scale = max(1.0, max(float(np.abs(phi[np.isfinite(phi)]).max()) if np.isfinite(phi).any() else 0.0 for phi in potentials.values))
    if violation > feas_tol * scale:
        raise DualInfeasibleError(
            f"dual potentials violate the cost bound by {violation:.3e} on grid tuple {witness}",
            violation=violation,
            witness=witness,
        )
    primal = float(sum(np.sum(pi * c) for pi, c in zip(chain.couplings, chain.costs)))
    dual = 0.0
    for phi, measure in zip(potentials.values, outputs):
        pos = measure.weights > 0
        dual += float(np.sum(phi[pos] * measure.weights[pos]))
    return GapReport(primal=primal, dual=dual, gap=primal - dual)


def _argmax_tiebreak(row: np.ndarray, cost_row: np.ndarray) -> int:
    peak = row.max()
    tol = 1e-12 * max(peak, 1e-300)
    candidates = np.nonzero(row >= peak - tol)[0]
    if candidates.size == 1:
        return int(candidates[0])
    # equal-weight edges: prefer the cheapest step, then lowest grid index
    return int(candidates[np.argmin(cost_row[candidates])])


def extract_trajectories(
    chain: CouplingChain,
    grids: Sequence[StateGrid] | None = None,
    *,
    integrality_threshold: float = 0.75,
    mass_tol: float = 1e-9,
    max_paths: int = 10000,
) -> TrajectoryEstimate:
    """Greedy max-weight path decomposition of a coupling chain.

    Requires the chain to be near-integral (most mass on one outgoing edge
    per occupied grid point); otherwise falls back to reporting the
    weighted flow edges unchanged.
    """
    grids = list(grids) if grids is not None else chain.grids
    kappa = chain.total_mass
    sharpness = min(
        float(pi.max(axis=1).sum()) / kappa if pi.size else 0.0 for pi in chain.couplings
    )
    if sharpness < integrality_threshold:
        edges = []
        for pi in chain.couplings:
            i, j = np.nonzero(pi > mass_tol * kappa)
            edges.append(np.column_stack([i, j, pi[i, j]]))
        return TrajectoryEstimate(mode="edges", edges=edges, sharpness=sharpness)

    remaining = [pi.copy() for pi in chain.couplings]
    start_mass = chain.state_marginals[0].copy()
    paths, masses, indices = [], [], []
    while start_mass.max() > mass_tol * kappa and len(paths) < max_paths:
        i = int(np.argmax(start_mass))
        mass = float(start_mass[i])
        idx = [i]
        for k, rem in enumerate(remaining):
            j = _argmax_tiebreak(rem[idx[-1]], chain.costs[k][idx[-1]])
            mass = min(mass, float(rem[idx[-1], j]))
            idx.append(j)
        if mass <= mass_tol * kappa:
            break
        start_mass[idx[0]] -= mass
        for k in range(len(remaining)):
            remaining[k][idx[k], idx[k + 1]] -= mass
        indices.append(np.asarray(idx, dtype=int))
        masses.append(mass)
        paths.append(np.stack([grids[k].points[idx[k]] for k in range(len(idx))]))
    return TrajectoryEstimate(
        mode="paths", paths=paths, masses=masses, indices=indices, sharpness=sharpness
    )


def brute_force_assignment(
    point_frames: Sequence[np.ndarray],
    kernels: Sequence[StepKernel],
    observation: np.ndarray | None = None,
    *,
    max_particles: int = 8,
    max_steps: int = 5,
    max_assignments: int = 20_000_000,
) -> BruteForceResult:
    """Globally optimal association by exhaustive permutation enumeration.

    Only intended as a small-scale oracle: the number of candidate
    associations is (N!)**T. When ``observation`` (the output matrix) is
    given, the frames are output points and the hidden state components of
    each candidate chain are chosen optimally by a quadratic solve; with
    ``observation=None`` the frames are full state points.
    """
    frames = [np.atleast_2d(np.asarray(f, dtype=float)) for f in point_frames]
    n_particles = frames[0].shape[0]
    n_steps = len(frames) - 1
    if any(f.shape[0] != n_particles for f in frames):
        raise ValidationError("all frames must contain the same number of points")
    if len(kernels) != n_steps:
        raise ValidationError("need one kernel per consecutive frame pair")
    if n_particles > max_particles or n_steps > max_steps:
        raise ValidationError(
            f"instance too large for enumeration: N={n_particles} (cap {max_particles}), "
            f"T={n_steps} (cap {max_steps})"
        )
    n_assignments = math.factorial(n_particles) ** n_steps
    if n_assignments > max_assignments:
        raise ValidationError(
            f"{n_assignments} candidate associations exceed the enumeration cap"
        )

    n = kernels[0].n_states
    if observation is None:
        if frames[0].shape[1] != n:
            raise ValidationError(
                f"state frames must have dimension {n}, got {frames[0].shape[1]}"
            )
        pair_costs = [
            step_cost_matrix(kern, frames[k], frames[k + 1])
            for k, kern in enumerate(kernels)
        ]

        def chain_cost(idx):
            return float(sum(pair_costs[k][idx[k], idx[k + 1]] for k in range(n_steps)))

        def chain_states(idx):
            return np.stack([frames[k][idx[k]] for k in range(n_steps + 1)])

    else:
        c = check_matrix(observation, "observation")
        if c.shape[1] != n:
            raise ValidationError(f"observation must have {n} columns")
        if frames[0].shape[1] != c.shape[0]:
            raise ValidationError(
                f"output frames must have dimension {c.shape[0]}, got {frames[0].shape[1]}"
            )
        form = output_form_from_kernels(kernels, c)
        cache: dict[tuple, float] = {}

        def chain_outputs(idx):
            return np.concatenate([frames[k][idx[k]] for k in range(n_steps + 1)])

        def chain_cost(idx):
            key = tuple(idx)
            if key not in cache:
                y = chain_outputs(idx)
                cache[key] = float(y @ form.matrix @ y)
            return cache[key]

        def chain_states(idx):
            y = chain_outputs(idx)
            return (form.state_lift @ y).reshape(n_steps + 1, n)

    import itertools

    best_cost = np.inf
    runner_up = np.inf
    best_assoc = None
    perms = list(itertools.permutations(range(n_particles)))
    for combo in itertools.product(perms, repeat=n_steps):
        total = 0.0
        for start in range(n_particles):
            idx = [start]
            for sigma in combo:
                idx.append(sigma[idx[-1]])
            total += chain_cost(idx)
        if total < best_cost:
            runner_up = best_cost
            best_cost = total
            best_assoc = combo
        elif total < runner_up:
            runner_up = total

    states = np.zeros((n_particles, n_steps + 1, n))
    for start in range(n_particles):
        idx = [start]
        for sigma in best_assoc:
            idx.append(sigma[idx[-1]])
        states[start] = chain_states(idx)
    return BruteForceResult(
        association=best_assoc,
        cost=float(best_cost),
        states=states,
        runner_up_cost=float(runner_up),
        n_assignments=n_assignments,
    )


class GluedChain:
    """Markov joint measure built from a consistent coupling chain.

    Transition kernels are the couplings conditioned on their left
    marginal; the glued joint has the chain's couplings as its
    consecutive pairwise marginals and supports exact ancestral sampling
    of full index tuples.
    """

    def __init__(self, chain: CouplingChain, tol: float = 1e-8):
        row_res, col_res = chain.marginal_residuals()
        residual = max(row_res, col_res)
        if residual > tol * max(1.0, chain.total_mass):
            raise ValidationError(
                f"chain marginals are inconsistent (residual {residual:.3e})"
            )
        self.chain = chain
        self.total_mass = chain.total_mass
        self._transitions = []
        for k, pi in enumerate(chain.couplings):
            rho = chain.state_marginals[k]
            trans = np.zeros_like(pi)
            pos = rho > 0
            trans[pos] = pi[pos] / rho[pos, None]
            self._transitions.append(trans)

    @property
    def n_times(self) -> int:
        return len(self.chain.state_marginals)

    def pairwise_marginal(self, k: int, l: int) -> np.ndarray:
        """Joint mass matrix of times ``k < l`` under the glued measure."""
        if not 0 <= k < l < self.n_times:
            raise ValidationError(f"need 0 <= k < l < {self.n_times}, got ({k}, {l})")
        out = self.chain.couplings[k]
        for j in range(k + 1, l):
            out = out @ self._transitions[j]
        return out

    def sample(self, n_samples: int, rng=None) -> np.ndarray:
        """Draw index tuples (n_samples, T+1) from the glued joint."""
        rng = np.random.default_rng(rng)
        rho0 = np.maximum(self.chain.state_marginals[0], 0.0)
        p0 = rho0 / rho0.sum()
        idx = np.empty((n_samples, self.n_times), dtype=int)
        idx[:, 0] = rng.choice(p0.size, size=n_samples, p=p0)
        for k, trans in enumerate(self._transitions):
            current = idx[:, k]
            nxt = np.empty(n_samples, dtype=int)
            for i in np.unique(current):
                sel = current == i
                row = np.maximum(trans[i], 0.0)
                total = row.sum()
                if total <= 0:
                    raise ValidationError(
                        f"no outgoing mass from grid point {i} at time {k}"
                    )
                nxt[sel] = rng.choice(row.size, size=int(sel.sum()), p=row / total)
            idx[:, k + 1] = nxt
        return idx


def glue_chain(chain: CouplingChain, tol: float = 1e-8) -> GluedChain:
    """Build the Markov gluing of a consistent coupling chain."""
    return GluedChain(chain, tol=tol)
