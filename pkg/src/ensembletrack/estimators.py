"""Estimator-style front ends for the two tracking pipelines.

Both classes follow the scikit-learn protocol: constructor arguments are
stored verbatim as hyperparameters, ``fit`` performs the optimization and
exposes results through trailing-underscore attributes, and ``predict``
interpolates the fitted plan at new times.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .discrete import (
    DiscreteMeasure,
    GridConfig,
    build_state_grids,
    extract_trajectories,
    solve_chain,
)
from .dynamics import LinearSystem, bridge_from_kernel, make_kernel
from .gaussian import (
    GaussianSequence,
    SplittingOptions,
    covariance_sdp,
    covariance_sdp_joint,
    gaussian_flow,
    mean_spline,
)
from .validation import ValidationError, check_times

__all__ = ["DiscreteEnsembleTracker", "GaussianEnsembleTracker"]


def _as_measures(frames) -> list[DiscreteMeasure]:
    out = []
    for frame in frames:
        if isinstance(frame, DiscreteMeasure):
            out.append(frame)
        else:
            out.append(DiscreteMeasure.from_points(np.asarray(frame, dtype=float)))
    return out


class DiscreteEnsembleTracker(BaseEstimator):
    """Track unordered point-cloud snapshots of an ensemble.

    Fitting solves the chain transport problem over lifted state grids
    and decomposes the result into weighted trajectories; prediction
    interpolates those trajectories along minimum-energy bridges.

    Args:
        system: prior dynamics and observation matrix.
        epsilon: final entropic regularization weight.
        tol: total-variation tolerance on the pushforward constraints.
        anneal_start: initial entropic weight of the annealing schedule.
        anneal_factor: per-stage geometric decay of the weight.
        max_iter: sweep budget for the final annealing stage.
        mode: "log" for stable log-domain updates, "scaling" for the
            faster plain-domain variant.
        grid_bounds: (low, high) range per unobserved state direction.
        grid_points: grid resolution per unobserved state direction.
        complement_basis: explicit basis of the unobserved subspace when
            the observation matrix is not a coordinate selection.
        integrality_threshold: minimum sharpness for path extraction.
    """

    def __init__(
        self,
        system,
        epsilon=1e-3,
        tol=1e-8,
        anneal_start=1.0,
        anneal_factor=0.5,
        max_iter=5000,
        mode="log",
        grid_bounds=(-7.0, 7.0),
        grid_points=150,
        complement_basis=None,
        integrality_threshold=0.75,
    ):
        self.system = system
        self.epsilon = epsilon
        self.tol = tol
        self.anneal_start = anneal_start
        self.anneal_factor = anneal_factor
        self.max_iter = max_iter
        self.mode = mode
        self.grid_bounds = grid_bounds
        self.grid_points = grid_points
        self.complement_basis = complement_basis
        self.integrality_threshold = integrality_threshold

    def fit(self, X, times):
        """Solve the transport problem for output frames X at the given times."""
        if not isinstance(self.system, LinearSystem):
            raise ValidationError("system must be a LinearSystem")
        times = check_times(times, "times")
        measures = _as_measures(X)
        if len(measures) != times.size:
            raise ValidationError(
                f"got {len(measures)} frames for {times.size} times"
            )
        config = GridConfig(
            bounds=tuple(self.grid_bounds),
            points_per_dim=int(self.grid_points),
            complement_basis=self.complement_basis,
        )
        grids = build_state_grids(measures, self.system, config)
        kernels = [make_kernel(self.system, dt) for dt in np.diff(times)]
        solution = solve_chain(
            kernels,
            measures,
            grids,
            epsilon=self.epsilon,
            tol=self.tol,
            anneal_start=self.anneal_start,
            anneal_factor=self.anneal_factor,
            max_iter=self.max_iter,
            mode=self.mode,
        )
        self.times_ = times
        self.kernels_ = kernels
        self.grids_ = grids
        self.solution_ = solution
        self.chain_ = solution.chain
        self.potentials_ = solution.potentials
        self.objective_ = solution.objective
        self.dual_objective_ = solution.dual_objective
        self.gap_ = solution.gap
        self.residual_ = solution.residual
        self.trajectories_ = extract_trajectories(
            solution.chain, integrality_threshold=self.integrality_threshold
        )
        return self

    def predict(self, t_eval):
        """Interpolated states of each recovered trajectory, (paths, times, n)."""
        check_is_fitted(self, "solution_")
        if self.trajectories_.mode != "paths":
            raise ValidationError(
                "the fitted plan is too diffuse for path extraction; refit with a "
                "smaller epsilon"
            )
        t_eval = np.asarray(t_eval, dtype=float).ravel()
        times = self.times_
        n = self.system.n_states
        paths = self.trajectories_.paths
        out = np.empty((len(paths), t_eval.size, n))
        for j, t in enumerate(t_eval):
            if not times[0] <= t <= times[-1]:
                raise ValidationError(
                    f"time {t} outside the tracked horizon [{times[0]}, {times[-1]}]"
                )
            k = min(max(int(np.searchsorted(times, t, side="right") - 1), 0), times.size - 2)
            dt = times[k + 1] - times[k]
            pair = bridge_from_kernel(self.system, self.kernels_[k], (t - times[k]) / dt)
            for i, path in enumerate(paths):
                out[i, j] = pair.interpolate(path[k], path[k + 1])
        return out


class GaussianEnsembleTracker(BaseEstimator):
    """Track Gaussian output snapshots of an ensemble.

    Fitting solves the mean quadratic program and the covariance
    semidefinite program; prediction evaluates the optimal Gaussian flow.

    Args:
        system: prior dynamics and observation matrix.
        formulation: "per-step" for the interval-block program (linear
            per-iteration cost in the number of frames) or "joint" for
            the stacked output-space program.
        rho: initial splitting penalty.
        over_relaxation: ADMM over-relaxation factor.
        tol: relative residual tolerance.
        max_iter: iteration budget.
        polish: run the alternating-projection cleanup after convergence.
        regularize: optional diagonal loading added to each observed
            covariance.
        strict: raise on non-convergence instead of returning the last
            iterate.
    """

    def __init__(
        self,
        system,
        formulation="per-step",
        rho=1.0,
        over_relaxation=1.6,
        tol=1e-7,
        max_iter=50_000,
        polish=True,
        regularize=0.0,
        strict=True,
    ):
        self.system = system
        self.formulation = formulation
        self.rho = rho
        self.over_relaxation = over_relaxation
        self.tol = tol
        self.max_iter = max_iter
        self.polish = polish
        self.regularize = regularize
        self.strict = strict

    def _options(self) -> SplittingOptions:
        return SplittingOptions(
            rho=self.rho,
            over_relaxation=self.over_relaxation,
            tol=self.tol,
            max_iter=self.max_iter,
            polish=self.polish,
            regularize=self.regularize,
            strict=self.strict,
        )

    def fit(self, X, times=None):
        """Fit to a GaussianSequence or a (means, covariances) pair."""
        if not isinstance(self.system, LinearSystem):
            raise ValidationError("system must be a LinearSystem")
        if isinstance(X, GaussianSequence):
            seq = X
            if times is not None:
                seq = GaussianSequence(times=times, means=X.means, covariances=X.covariances)
        else:
            if times is None:
                raise ValidationError("times are required when X is not a GaussianSequence")
            means, covariances = X
            seq = GaussianSequence(times=times, means=means, covariances=covariances)
        if self.formulation not in ("per-step", "joint"):
            raise ValidationError(f"unknown formulation {self.formulation!r}")
        solver = covariance_sdp if self.formulation == "per-step" else covariance_sdp_joint
        spline = mean_spline(self.system, seq.times, seq.means)
        plan = solver(self.system, seq.times, seq.covariances, self._options())
        self.times_ = spline.times
        self.spline_ = spline
        self.plan_ = plan
        self.mean_objective_ = spline.energy
        self.covariance_objective_ = plan.objective
        self.objective_ = spline.energy + plan.objective
        return self

    def predict(self, t_eval) -> GaussianSequence:
        """State mean and covariance along the fitted flow at t_eval."""
        check_is_fitted(self, "plan_")
        return gaussian_flow(self.system, self.spline_, self.plan_, t_eval)
