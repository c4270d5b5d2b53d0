"""Synthetic ensembles for exercising the trackers.

Particles evolve independently under the prior dynamics, optionally
perturbed by white noise entering through the input channels. Snapshots
record only the outputs, unordered, which is exactly the information the
trackers consume.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import ceil

import numpy as np

from .discrete import DiscreteMeasure
from .dynamics import LinearSystem
from .linalg import matrix_exp
from .validation import ValidationError, check_times

__all__ = ["EnsembleSimulation", "simulate_ensemble"]


@dataclass(frozen=True)
class EnsembleSimulation:
    """States and outputs of a simulated ensemble at the snapshot times."""

    times: np.ndarray  # (K,)
    states: np.ndarray  # (N, K, n)
    outputs: np.ndarray  # (N, K, m)
    sigma: float

    @property
    def n_particles(self) -> int:
        return self.states.shape[0]

    def frames(self) -> list[DiscreteMeasure]:
        """Unordered unit-mass output snapshots, one per time."""
        return [
            DiscreteMeasure.from_points(self.outputs[:, k, :])
            for k in range(self.times.size)
        ]


def simulate_ensemble(
    sys: LinearSystem,
    initial_states,
    times,
    sigma: float = 0.0,
    rng=None,
    substep: float = 1e-3,
) -> EnsembleSimulation:
    """Propagate an ensemble and record output snapshots.

    With ``sigma`` zero the flow is the exact matrix exponential. With
    noise the states follow an Euler-Maruyama discretization of the
    dynamics driven by ``sigma`` times white noise through the input
    matrix, using steps no longer than ``substep``.

    Args:
        sys: prior dynamics and observation matrix.
        initial_states: (N, n) starting states.
        times: strictly increasing snapshot times; the first one is the
            time of the initial states.
        sigma: diffusion intensity on the input channels.
        rng: seed or generator for the noise (ignored when sigma is 0).
        substep: integration step bound for the noisy case.

    Returns:
        An :class:`EnsembleSimulation` with per-particle states and outputs.
    """
    times = check_times(times, "times")
    x0 = np.atleast_2d(np.asarray(initial_states, dtype=float))
    if x0.shape[1] != sys.n_states:
        raise ValidationError(
            f"initial_states must have {sys.n_states} columns, got {x0.shape[1]}"
        )
    if not np.isfinite(x0).all():
        raise ValidationError("initial_states contains non-finite entries")
    if sigma < 0:
        raise ValidationError("sigma must be nonnegative")
    if substep <= 0:
        raise ValidationError("substep must be positive")

    n_particles = x0.shape[0]
    n_times = times.size
    states = np.empty((n_particles, n_times, sys.n_states))
    states[:, 0, :] = x0

    if sigma == 0.0:
        for k, dt in enumerate(np.diff(times)):
            phi = matrix_exp(sys.A, dt)
            states[:, k + 1, :] = states[:, k, :] @ phi.T
    else:
        gen = np.random.default_rng(rng)
        a_t = sys.A.T
        b_t = sys.B.T
        for k, dt in enumerate(np.diff(times)):
            n_sub = max(1, ceil(dt / substep))
            h = dt / n_sub
            x = states[:, k, :].copy()
            noise = gen.normal(size=(n_sub, n_particles, sys.n_inputs))
            root_h = np.sqrt(h)
            for j in range(n_sub):
                x = x + h * (x @ a_t) + sigma * root_h * (noise[j] @ b_t)
            states[:, k + 1, :] = x

    outputs = states @ sys.C.T
    return EnsembleSimulation(times=times, states=states, outputs=outputs, sigma=float(sigma))
