"""Ensemble tracking with Gaussian snapshots.

When every observed frame is summarized by an output mean and covariance,
the transport problem over state distributions restricts to Gaussians and
splits into two convex pieces: a quadratic program for the mean path and a
semidefinite program for the covariance plan. Both use the step cost
induced by the prior dynamics.

The covariance program comes in two equivalent shapes. The per-step form
optimizes state covariances and cross-covariances under one positive
semidefinite constraint per interval, so its per-iteration work grows
linearly with the number of frames. The joint form eliminates the state
variables and optimizes the full output-space joint covariance, one big
semidefinite block. Both are solved by ADMM with over-relaxation and an
adaptive penalty, followed by an alternating-projection polish that pins
the iterate to the constraint sets at machine precision.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dynamics import LinearSystem, StepKernel, bridge_from_kernel, make_kernel
from .linalg import symmetrize
from .validation import (
    ConvergenceError,
    SingularMatrixError,
    ValidationError,
    check_matrix,
    check_symmetric,
    check_times,
)

__all__ = [
    "GaussianSequence",
    "MeanSpline",
    "OutputCostForm",
    "StateCovariancePlan",
    "SplittingOptions",
    "mean_spline",
    "output_cost_matrix",
    "output_form_from_kernels",
    "covariance_sdp",
    "covariance_sdp_joint",
    "gaussian_flow",
]


@dataclass(frozen=True)
class GaussianSequence:
    """Mean and covariance at each time in a sequence."""

    times: np.ndarray  # (K,)
    means: np.ndarray  # (K, d)
    covariances: np.ndarray  # (K, d, d)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).ravel()
        means = np.atleast_2d(np.asarray(self.means, dtype=float))
        covs = np.asarray(self.covariances, dtype=float)
        if covs.ndim != 3:
            raise ValidationError("covariances must be a (K, d, d) stack")
        k, d = means.shape
        if times.size != k or covs.shape != (k, d, d):
            raise ValidationError(
                f"inconsistent sequence shapes: times {times.shape}, means {means.shape}, "
                f"covariances {covs.shape}"
            )
        if not (np.isfinite(means).all() and np.isfinite(covs).all()):
            raise ValidationError("sequence contains non-finite entries")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "covariances", covs)

    @property
    def n_times(self) -> int:
        return self.times.size

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def marginal(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        return self.means[i], self.covariances[i]


@dataclass(frozen=True)
class MeanSpline:
    """Minimum-energy state mean path hitting output means at the knots."""

    times: np.ndarray  # (K,)
    knots: np.ndarray  # (K, n)
    energy: float
    system: LinearSystem

    def __call__(self, t: float) -> np.ndarray:
        """State mean at time t, interpolated along the energy-optimal arc."""
        k, tau, dt = _locate(self.times, t)
        if dt == 0.0:
            return self.knots[k].copy()
        kern = make_kernel(self.system, dt)
        pair = bridge_from_kernel(self.system, kern, tau / dt)
        return pair.interpolate(self.knots[k], self.knots[k + 1])


@dataclass(frozen=True)
class OutputCostForm:
    """Quadratic chain cost reduced to stacked output vectors.

    ``matrix`` acts on the concatenated outputs (y_0, ..., y_T); the value
    y' matrix y is the minimum summed step cost over state chains that
    reproduce those outputs. ``state_lift`` maps the stacked outputs to the
    minimizing stacked state chain, and ``hessian`` is the chain cost form
    on stacked states.
    """

    matrix: np.ndarray  # ((T+1)m, (T+1)m)
    state_lift: np.ndarray  # ((T+1)n, (T+1)m)
    hessian: np.ndarray  # ((T+1)n, (T+1)n)
    n_states: int
    n_outputs: int


@dataclass
class StateCovariancePlan:
    """Covariance output of the semidefinite tracking step.

    ``blocks[k]`` is the joint covariance of the states at times k and
    k+1; it is positive semidefinite to machine precision and is what the
    flow interpolator consumes. ``covariances`` and ``cross`` are the
    consensus per-time and per-interval pieces extracted from the blocks.
    """

    times: np.ndarray
    covariances: np.ndarray  # (T+1, n, n)
    cross: np.ndarray  # (T, n, n)
    blocks: np.ndarray  # (T, 2n, 2n)
    objective: float
    iterations: int
    primal_residual: float
    dual_residual: float
    constraint_residual: float
    output_joint: np.ndarray | None = None

    def block(self, k: int) -> np.ndarray:
        return self.blocks[k]


@dataclass(frozen=True)
class SplittingOptions:
    """Operator-splitting controls for the covariance programs."""

    rho: float = 1.0
    over_relaxation: float = 1.6
    tol: float = 1e-7
    max_iter: int = 50_000
    adapt_every: int = 50
    polish: bool = True
    polish_tol: float = 1e-12
    polish_iters: int = 500
    regularize: float = 0.0
    strict: bool = True
    presolve: bool = True


def _locate(times: np.ndarray, t: float) -> tuple[int, float, float]:
    """Interval index, offset into it, and its length, for t in [t_0, t_K]."""
    if not times[0] <= t <= times[-1]:
        raise ValidationError(
            f"time {t} outside the tracked horizon [{times[0]}, {times[-1]}]"
        )
    k = int(np.searchsorted(times, t, side="right") - 1)
    k = min(max(k, 0), times.size - 2)
    return k, float(t - times[k]), float(times[k + 1] - times[k])


def _kernels_for(sys: LinearSystem, times: np.ndarray) -> list[StepKernel]:
    return [make_kernel(sys, dt) for dt in np.diff(times)]


def _chain_kkt(kernels: Sequence[StepKernel], c: np.ndarray, n: int):
    """Chain cost Hessian, output constraint matrix, and their KKT system."""
    m = c.shape[0]
    n_times = len(kernels) + 1
    h = np.zeros((n_times * n, n_times * n))
    for k, kern in enumerate(kernels):
        phi, q = kern.transition, kern.weight
        i0 = k * n
        i1 = (k + 1) * n
        h[i0:i1, i0:i1] += phi.T @ q @ phi
        h[i0:i1, i1:i1 + n] += -phi.T @ q
        h[i1:i1 + n, i0:i1] += -q @ phi
        h[i1:i1 + n, i1:i1 + n] += q
    a_eq = np.kron(np.eye(n_times), c)
    # scaling H leaves the primal solution unchanged and tames the
    # condition number for stiff step weights
    scale = max(1.0, float(np.abs(h).max()))
    dim = h.shape[0]
    kkt = np.zeros((dim + n_times * m, dim + n_times * m))
    kkt[:dim, :dim] = 2.0 * h / scale
    kkt[:dim, dim:] = a_eq.T
    kkt[dim:, :dim] = a_eq
    return h, a_eq, kkt


def _solve_kkt(kkt: np.ndarray, rhs: np.ndarray, n_states: int, n_times: int) -> np.ndarray:
    u, s, vh = np.linalg.svd(kkt)
    if s[-1] <= 1e-12 * s[0]:
        null = vh[s <= 1e-12 * s[0]]
        labels = []
        for vec in null:
            z = vec[: n_states * n_times].reshape(n_times, n_states)
            hits = np.argwhere(np.abs(z) > 0.1 * max(np.abs(z).max(), 1e-30))
            labels.extend(f"time {k}, component {i}" for k, i in hits)
        detail = "; ".join(sorted(set(labels))) or "degenerate multiplier directions"
        raise SingularMatrixError(
            "output constraints leave state directions undetermined: " + detail,
            condition=float(s[0] / max(s[-1], np.finfo(float).tiny)),
        )
    return vh.T @ ((u.T @ rhs).T / s).T


def mean_spline(sys: LinearSystem, times, output_means) -> MeanSpline:
    """Minimum-energy state mean chain matching the output means at each time.

    Solves the equality-constrained quadratic program whose cost is the
    summed step cost of the knot chain. Raises SingularMatrixError when the
    output constraints do not pin the chain down, naming the undetermined
    state directions.
    """
    times = check_times(times, "times", min_points=1)
    means = np.atleast_2d(np.asarray(output_means, dtype=float))
    n_times = times.size
    if means.shape != (n_times, sys.n_outputs):
        raise ValidationError(
            f"output_means must have shape {(n_times, sys.n_outputs)}, got {means.shape}"
        )
    kernels = _kernels_for(sys, times)
    h, _, kkt = _chain_kkt(kernels, sys.C, sys.n_states)
    dim = h.shape[0]
    rhs = np.concatenate([np.zeros(dim), means.ravel()])
    sol = _solve_kkt(kkt, rhs, sys.n_states, n_times)
    z = sol[:dim]
    energy = float(z @ h @ z)
    return MeanSpline(
        times=times, knots=z.reshape(n_times, sys.n_states), energy=energy, system=sys
    )


def output_form_from_kernels(kernels: Sequence[StepKernel], c: np.ndarray) -> OutputCostForm:
    """Reduce the chain cost to the output sequence via the optimal state lift."""
    if len(kernels) == 0:
        raise ValidationError("need at least one step kernel")
    c = check_matrix(c, "c")
    n = kernels[0].n_states
    if c.shape[1] != n:
        raise ValidationError(f"c must have {n} columns, got {c.shape[1]}")
    m = c.shape[0]
    n_times = len(kernels) + 1
    h, _, kkt = _chain_kkt(kernels, c, n)
    dim = h.shape[0]
    rhs = np.zeros((kkt.shape[0], n_times * m))
    rhs[dim:] = np.eye(n_times * m)
    sol = _solve_kkt(kkt, rhs, n, n_times)
    lift = sol[:dim]
    matrix = symmetrize(lift.T @ h @ lift)
    return OutputCostForm(
        matrix=matrix, state_lift=lift, hessian=h, n_states=n, n_outputs=m
    )


def output_cost_matrix(sys: LinearSystem, times) -> OutputCostForm:
    """Output-space chain cost form for a system sampled at the given times."""
    times = check_times(times, "times")
    return output_form_from_kernels(_kernels_for(sys, times), sys.C)


def _adapt_penalty(rho: float, u: np.ndarray, r_rel: float, s_rel: float):
    """Rebalance the penalty toward equal relative residuals.

    The square-root rule moves gently and only when the imbalance is
    clear; the scaled dual variable is rescaled to keep the underlying
    multiplier unchanged.
    """
    factor = np.sqrt(max(r_rel, 1e-16) / max(s_rel, 1e-16))
    factor = min(max(factor, 0.2), 5.0)
    if abs(np.log(factor)) > np.log(1.3):
        new_rho = min(max(rho * factor, 1e-6), 1e8)
        u = u * (rho / new_rho)
        return new_rho, u
    return rho, u


def _psd_project_stack(stack: np.ndarray) -> np.ndarray:
    """Batched projection onto the positive semidefinite cone."""
    sym = 0.5 * (stack + np.swapaxes(stack, -1, -2))
    w, v = np.linalg.eigh(sym)
    w = np.clip(w, 0.0, None)
    out = (v * w[..., None, :]) @ np.swapaxes(v, -1, -2)
    return 0.5 * (out + np.swapaxes(out, -1, -2))


def _validate_covariances(sys: LinearSystem, times, covariances, options):
    times = check_times(times, "times")
    covs = np.asarray(covariances, dtype=float)
    m = sys.n_outputs
    if covs.ndim != 3 or covs.shape != (times.size, m, m):
        raise ValidationError(
            f"covariances must have shape {(times.size, m, m)}, got {covs.shape}"
        )
    covs = np.stack([check_symmetric(s, f"covariances[{k}]") for k, s in enumerate(covs)])
    eigs = np.linalg.eigvalsh(covs)
    scale = max(1.0, float(np.abs(covs).max()))
    if eigs.min() < -1e-10 * scale:
        worst = int(np.argmin(eigs.min(axis=1)))
        raise ValidationError(
            f"covariances[{worst}] is not positive semidefinite "
            f"(min eigenvalue {eigs[worst].min():.3e})"
        )
    covs = _psd_project_stack(covs)
    if options.regularize > 0:
        covs = covs + options.regularize * np.eye(m)
    return times, covs


def _free_flow_plan(
    sys: LinearSystem,
    kernels: Sequence[StepKernel],
    times: np.ndarray,
    covs: np.ndarray,
    con: "_Consensus",
) -> StateCovariancePlan | None:
    """Exact zero-cost plan when an uncontrolled flow interpolates the data.

    Zero total step cost forces every step to be deterministic, so the
    whole plan is a pushforward of one initial covariance. Whether a
    positive semidefinite initial covariance reproduces all observed
    output covariances is a small feasibility problem in n(n+1)/2
    unknowns, solved here by Douglas-Rachford splitting. This matters
    because such instances put the main splitting iteration on a
    degenerate face of the cone where it converges only sublinearly; the
    closed form is exact and cheap. Returns None when no interpolating
    flow is certified.
    """
    n = sys.n_states
    scale = max(1.0, float(np.abs(covs).max()))

    acc = np.eye(n)
    maps = []
    for k in range(len(times)):
        maps.append(sys.C @ acc)
        if k < len(kernels):
            acc = kernels[k].transition @ acc

    rows, targets = [], []
    m = sys.n_outputs
    for ck, pinned in zip(maps, covs):
        for i in range(m):
            for j in range(i, m):
                sym = 0.5 * (np.outer(ck[i], ck[j]) + np.outer(ck[j], ck[i]))
                rows.append(sym.ravel())
                targets.append(pinned[i, j])
    a = np.asarray(rows)
    b = np.asarray(targets)
    pinv = np.linalg.pinv(a, rcond=1e-12)

    def project_affine(x):
        vec = x.ravel()
        return (vec - pinv @ (a @ vec - b)).reshape(n, n)

    # Douglas-Rachford between the cone and the affine set. Plain
    # alternating projections crawl here because the sets meet the cone
    # boundary almost tangentially; the reflected iteration does not.
    tol = 1e-11 * scale
    iso = np.array([float(r.reshape(n, n).trace()) for r in a.reshape(-1, n, n)])
    denom = float(iso @ iso)
    beta = max(float(iso @ b) / denom, 0.0) if denom > 0 else 0.0
    x = beta * np.eye(n)
    sigma0 = None
    defect = np.inf
    for it in range(1, 6001):
        y = _psd_project_stack(x[None])[0]
        x = x + project_affine(2.0 * y - x) - y
        if it % 10 == 0:
            shadow = _psd_project_stack(x[None])[0]
            defect = float(np.abs(a @ shadow.ravel() - b).max())
            if defect <= tol:
                sigma0 = shadow
                break
    if sigma0 is None:
        return None
    flows = [sigma0]
    for kernel in kernels:
        flows.append(symmetrize(kernel.transition @ flows[-1] @ kernel.transition.T))
    sig = np.stack(flows)
    cross = np.stack([
        sig[k] @ kernels[k].transition.T for k in range(len(kernels))
    ])
    blocks = _psd_project_stack(con.assemble(sig, cross))
    residual = _constraint_residual(con, blocks)
    if residual > 1e-9 * scale:
        return None
    sig, cross = con.consensus(blocks)
    return StateCovariancePlan(
        times=times,
        covariances=sig,
        cross=cross,
        blocks=blocks,
        objective=con.objective(sig, cross),
        iterations=it,
        primal_residual=defect,
        dual_residual=0.0,
        constraint_residual=residual,
    )


class _Consensus:
    """Shared affine structure of the per-step covariance program."""

    def __init__(self, sys: LinearSystem, kernels: Sequence[StepKernel], covs: np.ndarray):
        self.n = sys.n_states
        self.m = sys.n_outputs
        self.T = len(kernels)
        self.c = sys.C
        self.covs = covs
        gram = np.linalg.inv(self.c @ self.c.T)
        self.ct_p = self.c.T @ gram  # (n, m)
        self.q = np.stack([k.weight for k in kernels])
        self.phi = np.stack([k.transition for k in kernels])
        self.qphi = np.einsum("kij,kjl->kil", self.q, self.phi)
        self.phitqphi = np.einsum("kji,kjl->kil", self.phi, self.qphi)
        # linear coefficient on each per-time covariance
        coef = np.zeros((self.T + 1, self.n, self.n))
        coef[:-1] += self.phitqphi
        coef[1:] += self.q
        self.coef = coef
        counts = np.full(self.T + 1, 2.0)
        counts[0] = 1.0
        counts[-1] = 1.0
        self.counts = counts

    def project_output(self, sig: np.ndarray) -> np.ndarray:
        """Closest symmetric stack with C sig C' equal to the observed covariances."""
        defect = np.einsum("ij,kjl,ml->kim", self.c, sig, self.c) - self.covs
        return sig - np.einsum("ij,kjl,ml->kim", self.ct_p, defect, self.ct_p)

    def consensus(self, blocks: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Average the shared per-time pieces out of stacked interval blocks."""
        n, T = self.n, self.T
        sig_sum = np.zeros((T + 1, n, n))
        sig_sum[:-1] += blocks[:, :n, :n]
        sig_sum[1:] += blocks[:, n:, n:]
        sig = sig_sum / self.counts[:, None, None]
        cross = 0.5 * (blocks[:, :n, n:] + np.swapaxes(blocks[:, n:, :n], -1, -2))
        return sig, cross

    def assemble(self, sig: np.ndarray, cross: np.ndarray) -> np.ndarray:
        n, T = self.n, self.T
        blocks = np.empty((T, 2 * n, 2 * n))
        blocks[:, :n, :n] = sig[:-1]
        blocks[:, n:, n:] = sig[1:]
        blocks[:, :n, n:] = cross
        blocks[:, n:, :n] = np.swapaxes(cross, -1, -2)
        return blocks

    def objective(self, sig: np.ndarray, cross: np.ndarray) -> float:
        cost = np.einsum("kij,kji->", self.q, sig[1:])
        cost += np.einsum("kij,kji->", self.phitqphi, sig[:-1])
        cost -= 2.0 * np.einsum("kij,kji->", self.qphi, cross)
        return float(cost)


def covariance_sdp(
    sys: LinearSystem,
    times,
    covariances,
    options: SplittingOptions | None = None,
) -> StateCovariancePlan:
    """Minimum-cost state covariance plan matching output covariances.

    Solves the per-step semidefinite program: choose per-time state
    covariances and per-interval cross-covariances minimizing the expected
    step cost, subject to one joint positive semidefinite block per
    interval and the observation constraint at every time. Work per
    iteration grows linearly with the number of frames.
    """
    options = options or SplittingOptions()
    times, covs = _validate_covariances(sys, times, covariances, options)
    kernels = _kernels_for(sys, times)
    con = _Consensus(sys, kernels, covs)
    if options.presolve:
        plan = _free_flow_plan(sys, kernels, times, covs, con)
        if plan is not None:
            return plan
    n, T = con.n, con.T
    rho = float(options.rho)
    alpha = float(options.over_relaxation)

    # start from the output-lifted covariances with zero cross terms
    sig = con.project_output(np.stack([np.eye(n)] * (T + 1)))
    cross = np.zeros((T, n, n))
    z = _psd_project_stack(con.assemble(sig, cross))
    u = np.zeros_like(z)

    iterations = options.max_iter
    r_norm = s_norm = np.inf
    converged = False
    for it in range(1, options.max_iter + 1):
        w = z - u
        sig_raw, _ = con.consensus(w)
        sig = con.project_output(sig_raw - con.coef / (rho * con.counts[:, None, None]))
        cross = 0.5 * (w[:, :n, n:] + np.swapaxes(w[:, n:, :n], -1, -2))
        cross += np.swapaxes(con.qphi, -1, -2) / rho
        blocks = con.assemble(sig, cross)

        z_old = z
        relaxed = alpha * blocks + (1.0 - alpha) * z_old
        z = _psd_project_stack(relaxed + u)
        u = u + relaxed - z

        r_norm = float(np.linalg.norm(blocks - z))
        s_norm = rho * float(np.linalg.norm(z - z_old))
        r_rel = r_norm / max(1.0, float(np.linalg.norm(blocks)), float(np.linalg.norm(z)))
        s_rel = s_norm / max(1.0, rho * float(np.linalg.norm(u)))
        if r_rel <= options.tol and s_rel <= options.tol:
            iterations = it
            converged = True
            break
        if options.adapt_every and it % options.adapt_every == 0:
            rho, u = _adapt_penalty(rho, u, r_rel, s_rel)
    if not converged and options.strict:
        raise ConvergenceError(
            f"covariance splitting did not converge in {options.max_iter} iterations "
            f"(primal residual {r_norm:.3e}, dual residual {s_norm:.3e})",
            residual=max(r_norm, s_norm),
        )

    if options.polish:
        z = _polish(con, z, options)
    sig, cross = con.consensus(z)
    sig = con.project_output(sig)
    constraint_res = _constraint_residual(con, z)
    return StateCovariancePlan(
        times=times,
        covariances=sig,
        cross=cross,
        blocks=z,
        objective=con.objective(sig, cross),
        iterations=iterations,
        primal_residual=r_norm,
        dual_residual=s_norm,
        constraint_residual=constraint_res,
    )


def _polish(con: _Consensus, z: np.ndarray, options: SplittingOptions) -> np.ndarray:
    """Alternate affine and cone projections, ending on the cone."""
    scale = max(1.0, float(np.abs(z).max()))
    for _ in range(options.polish_iters):
        sig, cross = con.consensus(z)
        blocks = con.assemble(con.project_output(sig), cross)
        res = float(np.abs(blocks - z).max())
        z = _psd_project_stack(blocks)
        if res <= options.polish_tol * scale:
            break
    return z


def _constraint_residual(con: _Consensus, blocks: np.ndarray) -> float:
    n = con.n
    diag = np.concatenate([blocks[:, :n, :n], blocks[-1:, n:, n:]])
    defect = np.einsum("ij,kjl,ml->kim", con.c, diag, con.c) - con.covs
    return float(np.abs(defect).max())


def covariance_sdp_joint(
    sys: LinearSystem,
    times,
    covariances,
    options: SplittingOptions | None = None,
) -> StateCovariancePlan:
    """Covariance plan via the stacked output-space program.

    Eliminates the state chain analytically and optimizes the joint
    covariance of all outputs at once: one positive semidefinite block of
    side (T+1) m whose diagonal blocks are pinned to the observations.
    Equivalent to :func:`covariance_sdp` but with cubic per-iteration cost
    in the number of frames.
    """
    options = options or SplittingOptions()
    times, covs = _validate_covariances(sys, times, covariances, options)
    kernels = _kernels_for(sys, times)
    form = output_form_from_kernels(kernels, sys.C)
    m = sys.n_outputs
    n = sys.n_states
    n_times = times.size
    dim = n_times * m
    r_mat = form.matrix

    def set_diag(x):
        x = symmetrize(x)
        for k in range(n_times):
            x[k * m:(k + 1) * m, k * m:(k + 1) * m] = covs[k]
        return x

    rho = float(options.rho)
    alpha = float(options.over_relaxation)
    z = set_diag(np.zeros((dim, dim)))
    z = _psd_project_stack(z)
    u = np.zeros_like(z)
    iterations = options.max_iter
    r_norm = s_norm = np.inf
    converged = False
    for it in range(1, options.max_iter + 1):
        x = set_diag(z - u - r_mat / rho)
        z_old = z
        relaxed = alpha * x + (1.0 - alpha) * z_old
        z = _psd_project_stack(relaxed + u)
        u = u + relaxed - z
        r_norm = float(np.linalg.norm(x - z))
        s_norm = rho * float(np.linalg.norm(z - z_old))
        r_rel = r_norm / max(1.0, float(np.linalg.norm(x)), float(np.linalg.norm(z)))
        s_rel = s_norm / max(1.0, rho * float(np.linalg.norm(u)))
        if r_rel <= options.tol and s_rel <= options.tol:
            iterations = it
            converged = True
            break
        if options.adapt_every and it % options.adapt_every == 0:
            rho, u = _adapt_penalty(rho, u, r_rel, s_rel)
    if not converged and options.strict:
        raise ConvergenceError(
            f"joint covariance splitting did not converge in {options.max_iter} iterations "
            f"(primal residual {r_norm:.3e}, dual residual {s_norm:.3e})",
            residual=max(r_norm, s_norm),
        )

    if options.polish:
        scale = max(1.0, float(np.abs(z).max()))
        for _ in range(options.polish_iters):
            pinned = set_diag(z.copy())
            res = float(np.abs(pinned - z).max())
            z = _psd_project_stack(pinned)
            if res <= options.polish_tol * scale:
                break

    state_joint = form.state_lift @ z @ form.state_lift.T
    sig = np.stack(
        [state_joint[k * n:(k + 1) * n, k * n:(k + 1) * n] for k in range(n_times)]
    )
    cross = np.stack(
        [state_joint[k * n:(k + 1) * n, (k + 1) * n:(k + 2) * n] for k in range(n_times - 1)]
    )
    blocks = np.stack(
        [state_joint[k * n:(k + 2) * n, k * n:(k + 2) * n] for k in range(n_times - 1)]
    )
    con = _Consensus(sys, kernels, covs)
    return StateCovariancePlan(
        times=times,
        covariances=sig,
        cross=cross,
        blocks=blocks,
        objective=float(np.sum(r_mat * z)),
        iterations=iterations,
        primal_residual=r_norm,
        dual_residual=s_norm,
        constraint_residual=_constraint_residual(con, blocks),
        output_joint=z,
    )


def gaussian_flow(
    sys: LinearSystem,
    spline: MeanSpline,
    plan: StateCovariancePlan,
    t_eval,
) -> GaussianSequence:
    """State mean and covariance along the optimal interpolating flow.

    Between consecutive knots the flow pushes the joint plan block through
    the minimum-energy bridge, so each interior covariance is a congruence
    of a positive semidefinite block and the knots are reproduced exactly.
    """
    times = np.asarray(spline.times, dtype=float)
    if plan.times.shape != times.shape or np.abs(plan.times - times).max() > 1e-12:
        raise ValidationError("spline and plan must share the same knot times")
    t_eval = np.asarray(t_eval, dtype=float).ravel()
    n = sys.n_states
    means = np.empty((t_eval.size, n))
    covariances = np.empty((t_eval.size, n, n))
    kernel_cache: dict[int, StepKernel] = {}
    for idx, t in enumerate(t_eval):
        k, tau, dt = _locate(times, t)
        if k not in kernel_cache:
            kernel_cache[k] = make_kernel(sys, dt)
        pair = bridge_from_kernel(sys, kernel_cache[k], tau / dt)
        g, h = pair.from_start, pair.from_end
        means[idx] = g @ spline.knots[k] + h @ spline.knots[k + 1]
        gh = np.hstack([g, h])
        covariances[idx] = symmetrize(gh @ plan.blocks[k] @ gh.T)
    return GaussianSequence(times=t_eval, means=means, covariances=covariances)
