"""Command line interface.

Subcommands:

    track-discrete   solve an unordered-snapshot tracking problem on a grid
    track-gaussian   solve the Gaussian moment-interpolation problem
    simulate         integrate an ensemble forward and emit snapshot frames
    gramian          print per-interval transition matrices and step weights
    validate         check a problem file and exit

Option precedence is command line flag, then the problem file's "solver"
block, then defaults.json inside $ENSEMBLETRACK_CONFIG_DIR, then built-in
defaults. Exit codes: 0 success, 2 invalid input, 3 solver failed to
converge, 4 singular or ill-posed model, 5 dual certificate failure,
1 anything unexpected.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import problem_io
from .discrete import (
    GridConfig,
    build_state_grids,
    extract_trajectories,
    solve_chain,
)
from .dynamics import make_kernel
from .gaussian import (
    GaussianSequence,
    SplittingOptions,
    covariance_sdp,
    covariance_sdp_joint,
    gaussian_flow,
    mean_spline,
)
from .problem_io import FORMAT_VERSION, ProblemSpec, TrackingResult
from .simulate import simulate_ensemble
from .validation import (
    ConvergenceError,
    DualInfeasibleError,
    EnsembleTrackError,
    SingularMatrixError,
    ValidationError,
)

_EXIT_CODES = (
    (ValidationError, 2),
    (ConvergenceError, 3),
    (SingularMatrixError, 4),
    (DualInfeasibleError, 5),
)


def _exit_code(exc: Exception) -> int:
    for cls, code in _EXIT_CODES:
        if isinstance(exc, cls):
            return code
    return 1


def _load_config() -> dict:
    config_dir = os.environ.get("ENSEMBLETRACK_CONFIG_DIR")
    if not config_dir:
        return {}
    path = Path(config_dir) / "defaults.json"
    if not path.exists():
        return {}
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ValidationError(f"{path}: top level must be a JSON object")
    return doc


def _resolve(name, flag_value, spec: ProblemSpec, config: dict, builtin):
    """First set value wins: flag, problem solver block, config file, builtin."""
    if flag_value is not None:
        return flag_value
    if name in spec.solver:
        return spec.solver[name]
    if name in config:
        return config[name]
    return builtin


def _parse_schedule(text) -> tuple[float, float, float]:
    if isinstance(text, (list, tuple)) and len(text) == 3:
        return float(text[0]), float(text[1]), float(text[2])
    parts = str(text).split(":")
    if len(parts) != 3:
        raise ValidationError(
            f"--epsilon-schedule expects start:factor:final, got {text!r}"
        )
    try:
        start, factor, final = (float(p) for p in parts)
    except ValueError:
        raise ValidationError(
            f"--epsilon-schedule expects three numbers, got {text!r}"
        ) from None
    if not (start > 0 and 0 < factor < 1 and 0 < final <= start):
        raise ValidationError(
            "--epsilon-schedule needs start > 0, factor in (0, 1), 0 < final <= start"
        )
    return start, factor, final


def _parse_bounds(text) -> tuple[float, float]:
    if isinstance(text, (list, tuple)) and len(text) == 2:
        return float(text[0]), float(text[1])
    parts = str(text).split(":")
    if len(parts) != 2:
        raise ValidationError(f"--grid-bounds expects lo:hi, got {text!r}")
    try:
        lo, hi = float(parts[0]), float(parts[1])
    except ValueError:
        raise ValidationError(f"--grid-bounds expects two numbers, got {text!r}") from None
    if not lo < hi:
        raise ValidationError(f"--grid-bounds needs lo < hi, got {text!r}")
    return lo, hi


def _write_error(output, kind: str, exc: Exception) -> None:
    if output is None:
        return
    block = {"type": type(exc).__name__, "message": str(exc)}
    for attr in ("residual", "condition", "violation"):
        value = getattr(exc, attr, None)
        if value is not None:
            block[attr] = float(value)
    doc = {"format_version": FORMAT_VERSION, "kind": kind, "error": block}
    Path(output).write_text(json.dumps(doc, indent=2) + "\n")


def _emit(result: TrackingResult, args) -> None:
    if args.output:
        problem_io.save_result(result, args.output)
    else:
        json.dump(problem_io.result_to_dict(result), sys.stdout, indent=2)
        sys.stdout.write("\n")
    if getattr(args, "plot", None):
        rows = problem_io.emit_plot_data(result, args.plot)
        print(f"wrote {rows} plot rows to {args.plot}", file=sys.stderr)


def _kernels_for_times(system, times):
    return [make_kernel(system, times[k + 1] - times[k]) for k in range(len(times) - 1)]


def cmd_track_discrete(args) -> int:
    spec = problem_io.load_problem(args.input)
    if spec.kind != "discrete":
        raise ValidationError(
            f"track-discrete needs a problem of kind 'discrete', got {spec.kind!r}"
        )
    config = _load_config()
    schedule = _resolve("epsilon_schedule", args.epsilon_schedule, spec, config, None)
    if schedule is not None:
        anneal_start, anneal_factor, epsilon = _parse_schedule(schedule)
    else:
        epsilon = float(_resolve("epsilon", None, spec, config, 1e-3))
        anneal_start = float(_resolve("anneal_start", None, spec, config, 1.0))
        anneal_factor = float(_resolve("anneal_factor", None, spec, config, 0.5))
    tol = float(_resolve("tol", args.tol, spec, config, 1e-8))
    bounds = _parse_bounds(_resolve("grid_bounds", args.grid_bounds, spec, config, "-7:7"))
    points = int(_resolve("grid_points", args.grid_points, spec, config, 150))
    max_iter = int(_resolve("max_iter", None, spec, config, 5000))
    mode = _resolve("mode", None, spec, config, "log")
    threshold = float(_resolve("integrality_threshold", None, spec, config, 0.75))

    kernels = _kernels_for_times(spec.system, spec.times)
    grids = build_state_grids(
        spec.frames, spec.system, GridConfig(bounds=bounds, points_per_dim=points)
    )
    started = time.perf_counter()
    try:
        solution = solve_chain(
            kernels,
            spec.frames,
            grids,
            epsilon=epsilon,
            tol=tol,
            anneal_start=anneal_start,
            anneal_factor=anneal_factor,
            max_iter=max_iter,
            mode=mode,
        )
    except EnsembleTrackError as exc:
        _write_error(args.output, "discrete", exc)
        raise
    estimate = extract_trajectories(
        solution.chain, grids, integrality_threshold=threshold
    )
    elapsed = time.perf_counter() - started

    result = TrackingResult(
        kind="discrete",
        objective=float(solution.objective),
        times=spec.times,
        diagnostics={
            "dual_objective": float(solution.dual_objective),
            "gap": float(solution.gap),
            "residual": float(solution.residual),
            "iterations": int(solution.iterations),
            "epsilon": float(solution.epsilon),
            "sharpness": float(estimate.sharpness),
            "wall_time": elapsed,
        },
        mode=estimate.mode,
    )
    if estimate.mode == "paths":
        result.trajectories = [
            {"mass": float(m), "states": p.tolist()}
            for p, m in zip(estimate.paths, estimate.masses)
        ]
    else:
        result.edges = estimate.edges
    _emit(result, args)
    return 0


def cmd_track_gaussian(args) -> int:
    spec = problem_io.load_problem(args.input)
    if spec.kind != "gaussian":
        raise ValidationError(
            f"track-gaussian needs a problem of kind 'gaussian', got {spec.kind!r}"
        )
    config = _load_config()
    tol = float(_resolve("tol", args.tol, spec, config, 1e-7))
    formulation = _resolve("formulation", None, spec, config, "per-step")
    if formulation not in ("per-step", "joint"):
        raise ValidationError(
            f"solver.formulation must be 'per-step' or 'joint', got {formulation!r}"
        )
    options = SplittingOptions(
        rho=float(_resolve("rho", None, spec, config, 1.0)),
        over_relaxation=float(_resolve("over_relaxation", None, spec, config, 1.6)),
        tol=tol,
        max_iter=int(_resolve("max_iter", None, spec, config, 50000)),
        regularize=float(_resolve("regularize", None, spec, config, 0.0)),
        strict=bool(_resolve("strict", None, spec, config, True)),
    )
    samples = int(_resolve("flow_samples", args.flow_samples, spec, config, 0))

    started = time.perf_counter()
    try:
        spline = mean_spline(spec.system, spec.times, spec.means)
        solve = covariance_sdp if formulation == "per-step" else covariance_sdp_joint
        plan = solve(spec.system, spec.times, spec.covariances, options=options)
    except EnsembleTrackError as exc:
        _write_error(args.output, "gaussian", exc)
        raise
    elapsed = time.perf_counter() - started

    result = TrackingResult(
        kind="gaussian",
        objective=float(spline.energy + plan.objective),
        times=spec.times,
        diagnostics={
            "mean_objective": float(spline.energy),
            "covariance_objective": float(plan.objective),
            "iterations": int(plan.iterations),
            "primal_residual": float(plan.primal_residual),
            "dual_residual": float(plan.dual_residual),
            "constraint_residual": float(plan.constraint_residual),
            "formulation": formulation,
            "wall_time": elapsed,
        },
        mean_knots=np.asarray(spline.knots, dtype=float),
        state_covariances=np.asarray(plan.covariances, dtype=float),
        cross_covariances=np.asarray(plan.cross, dtype=float),
    )
    if samples > 1:
        t_eval = np.linspace(spec.times[0], spec.times[-1], samples)
        seq = gaussian_flow(spec.system, spline, plan, t_eval)
        result.flow = {
            "times": seq.times,
            "means": seq.means,
            "covariances": seq.covariances,
        }
    _emit(result, args)
    return 0


def cmd_simulate(args) -> int:
    spec = problem_io.load_problem(args.input)
    if spec.kind != "simulate":
        raise ValidationError(
            f"simulate needs a problem of kind 'simulate', got {spec.kind!r}"
        )
    seed = args.seed if args.seed is not None else spec.seed
    rng = np.random.default_rng(seed)
    sim = simulate_ensemble(
        spec.system, spec.initial_states, spec.times, sigma=spec.sigma, rng=rng
    )
    out_spec = ProblemSpec(
        kind="discrete",
        system=spec.system,
        times=spec.times,
        frames=sim.frames(),
        seed=seed,
        solver=spec.solver,
    )
    if args.output:
        problem_io.save_problem(out_spec, args.output)
    else:
        json.dump(problem_io.problem_to_dict(out_spec), sys.stdout, indent=2)
        sys.stdout.write("\n")
    return 0


def cmd_gramian(args) -> int:
    spec = problem_io.load_problem(args.input)
    kernels = _kernels_for_times(spec.system, spec.times)
    doc = {
        "format_version": FORMAT_VERSION,
        "intervals": [
            {
                "dt": float(k.dt),
                "transition": k.transition.tolist(),
                "gramian": k.gramian.tolist(),
                "weight": k.weight.tolist(),
            }
            for k in kernels
        ],
    }
    if args.output:
        Path(args.output).write_text(json.dumps(doc, indent=2) + "\n")
    else:
        json.dump(doc, sys.stdout, indent=2)
        sys.stdout.write("\n")
    return 0


def cmd_validate(args) -> int:
    spec = problem_io.load_problem(args.input)
    if spec.kind == "gaussian":
        GaussianSequence(
            times=spec.times, means=spec.means, covariances=spec.covariances
        )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ensembletrack",
        description="Track ensembles of identical linear systems from unordered snapshots.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, output_help):
        p.add_argument("--input", required=True, help="problem file (JSON)")
        p.add_argument("--output", help=output_help)
        p.add_argument("--seed", type=int, help="random seed override")

    p = sub.add_parser("track-discrete", help="solve a snapshot tracking problem")
    add_common(p, "result file (JSON); stdout if omitted")
    p.add_argument("--epsilon-schedule", metavar="START:FACTOR:FINAL",
                   help="entropic smoothing schedule, e.g. 1.0:0.5:1e-4")
    p.add_argument("--tol", type=float, help="marginal residual tolerance")
    p.add_argument("--grid-bounds", metavar="LO:HI", help="hidden-coordinate grid range")
    p.add_argument("--grid-points", type=int, help="grid points per hidden dimension")
    p.add_argument("--plot", help="write trajectory table (TSV) here")
    p.set_defaults(func=cmd_track_discrete)

    p = sub.add_parser("track-gaussian", help="solve a moment interpolation problem")
    add_common(p, "result file (JSON); stdout if omitted")
    p.add_argument("--tol", type=float, help="splitting residual tolerance")
    p.add_argument("--flow-samples", type=int,
                   help="sample the interpolated flow at this many times")
    p.add_argument("--plot", help="write flow table (TSV) here")
    p.set_defaults(func=cmd_track_gaussian)

    p = sub.add_parser("simulate", help="integrate an ensemble and emit snapshots")
    add_common(p, "discrete problem file (JSON); stdout if omitted")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("gramian", help="print per-interval transition data")
    add_common(p, "output file (JSON); stdout if omitted")
    p.set_defaults(func=cmd_gramian)

    p = sub.add_parser("validate", help="check a problem file")
    p.add_argument("--input", required=True, help="problem file (JSON)")
    p.set_defaults(func=cmd_validate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except EnsembleTrackError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code(exc)
    except Exception as exc:  # pragma: no cover - defensive
        print(f"unexpected error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
