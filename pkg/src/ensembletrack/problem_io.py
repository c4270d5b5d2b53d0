"""Problem and result files.

Problems and results are JSON documents tagged with a format version.
A problem carries the system matrices, the snapshot times and one of
three payloads: discrete frames, Gaussian moments, or simulation inputs.
Results mirror the solver outputs closely enough to be reloaded and
plotted without rerunning the solve. Plot data is emitted as
tab-separated tables.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .discrete import DiscreteMeasure
from .dynamics import LinearSystem
from .validation import ValidationError

__all__ = [
    "FORMAT_VERSION",
    "ProblemSpec",
    "TrackingResult",
    "load_problem",
    "save_problem",
    "load_result",
    "save_result",
    "emit_plot_data",
]

FORMAT_VERSION = "1"

_KINDS = ("discrete", "gaussian", "simulate")


@dataclass
class ProblemSpec:
    """Validated contents of a problem file."""

    kind: str
    system: LinearSystem
    times: np.ndarray
    frames: list[DiscreteMeasure] | None = None
    means: np.ndarray | None = None
    covariances: np.ndarray | None = None
    initial_states: np.ndarray | None = None
    sigma: float = 0.0
    seed: int | None = None
    solver: dict = field(default_factory=dict)


@dataclass
class TrackingResult:
    """Solver output in file form."""

    kind: str
    objective: float
    times: np.ndarray
    diagnostics: dict = field(default_factory=dict)
    # discrete payload
    mode: str | None = None
    trajectories: list[dict] | None = None
    edges: list[np.ndarray] | None = None
    # gaussian payload
    mean_knots: np.ndarray | None = None
    state_covariances: np.ndarray | None = None
    cross_covariances: np.ndarray | None = None
    flow: dict | None = None


def _require(doc: dict, key: str, where: str):
    if key not in doc:
        raise ValidationError(f"{where}: missing required field '{key}'")
    return doc[key]


def _array(value, where: str, ndim: int | None = None) -> np.ndarray:
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{where}: not a numeric array ({exc})") from None
    if ndim is not None and arr.ndim != ndim:
        raise ValidationError(f"{where}: expected a {ndim}-dimensional array, got shape {arr.shape}")
    if arr.size == 0:
        raise ValidationError(f"{where}: array is empty")
    return arr


def _check_version(doc: dict, where: str):
    version = _require(doc, "format_version", where)
    if str(version) != FORMAT_VERSION:
        raise ValidationError(
            f"{where}: unsupported format_version {version!r} (this build reads {FORMAT_VERSION!r})"
        )


def problem_from_dict(doc: dict, where: str = "problem") -> ProblemSpec:
    if not isinstance(doc, dict):
        raise ValidationError(f"{where}: top level must be a JSON object")
    _check_version(doc, where)
    kind = _require(doc, "kind", where)
    if kind not in _KINDS:
        raise ValidationError(f"{where}: kind must be one of {_KINDS}, got {kind!r}")
    sys_doc = _require(doc, "system", where)
    for mat in ("A", "B", "C"):
        _require(sys_doc, mat, f"{where}.system")
    system = LinearSystem(
        A=_array(sys_doc["A"], f"{where}.system.A", ndim=2),
        B=_array(sys_doc["B"], f"{where}.system.B", ndim=2),
        C=_array(sys_doc["C"], f"{where}.system.C", ndim=2),
    )
    times = _array(_require(doc, "times", where), f"{where}.times", ndim=1)

    spec = ProblemSpec(kind=kind, system=system, times=times)
    spec.seed = doc.get("seed")
    if spec.seed is not None and not isinstance(spec.seed, int):
        raise ValidationError(f"{where}.seed: must be an integer")
    solver = doc.get("solver", {})
    if not isinstance(solver, dict):
        raise ValidationError(f"{where}.solver: must be an object")
    spec.solver = solver

    if kind == "discrete":
        frames_doc = _require(doc, "frames", where)
        if not isinstance(frames_doc, list) or len(frames_doc) != times.size:
            raise ValidationError(
                f"{where}.frames: need one frame per time ({times.size}), got "
                f"{len(frames_doc) if isinstance(frames_doc, list) else type(frames_doc).__name__}"
            )
        frames = []
        for k, frame in enumerate(frames_doc):
            pts = _array(_require(frame, "points", f"{where}.frames[{k}]"),
                         f"{where}.frames[{k}].points", ndim=2)
            if "weights" in frame:
                weights = _array(frame["weights"], f"{where}.frames[{k}].weights", ndim=1)
                frames.append(DiscreteMeasure(support=pts, weights=weights))
            else:
                frames.append(DiscreteMeasure.from_points(pts))
        spec.frames = frames
    elif kind == "gaussian":
        spec.means = _array(_require(doc, "means", where), f"{where}.means", ndim=2)
        spec.covariances = _array(
            _require(doc, "covariances", where), f"{where}.covariances", ndim=3
        )
        if spec.means.shape[0] != times.size or spec.covariances.shape[0] != times.size:
            raise ValidationError(
                f"{where}: means/covariances must have one entry per time"
            )
    else:
        spec.initial_states = _array(
            _require(doc, "initial_states", where), f"{where}.initial_states", ndim=2
        )
        sigma = doc.get("sigma", 0.0)
        if not isinstance(sigma, (int, float)) or sigma < 0:
            raise ValidationError(f"{where}.sigma: must be a nonnegative number")
        spec.sigma = float(sigma)
    return spec


def problem_to_dict(spec: ProblemSpec) -> dict:
    doc = {
        "format_version": FORMAT_VERSION,
        "kind": spec.kind,
        "system": {
            "A": spec.system.A.tolist(),
            "B": spec.system.B.tolist(),
            "C": spec.system.C.tolist(),
        },
        "times": np.asarray(spec.times, dtype=float).tolist(),
    }
    if spec.seed is not None:
        doc["seed"] = spec.seed
    if spec.solver:
        doc["solver"] = spec.solver
    if spec.kind == "discrete":
        doc["frames"] = [
            {"points": m.support.tolist(), "weights": m.weights.tolist()}
            for m in (spec.frames or [])
        ]
    elif spec.kind == "gaussian":
        doc["means"] = spec.means.tolist()
        doc["covariances"] = spec.covariances.tolist()
    else:
        doc["initial_states"] = spec.initial_states.tolist()
        doc["sigma"] = spec.sigma
    return doc


def load_problem(path) -> ProblemSpec:
    """Read and validate a problem file."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ValidationError(f"problem file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from None
    return problem_from_dict(doc, where=str(path))


def save_problem(spec: ProblemSpec, path) -> None:
    Path(path).write_text(json.dumps(problem_to_dict(spec), indent=2) + "\n")


def result_to_dict(result: TrackingResult) -> dict:
    doc = {
        "format_version": FORMAT_VERSION,
        "kind": result.kind,
        "objective": result.objective,
        "times": np.asarray(result.times, dtype=float).tolist(),
        "diagnostics": result.diagnostics,
    }
    if result.kind == "discrete":
        doc["mode"] = result.mode
        if result.trajectories is not None:
            doc["trajectories"] = result.trajectories
        if result.edges is not None:
            doc["edges"] = [e.tolist() for e in result.edges]
    else:
        doc["mean_knots"] = result.mean_knots.tolist()
        doc["state_covariances"] = result.state_covariances.tolist()
        doc["cross_covariances"] = result.cross_covariances.tolist()
        if result.flow is not None:
            doc["flow"] = {
                "times": np.asarray(result.flow["times"], dtype=float).tolist(),
                "means": np.asarray(result.flow["means"], dtype=float).tolist(),
                "covariances": np.asarray(result.flow["covariances"], dtype=float).tolist(),
            }
    return doc


def result_from_dict(doc: dict, where: str = "result") -> TrackingResult:
    if not isinstance(doc, dict):
        raise ValidationError(f"{where}: top level must be a JSON object")
    _check_version(doc, where)
    if "error" in doc:
        raise ValidationError(
            f"{where}: file records a failed solve ({doc['error'].get('type', 'unknown')}: "
            f"{doc['error'].get('message', '')})"
        )
    kind = _require(doc, "kind", where)
    if kind not in ("discrete", "gaussian"):
        raise ValidationError(f"{where}: kind must be 'discrete' or 'gaussian', got {kind!r}")
    result = TrackingResult(
        kind=kind,
        objective=float(_require(doc, "objective", where)),
        times=_array(_require(doc, "times", where), f"{where}.times", ndim=1),
        diagnostics=doc.get("diagnostics", {}),
    )
    if kind == "discrete":
        result.mode = _require(doc, "mode", where)
        if result.mode == "paths":
            result.trajectories = _require(doc, "trajectories", where)
        elif "edges" in doc:
            result.edges = [np.asarray(e, dtype=float) for e in doc["edges"]]
    else:
        result.mean_knots = _array(doc.get("mean_knots"), f"{where}.mean_knots", ndim=2)
        result.state_covariances = _array(
            doc.get("state_covariances"), f"{where}.state_covariances", ndim=3
        )
        result.cross_covariances = _array(
            doc.get("cross_covariances"), f"{where}.cross_covariances", ndim=3
        )
        if "flow" in doc:
            flow = doc["flow"]
            result.flow = {
                "times": _array(flow.get("times"), f"{where}.flow.times", ndim=1),
                "means": _array(flow.get("means"), f"{where}.flow.means", ndim=2),
                "covariances": _array(
                    flow.get("covariances"), f"{where}.flow.covariances", ndim=3
                ),
            }
    return result


def load_result(path) -> TrackingResult:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ValidationError(f"result file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from None
    return result_from_dict(doc, where=str(path))


def save_result(result: TrackingResult, path) -> None:
    Path(path).write_text(json.dumps(result_to_dict(result), indent=2) + "\n")


def emit_plot_data(result: TrackingResult, path) -> int:
    """Write a tab-separated table for plotting; returns the row count.

    Discrete path results produce one row per trajectory and knot time
    with the state coordinates and the carried mass. Diffuse discrete
    results fall back to the flow edge list. Gaussian results produce one
    row per flow sample with the mean and the flattened covariance.
    """
    path = Path(path)
    lines = []
    if result.kind == "discrete":
        if result.mode == "paths":
            states0 = np.asarray(result.trajectories[0]["states"], dtype=float)
            n = states0.shape[1]
            header = ["trajectory", "time", "mass"] + [f"x{i}" for i in range(n)]
            lines.append("\t".join(header))
            for j, traj in enumerate(result.trajectories):
                states = np.asarray(traj["states"], dtype=float)
                for k, t in enumerate(result.times):
                    row = [str(j), repr(float(t)), repr(float(traj["mass"]))]
                    row += [repr(float(v)) for v in states[k]]
                    lines.append("\t".join(row))
        else:
            lines.append("\t".join(["interval", "from", "to", "mass"]))
            for k, edges in enumerate(result.edges or []):
                for i, j, mass in edges:
                    lines.append(f"{k}\t{int(i)}\t{int(j)}\t{mass!r}")
    else:
        flow = result.flow
        if flow is None:
            flow = {
                "times": result.times,
                "means": result.mean_knots,
                "covariances": result.state_covariances,
            }
        means = np.asarray(flow["means"], dtype=float)
        covs = np.asarray(flow["covariances"], dtype=float)
        n = means.shape[1]
        header = ["time"] + [f"mean{i}" for i in range(n)]
        header += [f"cov{i}{j}" for i in range(n) for j in range(i, n)]
        lines.append("\t".join(header))
        for k, t in enumerate(np.asarray(flow["times"], dtype=float)):
            row = [repr(float(t))] + [repr(float(v)) for v in means[k]]
            row += [repr(float(covs[k][i, j])) for i in range(n) for j in range(i, n)]
            lines.append("\t".join(row))
    path.write_text("\n".join(lines) + "\n")
    return len(lines) - 1
