import json

import numpy as np
import pytest

from ensembletrack import (
    DiscreteMeasure,
    LinearSystem,
    ProblemSpec,
    TrackingResult,
    ValidationError,
    emit_plot_data,
    load_problem,
    load_result,
    save_problem,
    save_result,
)
from ensembletrack.problem_io import FORMAT_VERSION, problem_to_dict


def scalar_system():
    return LinearSystem(A=np.zeros((1, 1)), B=np.eye(1), C=np.eye(1))


def discrete_spec():
    frames = [
        DiscreteMeasure.from_points(np.array([[0.0], [2.0]])),
        DiscreteMeasure.from_points(np.array([[1.0], [3.0]])),
    ]
    return ProblemSpec(
        kind="discrete",
        system=scalar_system(),
        times=np.array([0.0, 1.0]),
        frames=frames,
        seed=7,
        solver={"epsilon": 0.01},
    )


def test_discrete_problem_round_trip(tmp_path):
    spec = discrete_spec()
    path = tmp_path / "problem.json"
    save_problem(spec, path)
    loaded = load_problem(path)
    assert loaded.kind == "discrete"
    assert loaded.seed == 7
    assert loaded.solver == {"epsilon": 0.01}
    np.testing.assert_allclose(loaded.times, spec.times)
    np.testing.assert_allclose(loaded.system.A, spec.system.A)
    for orig, back in zip(spec.frames, loaded.frames):
        np.testing.assert_allclose(back.support, orig.support)
        np.testing.assert_allclose(back.weights, orig.weights)


def test_gaussian_problem_round_trip(tmp_path):
    spec = ProblemSpec(
        kind="gaussian",
        system=scalar_system(),
        times=np.array([0.0, 1.0, 2.0]),
        means=np.array([[0.0], [1.0], [2.0]]),
        covariances=np.array([[[1.0]], [[1.5]], [[2.0]]]),
    )
    path = tmp_path / "problem.json"
    save_problem(spec, path)
    loaded = load_problem(path)
    np.testing.assert_allclose(loaded.means, spec.means)
    np.testing.assert_allclose(loaded.covariances, spec.covariances)


def test_simulate_problem_round_trip(tmp_path):
    spec = ProblemSpec(
        kind="simulate",
        system=scalar_system(),
        times=np.array([0.0, 0.5, 1.0]),
        initial_states=np.array([[0.0], [1.0]]),
        sigma=0.25,
        seed=3,
    )
    path = tmp_path / "problem.json"
    save_problem(spec, path)
    loaded = load_problem(path)
    assert loaded.sigma == 0.25
    assert loaded.seed == 3
    np.testing.assert_allclose(loaded.initial_states, spec.initial_states)


def test_missing_field_names_the_field(tmp_path):
    doc = problem_to_dict(discrete_spec())
    del doc["times"]
    path = tmp_path / "broken.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(ValidationError, match="'times'"):
        load_problem(path)


def test_unknown_version_rejected(tmp_path):
    doc = problem_to_dict(discrete_spec())
    doc["format_version"] = "99"
    path = tmp_path / "future.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(ValidationError, match="format_version"):
        load_problem(path)


def test_frame_count_mismatch(tmp_path):
    doc = problem_to_dict(discrete_spec())
    doc["frames"] = doc["frames"][:1]
    path = tmp_path / "short.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(ValidationError, match="frames"):
        load_problem(path)


def test_non_numeric_entry_reported(tmp_path):
    doc = problem_to_dict(discrete_spec())
    doc["frames"][0]["points"] = [["zero"], [2.0]]
    path = tmp_path / "text.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(ValidationError, match=r"frames\[0\]\.points"):
        load_problem(path)


def test_invalid_json_reported(tmp_path):
    path = tmp_path / "garbled.json"
    path.write_text("{not json")
    with pytest.raises(ValidationError, match="invalid JSON"):
        load_problem(path)


def test_missing_file_reported(tmp_path):
    with pytest.raises(ValidationError, match="not found"):
        load_problem(tmp_path / "nope.json")


def test_discrete_result_round_trip(tmp_path):
    result = TrackingResult(
        kind="discrete",
        objective=2.0,
        times=np.array([0.0, 1.0, 2.0]),
        diagnostics={"gap": 1e-9, "iterations": 12},
        mode="paths",
        trajectories=[
            {"mass": 1.0, "states": [[0.0], [1.0], [2.0]]},
            {"mass": 1.0, "states": [[2.0], [3.0], [4.0]]},
        ],
    )
    path = tmp_path / "result.json"
    save_result(result, path)
    loaded = load_result(path)
    assert loaded.mode == "paths"
    assert loaded.diagnostics["iterations"] == 12
    assert len(loaded.trajectories) == 2
    np.testing.assert_allclose(
        loaded.trajectories[1]["states"], result.trajectories[1]["states"]
    )


def test_gaussian_result_round_trip_with_flow(tmp_path):
    flow_times = np.linspace(0.0, 1.0, 5)
    result = TrackingResult(
        kind="gaussian",
        objective=1.2,
        times=np.array([0.0, 1.0]),
        mean_knots=np.array([[0.0], [1.0]]),
        state_covariances=np.array([[[1.0]], [[2.0]]]),
        cross_covariances=np.array([[[1.3]]]),
        flow={
            "times": flow_times,
            "means": flow_times[:, None],
            "covariances": np.ones((5, 1, 1)),
        },
    )
    path = tmp_path / "result.json"
    save_result(result, path)
    loaded = load_result(path)
    np.testing.assert_allclose(loaded.mean_knots, result.mean_knots)
    np.testing.assert_allclose(loaded.flow["times"], flow_times)
    np.testing.assert_allclose(loaded.flow["covariances"], np.ones((5, 1, 1)))


def test_error_block_refuses_reload(tmp_path):
    path = tmp_path / "failed.json"
    path.write_text(json.dumps({
        "format_version": FORMAT_VERSION,
        "kind": "discrete",
        "error": {"type": "ConvergenceError", "message": "stalled"},
    }))
    with pytest.raises(ValidationError, match="ConvergenceError"):
        load_result(path)


def test_plot_rows_paths(tmp_path):
    result = TrackingResult(
        kind="discrete",
        objective=2.0,
        times=np.array([0.0, 1.0, 2.0]),
        mode="paths",
        trajectories=[
            {"mass": 1.0, "states": [[0.0], [1.0], [2.0]]},
            {"mass": 1.0, "states": [[2.0], [3.0], [4.0]]},
        ],
    )
    path = tmp_path / "paths.tsv"
    rows = emit_plot_data(result, path)
    lines = path.read_text().strip().split("\n")
    assert rows == 6  # 2 trajectories x 3 knots
    assert len(lines) == rows + 1
    assert lines[0].split("\t") == ["trajectory", "time", "mass", "x0"]
    first = lines[1].split("\t")
    assert first[0] == "0" and float(first[1]) == 0.0


def test_plot_rows_edges(tmp_path):
    result = TrackingResult(
        kind="discrete",
        objective=1.0,
        times=np.array([0.0, 1.0]),
        mode="edges",
        edges=[np.array([[0.0, 0.0, 0.5], [0.0, 1.0, 0.5], [1.0, 1.0, 1.0]])],
    )
    path = tmp_path / "edges.tsv"
    rows = emit_plot_data(result, path)
    lines = path.read_text().strip().split("\n")
    assert rows == 3
    assert lines[0].split("\t") == ["interval", "from", "to", "mass"]
    assert lines[1].split("\t")[:3] == ["0", "0", "0"]


def test_plot_rows_gaussian_flow(tmp_path):
    flow_times = np.linspace(0.0, 1.0, 7)
    result = TrackingResult(
        kind="gaussian",
        objective=0.0,
        times=np.array([0.0, 1.0]),
        mean_knots=np.zeros((2, 2)),
        state_covariances=np.tile(np.eye(2), (2, 1, 1)),
        cross_covariances=np.zeros((1, 2, 2)),
        flow={
            "times": flow_times,
            "means": np.zeros((7, 2)),
            "covariances": np.tile(np.eye(2), (7, 1, 1)),
        },
    )
    path = tmp_path / "flow.tsv"
    rows = emit_plot_data(result, path)
    lines = path.read_text().strip().split("\n")
    assert rows == 7
    # upper triangle of a 2x2 covariance: 00, 01, 11
    assert lines[0].split("\t") == ["time", "mean0", "mean1", "cov00", "cov01", "cov11"]


def test_plot_gaussian_falls_back_to_knots(tmp_path):
    result = TrackingResult(
        kind="gaussian",
        objective=0.0,
        times=np.array([0.0, 1.0, 2.0]),
        mean_knots=np.zeros((3, 1)),
        state_covariances=np.ones((3, 1, 1)),
        cross_covariances=np.ones((2, 1, 1)),
    )
    path = tmp_path / "knots.tsv"
    rows = emit_plot_data(result, path)
    assert rows == 3
