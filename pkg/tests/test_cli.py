import json

import numpy as np
import pytest

from ensembletrack import DiscreteMeasure, LinearSystem, ProblemSpec, make_kernel, save_problem
from ensembletrack.cli import main


def write_discrete(tmp_path, solver=None):
    frames = [
        DiscreteMeasure.from_points(np.array([[0.0], [2.0]])),
        DiscreteMeasure.from_points(np.array([[1.0], [3.0]])),
        DiscreteMeasure.from_points(np.array([[2.0], [4.0]])),
    ]
    spec = ProblemSpec(
        kind="discrete",
        system=LinearSystem(A=np.zeros((1, 1)), B=np.eye(1), C=np.eye(1)),
        times=np.array([0.0, 1.0, 2.0]),
        frames=frames,
        solver=solver or {},
    )
    path = tmp_path / "discrete.json"
    save_problem(spec, path)
    return path


def write_gaussian(tmp_path):
    spec = ProblemSpec(
        kind="gaussian",
        system=LinearSystem(A=np.zeros((1, 1)), B=np.eye(1), C=np.eye(1)),
        times=np.array([0.0, 1.0]),
        means=np.array([[0.0], [1.0]]),
        covariances=np.array([[[1.0]], [[2.0]]]),
    )
    path = tmp_path / "gaussian.json"
    save_problem(spec, path)
    return path


def test_track_discrete_writes_result(tmp_path):
    problem = write_discrete(tmp_path)
    out = tmp_path / "result.json"
    code = main([
        "track-discrete", "--input", str(problem), "--output", str(out),
        "--epsilon-schedule", "1.0:0.5:1e-4",
    ])
    assert code == 0
    doc = json.loads(out.read_text())
    assert doc["kind"] == "discrete"
    assert doc["mode"] == "paths"
    assert len(doc["trajectories"]) == 2
    # unit steps for two particles, one transport step each of cost 1
    assert doc["objective"] == pytest.approx(4.0, rel=1e-3)
    states = sorted(t["states"][0][0] for t in doc["trajectories"])
    assert states == pytest.approx([0.0, 2.0])


def test_track_discrete_deterministic(tmp_path):
    problem = write_discrete(tmp_path)
    out_a = tmp_path / "a.json"
    out_b = tmp_path / "b.json"
    args = ["track-discrete", "--input", str(problem),
            "--epsilon-schedule", "1.0:0.5:1e-4"]
    assert main(args + ["--output", str(out_a)]) == 0
    assert main(args + ["--output", str(out_b)]) == 0
    doc_a = json.loads(out_a.read_text())
    doc_b = json.loads(out_b.read_text())
    doc_a["diagnostics"].pop("wall_time")
    doc_b["diagnostics"].pop("wall_time")
    assert doc_a == doc_b


def test_track_discrete_plot(tmp_path):
    problem = write_discrete(tmp_path)
    out = tmp_path / "result.json"
    plot = tmp_path / "paths.tsv"
    code = main([
        "track-discrete", "--input", str(problem), "--output", str(out),
        "--epsilon-schedule", "1.0:0.5:1e-4", "--plot", str(plot),
    ])
    assert code == 0
    lines = plot.read_text().strip().split("\n")
    assert len(lines) == 1 + 2 * 3  # header + trajectories x knots


def test_track_discrete_kind_mismatch(tmp_path, capsys):
    problem = write_gaussian(tmp_path)
    code = main(["track-discrete", "--input", str(problem)])
    assert code == 2
    assert "kind" in capsys.readouterr().err


def test_track_discrete_convergence_failure_writes_error_block(tmp_path):
    problem = write_discrete(
        tmp_path,
        solver={"epsilon": 1e-3, "anneal_start": 1e-3, "max_iter": 1, "tol": 1e-15},
    )
    out = tmp_path / "failed.json"
    code = main(["track-discrete", "--input", str(problem), "--output", str(out)])
    assert code == 3
    doc = json.loads(out.read_text())
    assert doc["error"]["type"] == "ConvergenceError"
    assert "residual" in doc["error"]


def test_track_gaussian_end_to_end(tmp_path):
    problem = write_gaussian(tmp_path)
    out = tmp_path / "result.json"
    plot = tmp_path / "flow.tsv"
    code = main([
        "track-gaussian", "--input", str(problem), "--output", str(out),
        "--flow-samples", "11", "--plot", str(plot),
    ])
    assert code == 0
    doc = json.loads(out.read_text())
    # scalar integrator, unit window: mean energy (1-0)^2, covariance cost (sqrt2-1)^2
    assert doc["diagnostics"]["mean_objective"] == pytest.approx(1.0, abs=1e-8)
    assert doc["diagnostics"]["covariance_objective"] == pytest.approx(
        (np.sqrt(2.0) - 1.0) ** 2, abs=1e-5
    )
    assert len(doc["flow"]["times"]) == 11
    assert len(plot.read_text().strip().split("\n")) == 12


def test_simulate_then_track(tmp_path):
    spec = ProblemSpec(
        kind="simulate",
        system=LinearSystem(A=np.zeros((1, 1)), B=np.eye(1), C=np.eye(1)),
        times=np.array([0.0, 1.0, 2.0]),
        initial_states=np.array([[0.0], [2.0]]),
        sigma=0.0,
        seed=1,
    )
    sim_problem = tmp_path / "sim.json"
    save_problem(spec, sim_problem)
    frames_file = tmp_path / "frames.json"
    assert main(["simulate", "--input", str(sim_problem),
                 "--output", str(frames_file)]) == 0
    doc = json.loads(frames_file.read_text())
    assert doc["kind"] == "discrete"
    assert len(doc["frames"]) == 3

    out = tmp_path / "result.json"
    code = main(["track-discrete", "--input", str(frames_file),
                 "--output", str(out), "--epsilon-schedule", "1.0:0.5:1e-4"])
    assert code == 0
    result = json.loads(out.read_text())
    # drift-free diffusion with sigma 0 keeps both particles in place
    assert result["objective"] == pytest.approx(0.0, abs=1e-6)


def test_simulate_seeded_repeatable(tmp_path):
    spec = ProblemSpec(
        kind="simulate",
        system=LinearSystem(A=np.array([[0.0, 1.0], [-1.0, 0.0]]),
                            B=np.eye(2), C=np.eye(2)),
        times=np.array([0.0, 0.5, 1.0]),
        initial_states=np.array([[1.0, 0.0], [0.0, 1.0]]),
        sigma=0.1,
    )
    sim_problem = tmp_path / "sim.json"
    save_problem(spec, sim_problem)
    out_a = tmp_path / "a.json"
    out_b = tmp_path / "b.json"
    assert main(["simulate", "--input", str(sim_problem), "--seed", "42",
                 "--output", str(out_a)]) == 0
    assert main(["simulate", "--input", str(sim_problem), "--seed", "42",
                 "--output", str(out_b)]) == 0
    assert out_a.read_text() == out_b.read_text()
    out_c = tmp_path / "c.json"
    assert main(["simulate", "--input", str(sim_problem), "--seed", "43",
                 "--output", str(out_c)]) == 0
    assert out_a.read_text() != out_c.read_text()


def test_gramian_matches_kernel(tmp_path):
    problem = write_discrete(tmp_path)
    out = tmp_path / "gramian.json"
    assert main(["gramian", "--input", str(problem), "--output", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert len(doc["intervals"]) == 2
    system = LinearSystem(A=np.zeros((1, 1)), B=np.eye(1), C=np.eye(1))
    kernel = make_kernel(system, 1.0)
    np.testing.assert_allclose(doc["intervals"][0]["transition"], kernel.transition)
    np.testing.assert_allclose(doc["intervals"][0]["gramian"], kernel.gramian)
    np.testing.assert_allclose(doc["intervals"][0]["weight"], kernel.weight)


def test_validate_ok_is_silent(tmp_path, capsys):
    problem = write_discrete(tmp_path)
    assert main(["validate", "--input", str(problem)]) == 0
    captured = capsys.readouterr()
    assert captured.out == "" and captured.err == ""


def test_validate_bad_file(tmp_path, capsys):
    path = tmp_path / "broken.json"
    doc = json.loads(write_discrete(tmp_path).read_text())
    del doc["system"]
    path.write_text(json.dumps(doc))
    assert main(["validate", "--input", str(path)]) == 2
    assert "system" in capsys.readouterr().err


def test_config_dir_defaults_and_flag_precedence(tmp_path, monkeypatch):
    config_dir = tmp_path / "config"
    config_dir.mkdir()
    (config_dir / "defaults.json").write_text(json.dumps({
        "epsilon": 0.05, "anneal_start": 0.05, "tol": 1e-4,
    }))
    monkeypatch.setenv("ENSEMBLETRACK_CONFIG_DIR", str(config_dir))
    problem = write_discrete(tmp_path)

    out = tmp_path / "from_config.json"
    assert main(["track-discrete", "--input", str(problem),
                 "--output", str(out)]) == 0
    assert json.loads(out.read_text())["diagnostics"]["epsilon"] == 0.05

    out2 = tmp_path / "from_flag.json"
    assert main(["track-discrete", "--input", str(problem), "--output", str(out2),
                 "--epsilon-schedule", "0.5:0.5:0.01"]) == 0
    assert json.loads(out2.read_text())["diagnostics"]["epsilon"] == 0.01


def test_solver_block_overrides_config(tmp_path, monkeypatch):
    config_dir = tmp_path / "config"
    config_dir.mkdir()
    (config_dir / "defaults.json").write_text(json.dumps({"epsilon": 0.5}))
    monkeypatch.setenv("ENSEMBLETRACK_CONFIG_DIR", str(config_dir))
    problem = write_discrete(tmp_path, solver={"epsilon": 0.02, "anneal_start": 0.08})
    out = tmp_path / "result.json"
    assert main(["track-discrete", "--input", str(problem),
                 "--output", str(out)]) == 0
    assert json.loads(out.read_text())["diagnostics"]["epsilon"] == 0.02


def test_bad_schedule_rejected(tmp_path, capsys):
    problem = write_discrete(tmp_path)
    code = main(["track-discrete", "--input", str(problem),
                 "--epsilon-schedule", "fast"])
    assert code == 2
    assert "epsilon-schedule" in capsys.readouterr().err
