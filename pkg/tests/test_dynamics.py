import numpy as np
import pytest

from ensembletrack.dynamics import (
    LinearSystem,
    bridge,
    bridge_from_kernel,
    gramian,
    make_kernel,
    step_cost,
    step_cost_matrix,
)
from ensembletrack.validation import ValidationError

from oracles import gramian_quadrature, lq_pinned

ROTATION = np.array([[0.0, 1.0], [-1.0, 0.0]])
DOUBLE_INT = np.array([[0.0, 1.0], [0.0, 0.0]])


def rotation_system():
    return LinearSystem(A=ROTATION, B=np.eye(2), C=np.array([[1.0, 0.0]]))


def double_integrator():
    return LinearSystem(A=DOUBLE_INT, B=np.array([[0.0], [1.0]]), C=np.array([[1.0, 0.0]]))


def random_controllable(rng, n, p, radius=2.0):
    while True:
        a = rng.standard_normal((n, n))
        sr = np.abs(np.linalg.eigvals(a)).max()
        if sr > 0:
            a *= rng.uniform(0.2, radius) / sr
        b = rng.standard_normal((n, p))
        try:
            return LinearSystem(A=a, B=b, C=np.eye(n))
        except ValidationError:
            continue


def test_linear_system_rejects_uncontrollable():
    a = np.diag([1.0, 2.0])
    b = np.array([[1.0], [0.0]])  # second mode unreachable
    with pytest.raises(ValidationError, match="controllable"):
        LinearSystem(A=a, B=b, C=np.eye(2))


def test_linear_system_rejects_bad_shapes():
    with pytest.raises(ValidationError):
        LinearSystem(A=np.eye(2), B=np.ones((3, 1)), C=np.eye(2))
    with pytest.raises(ValidationError):
        LinearSystem(A=np.eye(2), B=np.eye(2), C=np.ones((1, 3)))


def test_kernel_integrator_identity():
    # zero drift with full actuation gives the plain quadratic cost
    sys = LinearSystem(A=np.zeros((3, 3)), B=np.eye(3), C=np.eye(3))
    k = make_kernel(sys, 1.0)
    np.testing.assert_allclose(k.transition, np.eye(3), atol=1e-14)
    np.testing.assert_allclose(k.gramian, np.eye(3), atol=1e-13)
    np.testing.assert_allclose(k.weight, np.eye(3), atol=1e-13)


def test_kernel_double_integrator_gramian():
    k = make_kernel(double_integrator(), 1.0)
    expected = np.array([[1.0 / 3.0, 0.5], [0.5, 1.0]])
    np.testing.assert_allclose(k.gramian, expected, atol=1e-12)


def test_kernel_rotation_transition():
    k = make_kernel(rotation_system(), 1.0)
    expected = np.array([[np.cos(1.0), np.sin(1.0)], [-np.sin(1.0), np.cos(1.0)]])
    np.testing.assert_allclose(k.transition, expected, atol=1e-12)


def test_kernel_inverse_consistency():
    rng = np.random.default_rng(4)
    for _ in range(5):
        sys = random_controllable(rng, 3, 2)
        k = make_kernel(sys, rng.uniform(0.3, 2.0))
        np.testing.assert_allclose(k.weight @ k.gramian, np.eye(3), atol=1e-9)


def test_gramian_matches_quadrature():
    rng = np.random.default_rng(5)
    for n in (2, 4, 6):
        sys = random_controllable(rng, n, max(1, n - 1))
        dt = rng.uniform(0.4, 1.5)
        m = gramian(sys, dt)
        ref = gramian_quadrature(sys.A, sys.B, dt)
        np.testing.assert_allclose(m, ref, rtol=1e-10, atol=1e-12)


def test_step_cost_euclidean_degeneration():
    sys = LinearSystem(A=np.zeros((2, 2)), B=np.eye(2), C=np.eye(2))
    k = make_kernel(sys, 1.0)
    rng = np.random.default_rng(6)
    for _ in range(10):
        x0, x1 = rng.standard_normal((2, 2))
        assert step_cost(k, x0, x1) == pytest.approx(np.sum((x1 - x0) ** 2), abs=1e-12)


def test_step_cost_zero_on_free_flow():
    k = make_kernel(rotation_system(), 1.0)
    x0 = np.array([1.5, -0.3])
    assert step_cost(k, x0, k.transition @ x0) == pytest.approx(0.0, abs=1e-12)


def test_step_cost_nonnegative():
    rng = np.random.default_rng(7)
    sys = random_controllable(rng, 3, 1)
    k = make_kernel(sys, 1.0)
    for _ in range(50):
        x0, x1 = rng.standard_normal((2, 3))
        assert step_cost(k, x0, x1) >= 0.0


def test_step_cost_matches_lq_oracle():
    k = make_kernel(rotation_system(), 1.0)
    x0 = np.array([1.0, 0.0])
    x1 = np.array([0.0, 0.0])
    expected = step_cost(k, x0, x1)
    oracle_cost, _, _ = lq_pinned(ROTATION, np.eye(2), x0, x1, substeps=4000)
    assert oracle_cost == pytest.approx(expected, rel=1e-6)


def test_step_cost_matrix_agrees_with_scalar():
    rng = np.random.default_rng(8)
    sys = random_controllable(rng, 2, 2)
    k = make_kernel(sys, 0.7)
    pts0 = rng.standard_normal((5, 2))
    pts1 = rng.standard_normal((4, 2))
    mat = step_cost_matrix(k, pts0, pts1)
    for i in range(5):
        for j in range(4):
            assert mat[i, j] == pytest.approx(step_cost(k, pts0[i], pts1[j]), abs=1e-10)


def test_bridge_endpoints():
    sys = rotation_system()
    for dt in (1.0, 0.5):
        b0 = bridge(sys, 0.0, dt)
        np.testing.assert_allclose(b0.from_start, np.eye(2), atol=1e-9)
        np.testing.assert_allclose(b0.from_end, np.zeros((2, 2)), atol=1e-9)
        b1 = bridge(sys, 1.0, dt)
        np.testing.assert_allclose(b1.from_start, np.zeros((2, 2)), atol=1e-9)
        np.testing.assert_allclose(b1.from_end, np.eye(2), atol=1e-9)


def test_bridge_straight_line_for_integrator():
    sys = LinearSystem(A=np.zeros((2, 2)), B=np.eye(2), C=np.eye(2))
    for t in (0.25, 0.5, 0.9):
        b = bridge(sys, t)
        np.testing.assert_allclose(b.from_start, (1 - t) * np.eye(2), atol=1e-12)
        np.testing.assert_allclose(b.from_end, t * np.eye(2), atol=1e-12)


def test_bridge_matches_lq_trajectory():
    sys = double_integrator()
    x0 = np.array([0.0, 1.0])
    x1 = np.array([1.0, -0.5])
    substeps = 4000
    _, times, states = lq_pinned(DOUBLE_INT, sys.B, x0, x1, substeps=substeps)
    k = make_kernel(sys, 1.0)
    for tau in (0.25, 0.5, 0.75):
        b = bridge_from_kernel(sys, k, tau)
        idx = int(round(tau * substeps))
        np.testing.assert_allclose(b.interpolate(x0, x1), states[idx], atol=1e-6)


def test_bridge_endpoint_reproduction():
    rng = np.random.default_rng(9)
    sys = random_controllable(rng, 3, 2)
    x0, x1 = rng.standard_normal((2, 3))
    np.testing.assert_allclose(bridge(sys, 0.0).interpolate(x0, x1), x0, atol=1e-9)
    np.testing.assert_allclose(bridge(sys, 1.0).interpolate(x0, x1), x1, atol=1e-9)


def test_nonuniform_interval_kernels():
    sys = rotation_system()
    k_short = make_kernel(sys, 0.25)
    ref = gramian_quadrature(ROTATION, np.eye(2), 0.25)
    np.testing.assert_allclose(k_short.gramian, ref, rtol=1e-10, atol=1e-14)
    with pytest.raises(ValidationError):
        make_kernel(sys, 0.0)
