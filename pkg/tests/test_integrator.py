import csv

import numpy as np
import pytest
from scipy.linalg import expm
from scipy.integrate._ivp import rk

from coneflow import integrator
from coneflow.cone import OrderCone, halfspace
from coneflow.field import VectorField, constant, linear, scalar_riccati
from coneflow.integrator import Status, integrate, solve


def riccati_exact(x, t):
    return x / (1 - t * x)


def test_tableau_matches_reference_dormand_prince():
    np.testing.assert_array_equal(integrator.C, rk.RK45.C)
    np.testing.assert_array_equal(integrator.A, rk.RK45.A)
    np.testing.assert_array_equal(integrator.B, rk.RK45.B)
    np.testing.assert_array_equal(integrator.E, rk.RK45.E)
    np.testing.assert_array_equal(integrator.P, rk.RK45.P)


@pytest.mark.parametrize("x0,t", [(2.0, 0.2), (1.0, 0.9), (-3.0, 5.0), (0.5, 1.5)])
def test_scalar_riccati_closed_form(x0, t):
    traj = integrate(scalar_riccati(), [x0], t)
    assert traj.status is Status.REACHED_TARGET
    assert traj.final[0] == pytest.approx(riccati_exact(x0, t), rel=1e-8)


def test_linear_flow_against_matrix_exponential():
    A = np.array([[-1.0, 0.5, 0.0], [0.3, -0.8, 0.2], [0.0, 0.1, -0.4]])
    x0 = np.array([1.0, -2.0, 0.5])
    traj = integrate(linear(A), x0, 3.0)
    for t in (0.0, 0.7, 1.9, 3.0):
        np.testing.assert_allclose(traj(t), expm(A * t) @ x0, rtol=1e-8, atol=1e-10)


def test_dense_output_residual_is_small():
    f = scalar_riccati()
    traj = integrate(f, [1.0], 0.8)
    ts = np.linspace(0, 0.8, 57)
    for t in ts:
        x = traj(t)
        assert traj.derivative(t)[0] == pytest.approx(f(t, x)[0], rel=1e-5)
        assert x[0] == pytest.approx(riccati_exact(1.0, t), rel=1e-8)


def test_error_scales_with_tolerance():
    errs = []
    for rtol in (1e-6, 1e-8, 1e-10):
        traj = integrate(scalar_riccati(), [1.0], 0.9, rtol=rtol, atol=rtol * 1e-3)
        errs.append(abs(traj.final[0] - riccati_exact(1.0, 0.9)))
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] <= 1e-8


def test_per_component_atol_is_accepted():
    traj = integrate(linear(np.eye(2) * -1.0), [1.0, 1e-8], 1.0, atol=np.array([1e-12, 1e-20]))
    assert traj.final[1] == pytest.approx(1e-8 * np.exp(-1.0), rel=1e-8)


def test_blowup_is_bracketed():
    traj = integrate(scalar_riccati(), [1.0], 2.0)
    assert traj.status is Status.STEP_COLLAPSE
    lo, hi = traj.theta_bracket
    assert lo <= 1.0 <= hi and hi - lo <= 1e-6
    assert traj.t_end == pytest.approx(lo)


def test_domain_exit_is_bisected():
    cone = OrderCone.orthant(1)
    f = constant([1.0], cone, halfspace([1.0], 2.0, cone))
    traj = integrate(f, [0.0], 5.0)
    assert traj.status is Status.ESCAPED_DOMAIN
    lo, hi = traj.theta_bracket
    assert lo <= 2.0 <= hi and hi - lo <= 1e-6


def test_time_dependent_field():
    f = VectorField(lambda t, x: np.cos(t) * x, OrderCone.orthant(1), autonomous=False)
    traj = integrate(f, [2.0], 3.0)
    assert traj.final[0] == pytest.approx(2.0 * np.exp(np.sin(3.0)), rel=1e-8)


def test_horizon_is_enforced():
    f = VectorField(lambda t, x: x, OrderCone.orthant(1), horizon=1.0, autonomous=False)
    with pytest.raises(ValueError):
        integrate(f, [1.0], 1.0)
    assert integrate(f, [1.0], 0.5).status is Status.REACHED_TARGET


def test_initial_point_outside_domain():
    cone = OrderCone.orthant(1)
    f = constant([1.0], cone, halfspace([1.0], 2.0, cone))
    with pytest.raises(ValueError):
        solve(f, [3.0], 1.0)


def test_zero_length_solve():
    traj = integrate(scalar_riccati(), [1.0], 0.0)
    assert traj.final[0] == 1.0 and traj(0.0)[0] == 1.0


def test_stats_are_counted():
    traj = integrate(scalar_riccati(), [1.0], 0.5)
    s = traj.stats
    assert s.accepted == len(traj.step_times()) - 1
    assert s.rhs_evaluations >= 6 * s.accepted


def test_csv_dump(tmp_path):
    traj = integrate(linear([[0.0, 1.0], [-1.0, 0.0]]), [1.0, 0.0], 1.0)
    path = traj.to_csv(tmp_path / "traj.csv", grid=[0.25, 0.5])
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["t", "x_1", "x_2"]
    ts = [float(r[0]) for r in rows[1:]]
    assert ts == sorted(ts) and 0.25 in ts and 0.5 in ts
    assert len(rows) - 1 == len(set(traj.step_times()) | {0.25, 0.5})
    row = rows[1 + ts.index(0.5)]
    assert float(row[1]) == pytest.approx(np.cos(0.5), rel=1e-8)
