import numpy as np
import pytest

from coneflow.cone import OrderCone, halfspace
from coneflow.field import constant, linear, scalar_riccati, sine
from coneflow.flow import (
    DEFAULT_T_MAX,
    Status,
    comparison_check,
    domain_convexity_check,
    escape_time,
    flow_convexity_check,
    in_domain_D,
    integrate,
    semigroup_check,
    subsuper_convexity_check,
)
from coneflow.report import Verdict
from coneflow.riccati import as_vector_field, cir


@pytest.mark.parametrize("x0", [0.5, 1.0, 2.0, 4.0])
def test_escape_time_brackets_inverse(x0):
    et = escape_time(scalar_riccati(), [x0])
    assert et.theta_lo <= 1 / x0 <= et.theta_hi
    assert et.theta_hi - et.theta_lo <= 1e-6 / x0


def test_global_solution_reports_horizon():
    et = escape_time(scalar_riccati(), [-1.0])
    assert et.theta_lo == et.theta_hi == DEFAULT_T_MAX
    assert et.status is Status.HORIZON_REACHED
    assert escape_time(scalar_riccati(), [-1.0], t_max=3.0).theta_lo == 3.0


def test_escape_through_domain_boundary():
    cone = OrderCone.orthant(1)
    f = constant([1.0], cone, halfspace([1.0], 2.0, cone))
    et = escape_time(f, [0.0])
    assert et.status is Status.ESCAPED_DOMAIN
    assert et.theta_lo <= 2.0 <= et.theta_hi


def test_membership_in_survival_set():
    f = scalar_riccati()
    assert in_domain_D(f, [0.5], 1.9)
    assert not in_domain_D(f, [0.5], 2.1)


def test_flow_convexity_square_closed_form_case():
    rep = flow_convexity_check(scalar_riccati(), [1.0], [3.0], np.linspace(0, 1, 11), 0.2)
    assert rep.verdict is Verdict.PASS


def test_flow_convexity_rejects_points_outside_survival_set():
    with pytest.raises(ValueError):
        flow_convexity_check(scalar_riccati(), [1.0], [3.0], [0.5], 0.5)


def test_flow_convexity_fails_for_sine():
    rep = flow_convexity_check(sine(), [0.5], [2.5], np.linspace(0, 1, 11), 1.0)
    assert rep.verdict is Verdict.FAIL and rep.witness["kind"] == "inequality"


def test_domain_convexity():
    rep = domain_convexity_check(scalar_riccati(), [1.0], [4.0], np.linspace(0, 1, 11))
    assert rep.verdict is Verdict.PASS
    assert min(rep.metrics["theta_z"]) >= 0.25 - 1e-6


def test_comparison_with_true_solutions():
    f = scalar_riccati()
    lo = integrate(f, [-0.5], 0.8)
    hi = integrate(f, [0.5], 0.8)
    rep = comparison_check(f, lo, hi, np.linspace(0, 0.8, 17))
    assert rep.verdict is Verdict.PASS


def test_comparison_with_strict_subsolution():
    f = scalar_riccati()
    # x(t) = -1 is a subsolution (x' = 0 <= x^2), the solution from -1 lies above it
    hi = integrate(f, [-1.0], 1.0)
    rep = comparison_check(f, lambda t: np.array([-1.0]), hi, np.linspace(0, 1, 11))
    assert rep.verdict is Verdict.PASS


def test_comparison_premise_violation_is_inconclusive():
    f = scalar_riccati()
    rep = comparison_check(f, lambda t: np.array([0.5]), lambda t: np.array([1.0]),
                           np.linspace(0, 0.5, 11))
    assert rep.verdict is Verdict.INCONCLUSIVE


def test_comparison_needs_ordered_start():
    f = scalar_riccati()
    with pytest.raises(ValueError):
        comparison_check(f, lambda t: np.array([1.0]), lambda t: np.array([0.0]), [0.0, 0.1])


def test_comparison_two_factor_cross_coupling():
    f = linear([[-1.0, 0.5], [0.3, -0.8]])
    lo = integrate(f, [0.0, -1.0], 2.0)
    hi = integrate(f, [0.2, 0.0], 2.0)
    assert comparison_check(f, lo, hi, np.linspace(0, 2, 21)).verdict is Verdict.PASS


def test_subsuper_route_agrees_with_flow_convexity():
    f = as_vector_field(cir(1.0, -1.0))
    assert subsuper_convexity_check(f, [-2.0], [1.0], 0.3, 0.7).verdict is Verdict.PASS
    assert subsuper_convexity_check(sine(), [0.5], [2.5], 0.5, 1.0).verdict is Verdict.FAIL


def test_semigroup_identity():
    rep = semigroup_check(scalar_riccati(), [0.8], 0.3, 0.6)
    assert rep.verdict is Verdict.PASS and rep.metrics["relative_error"] <= 1e-7
