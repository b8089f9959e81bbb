import math
from dataclasses import replace

import numpy as np
import pytest
from scipy.integrate import quad

from coneflow.cone import OrderCone, halfspace
from coneflow.field import (
    Sampler,
    VectorField,
    bump_normalizer,
    check_convexity,
    check_domain_convex,
    check_jacobian,
    check_order_regular,
    check_quasimonotone,
    constant,
    kernel_rule,
    kernel_tensor,
    lipschitz_estimate,
    linear,
    mollify,
    scalar_riccati,
    sine,
)
from coneflow.report import Verdict


def bump_moment(k):
    z, _ = quad(lambda s: math.exp(-1 / (1 - s * s)), -1, 1, epsabs=1e-15, epsrel=1e-13)
    m, _ = quad(lambda s: s ** k * math.exp(-1 / (1 - s * s)), -1, 1, epsabs=1e-15, epsrel=1e-13)
    return m / z


def test_kernel_rule_moments_against_quad():
    s, w = kernel_rule(15)
    assert w.sum() == pytest.approx(1.0, abs=1e-13)
    assert np.all(w > 0) and np.all(np.abs(s) < 1)
    for k in (1, 3):
        assert abs(w @ s ** k) < 1e-15
    for k in (2, 4, 6):
        assert w @ s ** k == pytest.approx(bump_moment(k), rel=1e-10)


def test_bump_normalizer_value():
    assert bump_normalizer() == pytest.approx(0.44399381616807937, rel=1e-12)


def test_kernel_tensor_is_a_product_rule():
    eta, w = kernel_tensor(2, 5)
    assert eta.shape == (25, 2) and w.sum() == pytest.approx(1.0, abs=1e-13)


def test_mollified_square_matches_shifted_parabola():
    # (x^2 * rho_eps)(x) = x^2 + eps^2 m2
    m2 = bump_moment(2)
    for eps in (0.2, 0.05):
        g = mollify(scalar_riccati(), eps)
        for x in (-1.0, 0.3, 2.0):
            assert g(0, [x])[0] == pytest.approx(x * x + eps * eps * m2, rel=1e-12)
        assert g.jac(0, [0.7])[0, 0] == pytest.approx(1.4, rel=1e-12)


def test_mollified_linear_field_is_unchanged():
    A = np.array([[-1.0, 0.5], [0.3, -0.8]])
    g = mollify(linear(A), 0.1)
    x = np.array([0.4, -1.2])
    np.testing.assert_allclose(g(0, x), A @ x, atol=1e-14)


def test_mollify_shrinks_a_bounded_domain():
    cone = OrderCone.orthant(2)
    f = constant([1.0, 0.0], cone, halfspace([1.0, 1.0], 2.0, cone))
    g = mollify(f, 0.1)
    assert g.domain.shrunk_by == pytest.approx(0.1 * math.sqrt(2))
    assert f.domain.contains([0.95, 0.95]) and not g.domain.contains([0.95, 0.95])


def test_mollify_rejects_nonpositive_epsilon():
    with pytest.raises(ValueError):
        mollify(scalar_riccati(), 0.0)


def test_convexity_certifier_accepts_square():
    rep = check_convexity(scalar_riccati(), Sampler(2000, [-3.0], [3.0]))
    assert rep.verdict is Verdict.PASS and rep.samples_tested > 0


def test_convexity_certifier_rejects_sine_reproducibly():
    sampler = Sampler(2000, [-3.0], [3.0], seed=11)
    a = check_convexity(sine(), sampler)
    b = check_convexity(sine(), sampler)
    assert a.verdict is Verdict.FAIL
    assert a.witness["violation"] > 0
    assert a.to_json() == b.to_json()


def test_quasimonotone_certifier():
    sampler = Sampler(500, [-1.0, -1.0], [1.0, 1.0])
    good = linear([[0.0, 1.0], [2.0, 0.0]])
    bad = linear([[0.0, -1.0], [-1.0, 0.0]])
    assert check_quasimonotone(good, sampler).verdict is Verdict.PASS
    rep = check_quasimonotone(bad, sampler)
    assert rep.verdict is Verdict.FAIL and rep.witness["violation"] > 0


def test_quasimonotone_polyhedral_cone():
    cone = OrderCone.polyhedral([[1.0, 0.0], [1.0, 1.0]])
    sampler = Sampler(300, [-1.0, -1.0], [1.0, 1.0])
    # positive multiples of the identity map every face to itself
    assert check_quasimonotone(linear(np.eye(2), cone), sampler).verdict is Verdict.PASS
    rotation = linear([[0.0, -1.0], [1.0, 0.0]], cone)
    assert check_quasimonotone(rotation, sampler).verdict is Verdict.FAIL


def test_one_dimensional_quasimonotone_is_vacuous():
    assert check_quasimonotone(sine(), Sampler(100, [-3.0], [3.0])).verdict is Verdict.PASS


def test_lipschitz_estimate_oracles():
    A = np.array([[1.0, -2.0], [0.5, 3.0]])
    L = lipschitz_estimate(linear(A), 0.0, [-1, -1], [1, 1])
    assert L == pytest.approx(np.linalg.norm(A, 2), rel=1e-8)
    assert lipschitz_estimate(scalar_riccati(), 0.0, [0.0], [2.0]) == pytest.approx(4.0, rel=1e-9)


def test_jacobian_check_catches_wrong_derivative():
    pts = np.linspace(-2, 2, 9)[:, None]
    assert check_jacobian(scalar_riccati(), pts).verdict is Verdict.PASS
    wrong = replace(scalar_riccati(), jacobian=lambda t, x: np.array([[3.0 * x[0]]]))
    assert check_jacobian(wrong, pts).verdict is Verdict.FAIL


def test_domain_audits():
    cone = OrderCone.orthant(2)
    sampler = Sampler(400, [-2.0, -2.0], [2.0, 2.0])
    U = halfspace([1.0, 2.0], 1.0, cone)
    assert check_order_regular(U, cone, sampler).verdict is Verdict.PASS
    inner = Sampler(400, [-2.0, -2.0], [0.5, 0.2])
    assert check_domain_convex(U, inner).verdict is Verdict.PASS
    # mostly outside U: too few usable pairs to say anything
    assert check_domain_convex(U, Sampler(400, [1.0, 1.0], [3.0, 3.0])).verdict is Verdict.INCONCLUSIVE
    # a normal outside the dual cone breaks order regularity
    V = halfspace([1.0, -1.0], 1.0, cone)
    assert check_order_regular(V, cone, sampler).verdict is Verdict.FAIL


def test_time_dependent_field_is_sampled_in_time():
    f = VectorField(lambda t, x: (1 + t) * x * x, OrderCone.orthant(1), autonomous=False,
                    jacobian=lambda t, x: np.array([[2 * (1 + t) * x[0]]]))
    rep = check_convexity(f, Sampler(500, [-2.0], [2.0], t_max=1.0))
    assert rep.verdict is Verdict.PASS


def test_sampler_rejects_bad_box():
    with pytest.raises(ValueError):
        Sampler(10, [1.0], [0.0])
