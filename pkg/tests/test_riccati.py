import math

import numpy as np
import pytest
import sympy as sp
from scipy.integrate import quad

from coneflow.field import Sampler, check_jacobian
from coneflow.flow import integrate
from coneflow.report import Verdict
from coneflow.riccati import (
    AffineParams,
    JumpMeasure,
    MalformedMeasure,
    as_vector_field,
    check_proposition,
    cir,
    cir_closed_form,
    eval_f,
    jacobian,
    split_form,
    two_factor_example,
    validate,
)


def test_cir_formula_solves_the_ode_symbolically():
    a, b, x, t = sp.symbols("alpha beta x t", real=True)
    g = sp.exp(b * t)
    psi = x * g / (1 + a * x / (2 * b) * (1 - g))
    residual = sp.diff(psi, t) - (a / 2 * psi ** 2 + b * psi)
    assert sp.simplify(residual) == 0
    assert sp.simplify(psi.subs(t, 0) - x) == 0
    psi0 = x / (1 - a / 2 * t * x)
    assert sp.simplify(sp.diff(psi0, t) - a / 2 * psi0 ** 2) == 0


def test_cir_closed_form_against_integrator():
    for alpha, beta, x, t in [(2.0, -1.0, -1.0, 1.0), (0.5, 0.3, -2.0, 2.0), (1.0, 0.0, -0.5, 3.0)]:
        f = as_vector_field(cir(alpha, beta))
        num = integrate(f, [x], t, rtol=1e-12, atol=1e-15).final[0]
        assert num == pytest.approx(cir_closed_form(alpha, beta, x, t), rel=1e-9)


def test_cir_values():
    p = cir(2.0, -1.0)
    assert eval_f(p, [-1.0])[0] == pytest.approx(2.0)
    assert jacobian(p, [-1.0])[0, 0] == pytest.approx(-3.0)
    assert validate(p).verdict is Verdict.PASS
    with pytest.raises(ValueError):
        cir_closed_form(2.0, 0.0, 1.0, 2.0)


def test_atom_example_values():
    # one large atom at 2 with mass 1: f(x) = x^2/2 + (e^{2x} - 1)
    p = AffineParams([1.0], [[0.0]], [0.0], (JumpMeasure(atoms=(([2.0], 1.0),)),))
    assert eval_f(p, [0.0])[0] == 0.0
    assert eval_f(p, [1.0])[0] == pytest.approx(0.5 + math.expm1(2.0), rel=1e-14)


def test_small_atom_is_compensated():
    p = AffineParams([0.0], [[0.0]], [0.0], (JumpMeasure(atoms=(([0.5], 2.0),)),))
    x = 0.7
    assert eval_f(p, [x])[0] == pytest.approx(2.0 * (math.expm1(0.5 * x) - 0.5 * x), rel=1e-14)


def test_split_identity_atoms():
    p = two_factor_example()
    rng = np.random.default_rng(2)
    for x in rng.uniform(-2, 1, size=(50, 2)):
        dagger, large = split_form(p, x)
        np.testing.assert_allclose(dagger + large, eval_f(p, x), rtol=1e-12, atol=1e-12)


def test_jacobian_against_finite_differences():
    f = as_vector_field(two_factor_example())
    pts = np.random.default_rng(0).uniform(-1.5, 0.5, size=(20, 2))
    assert check_jacobian(f, pts).verdict is Verdict.PASS


def test_inadmissible_cross_drift_fails_with_witness():
    p = AffineParams([1.0, 1.0], [[0.0, -0.5], [0.0, 0.0]], [0.0, 0.0])
    rep = validate(p)
    assert rep.verdict is Verdict.FAIL
    assert rep.witness["bullet"] == "cross_drift" and rep.witness["value"] == -0.5
    with pytest.raises(ValueError):
        as_vector_field(p)


def test_negative_alpha_and_killing_fail():
    assert validate(AffineParams([-1.0], [[0.0]], [0.0])).witness["bullet"] == "alpha"
    assert validate(AffineParams([1.0], [[0.0]], [-0.1])).witness["bullet"] == "killing"


def test_small_cross_atoms_consume_drift_margin():
    # a small atom with a positive cross component lowers the effective cross drift
    atom = JumpMeasure(atoms=(([0.1, 0.5], 1.0),))
    ok = AffineParams([1.0, 1.0], [[0.0, 0.6], [0.0, 0.0]], [0.0, 0.0], (atom, JumpMeasure()))
    bad = AffineParams([1.0, 1.0], [[0.0, 0.4], [0.0, 0.0]], [0.0, 0.0], (atom, JumpMeasure()))
    assert validate(ok).verdict is Verdict.PASS
    assert validate(bad).verdict is Verdict.FAIL


def test_malformed_atom_dimension():
    with pytest.raises(MalformedMeasure):
        AffineParams([1.0, 1.0], np.zeros((2, 2)), [0.0, 0.0],
                     (JumpMeasure(atoms=(([1.0], 1.0),)), JumpMeasure()))


def tempered_stable_block(index=0.7, rate=2.0):
    return {"d": 1, "coordinates": [{"alpha": 1.0, "beta": [-1.0], "c": 0.0, "jumps": {
        "density": {"kind": "tempered_stable", "index": index, "rate": rate}}}]}


def tempered_oracle(x, a=0.7, b=2.0, r_max=64.0):
    rho = lambda s: s ** (-1 - a) * math.exp(-b * s)  # noqa: E731
    small, _ = quad(lambda s: (math.expm1(x * s) - x * s) * rho(s), 0, 1, epsabs=1e-14, limit=200)
    large, _ = quad(lambda s: math.expm1(x * s) * rho(s), 1, r_max, epsabs=1e-14, limit=200)
    return 0.5 * x * x - x + small + large


@pytest.mark.parametrize("x", [-1.0, 0.5, 1.5])
def test_density_quadrature_against_quad(x):
    p = AffineParams.from_json(tempered_stable_block())
    assert eval_f(p, [x])[0] == pytest.approx(tempered_oracle(x), rel=1e-8)


def test_density_domain_is_finite_region():
    p = AffineParams.from_json(tempered_stable_block())
    assert math.isinf(eval_f(p, [3.0])[0])
    f = as_vector_field(p)
    assert f.domain.contains([1.0]) and not f.domain.contains([3.0])
    assert validate(p).verdict is Verdict.PASS


def test_nonintegrable_small_jumps_fail():
    block = {"d": 1, "coordinates": [{"alpha": 1.0, "beta": [0.0], "jumps": {
        "density": {"kind": "tempered_stable", "index": 2.1, "rate": 1.0}}}]}
    rep = validate(AffineParams.from_json(block))
    assert rep.verdict is Verdict.FAIL and rep.witness["bullet"] == "small_jump_integrability"


def test_from_json_errors():
    with pytest.raises(ValueError):
        AffineParams.from_json({"d": 2, "coordinates": [{"alpha": 1.0}]})
    with pytest.raises(ValueError):
        AffineParams.from_json({"d": 1, "coordinates": [{"beta": [1.0, 2.0]}]})


def test_proposition_audits():
    sampler_1d = Sampler(2000, [-3.0], [3.0])
    assert check_proposition(cir(1.0, -1.0), sampler_1d).verdict is Verdict.PASS
    rep = check_proposition(two_factor_example(), Sampler(2000, [-2.0, -2.0], [1.0, 1.0]))
    assert rep.verdict is Verdict.PASS and rep.metrics["admissibility"] == "Pass"
