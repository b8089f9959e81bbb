"""Vector fields on ordered spaces and sampled audits of their hypotheses.

The certifiers here never prove anything: a ``Pass`` means that no
violation was found among the sampled points at the stated tolerance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field, replace
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.integrate import quad
from scipy.linalg import eigh_tridiagonal
from scipy.stats import qmc

from .cone import DEFAULT_TOL, DomainSpec, OrderCone, dual_sample, shrink, whole_space
from .report import CertReport, Verdict


@dataclass(frozen=True)
class VectorField:
    """A time-dependent map ``f(t, x)`` defined on ``[0, horizon) x domain``."""

    func: Callable[[float, np.ndarray], np.ndarray]
    cone: OrderCone
    domain: DomainSpec | None = None
    jacobian: Callable[[float, np.ndarray], np.ndarray] | None = None
    horizon: float = math.inf
    autonomous: bool = True
    name: str = "field"

    def __post_init__(self):
        if self.domain is None:
            object.__setattr__(self, "domain", whole_space(self.cone.dimension))
        if self.domain.dimension != self.cone.dimension:
            raise ValueError("domain and cone dimensions differ")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")

    @property
    def dimension(self) -> int:
        return self.cone.dimension

    def __call__(self, t: float, x) -> np.ndarray:
        return np.atleast_1d(np.asarray(self.func(t, np.asarray(x, dtype=float)), dtype=float))

    def jac(self, t: float, x) -> np.ndarray:
        if self.jacobian is None:
            raise ValueError(f"field {self.name!r} has no jacobian")
        d = self.dimension
        return np.asarray(self.jacobian(t, np.asarray(x, dtype=float)), dtype=float).reshape(d, d)

    @property
    def has_jacobian(self) -> bool:
        return self.jacobian is not None


@dataclass(frozen=True)
class Sampler:
    """Low-discrepancy sampling of a box ``[lower, upper]`` (and of times in ``[0, t_max]``)."""

    count: int
    lower: np.ndarray
    upper: np.ndarray
    seed: int = 0
    t_max: float = 0.0

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        if self.count < 1:
            raise ValueError("count must be at least 1")
        if lo.shape != hi.shape or np.any(hi < lo):
            raise ValueError("region must be a box with lower <= upper")

    def unit(self, dim: int) -> np.ndarray:
        return qmc.Halton(d=dim, scramble=True, seed=self.seed).random(self.count)

    def scale(self, u: np.ndarray) -> np.ndarray:
        return self.lower + (self.upper - self.lower) * u


def _times(sampler: Sampler, field: VectorField, u: np.ndarray) -> np.ndarray:
    if field.autonomous:
        return np.zeros(len(u))
    t_max = sampler.t_max
    if not math.isinf(field.horizon):
        t_max = min(t_max, field.horizon * (1 - 1e-12))
    return u * t_max


def _gap(values, cone: OrderCone, tol: float):
    """Return (ok, worst generator index, violation) for ``values`` in C up to tol."""
    vals = cone.functional_values(values)
    j = int(np.argmin(vals))
    slack = tol * (1.0 + cone.norm(values))
    return bool(vals[j] >= -slack), j, float(-vals[j])


def check_convexity(field: VectorField, sampler: Sampler, tol: float = DEFAULT_TOL) -> CertReport:
    """Audit ``f(t, .)`` for cone convexity at sampled ``(t, x, y, lambda)``.

    Checks the chord inequality and, when a jacobian is present, the
    gradient inequality ``f'(t,x)(y - x) <= f(t,y) - f(t,x)``.
    """
    d = field.dimension
    cone = field.cone
    u = sampler.unit(2 * d + 2)
    xs = sampler.scale(u[:, :d])
    ys = sampler.scale(u[:, d:2 * d])
    lams = u[:, 2 * d]
    ts = _times(sampler, field, u[:, 2 * d + 1])
    tested = skipped = 0
    worst = 0.0
    for i in range(sampler.count):
        x, y, lam, t = xs[i], ys[i], float(lams[i]), float(ts[i])
        if not (field.domain.contains(x) and field.domain.contains(y)):
            skipped += 1
            continue
        z = lam * x + (1 - lam) * y
        fx, fy, fz = field(t, x), field(t, y), field(t, z)
        ok, j, viol = _gap(lam * fx + (1 - lam) * fy - fz, cone, tol)
        worst = max(worst, viol)
        if not ok:
            return CertReport(
                Verdict.FAIL, tested + 1, tol,
                witness={"mode": "chord", "sample": i, "t": t, "x": x, "y": y, "lambda": lam,
                         "functional": cone.dual_generators[j], "violation": viol},
                skipped=skipped,
            )
        if field.has_jacobian:
            ok, j, viol = _gap(fy - fx - field.jac(t, x) @ (y - x), cone, tol)
            worst = max(worst, viol)
            if not ok:
                return CertReport(
                    Verdict.FAIL, tested + 1, tol,
                    witness={"mode": "gradient", "sample": i, "t": t, "x": x, "y": y,
                             "functional": cone.dual_generators[j], "violation": viol},
                    skipped=skipped,
                )
        tested += 1
    verdict = Verdict.INCONCLUSIVE if skipped > 0.5 * sampler.count else Verdict.PASS
    return CertReport(verdict, tested, tol, skipped=skipped, metrics={"max_violation": worst})


def _face_rays(cone: OrderCone, functional: np.ndarray) -> np.ndarray:
    rays = cone.extreme_rays
    vals = rays @ functional
    return rays[np.abs(vals) <= 1e-12 * (1.0 + np.abs(functional).sum())]


def check_quasimonotone(field: VectorField, sampler: Sampler, tol: float = DEFAULT_TOL,
                        extra_functionals: int = 0) -> CertReport:
    """Audit quasi-monotonicity on pairs ``x <= x + h`` with ``l(h) = 0``.

    ``l`` cycles through :func:`dual_sample`; ``h`` is a nonnegative
    combination of the extreme rays of ``C`` annihilated by ``l``, so that
    ``l(h) = 0`` holds by construction.  When ``l`` annihilates no ray the
    condition is vacuous and ``h = 0`` is used.  For polyhedral cones,
    checking the dual generators suffices; extra functionals only add
    coverage.
    """
    d = field.dimension
    cone = field.cone
    functionals = dual_sample(cone, cone.dual_generators.shape[0] + extra_functionals, sampler.seed)
    faces = [_face_rays(cone, l) for l in functionals]
    n_rays = cone.extreme_rays.shape[0]
    u = sampler.unit(d + n_rays + 1)
    xs = sampler.scale(u[:, :d])
    coeffs = u[:, d:d + n_rays]
    ts = _times(sampler, field, u[:, -1])
    step = 0.5 * float(np.max(sampler.upper - sampler.lower)) or 1.0
    tested = skipped = 0
    pairs = 0
    modes = {"definition": Verdict.PASS}
    if field.has_jacobian:
        modes["jacobian"] = Verdict.PASS
    witness = None
    worst = 0.0
    for i in range(sampler.count):
        k = i % len(functionals)
        l, face = functionals[k], faces[k]
        x, t = xs[i], float(ts[i])
        h = step * coeffs[i, :len(face)] @ face if len(face) else np.zeros(d)
        y = x + h
        if not (field.domain.contains(x) and field.domain.contains(y)):
            skipped += 1
            continue
        if len(face):
            pairs += 1
        diff = float(l @ (field(t, y) - field(t, x)))
        worst = max(worst, -diff)
        if diff < -tol * (1.0 + abs(diff)):
            modes["definition"] = Verdict.FAIL
            witness = {"mode": "definition", "sample": i, "t": t, "x": x, "h": h,
                       "functional": l, "violation": -diff}
            tested += 1
            break
        if field.has_jacobian:
            dj = float(l @ (field.jac(t, x) @ h))
            worst = max(worst, -dj)
            if dj < -tol * (1.0 + abs(dj)):
                modes["jacobian"] = Verdict.FAIL
                witness = {"mode": "jacobian", "sample": i, "t": t, "x": x, "h": h,
                           "functional": l, "violation": -dj}
                tested += 1
                break
        tested += 1
    metrics = {"modes": {m: v.value for m, v in modes.items()}, "nontrivial_pairs": pairs,
               "max_violation": worst}
    if witness is not None:
        return CertReport(Verdict.FAIL, tested, tol, witness=witness, skipped=skipped, metrics=metrics)
    verdict = Verdict.INCONCLUSIVE if skipped > 0.5 * sampler.count else Verdict.PASS
    return CertReport(verdict, tested, tol, skipped=skipped, metrics=metrics)


def _box_grid(lower, upper, nodes: int) -> np.ndarray:
    axes = [np.linspace(a, b, nodes) for a, b in zip(lower, upper)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def default_nodes(dimension: int, budget: int = 20_000) -> int:
    return int(min(201, max(3, round(budget ** (1.0 / dimension)))))


def lipschitz_estimate(field: VectorField, t: float, lower, upper, nodes: int | None = None,
                       time_nodes: int = 5, pairs: int = 2000, seed: int = 0) -> float:
    """Sampled lower estimate of the local Lipschitz constant on ``[0, t] x K``.

    ``K = [lower, upper]`` is a box inside the domain.  With a jacobian the
    estimate is the largest induced operator norm of ``f'`` on a grid;
    otherwise the largest difference quotient over neighbouring and random
    grid pairs.
    """
    lo = np.atleast_1d(np.asarray(lower, dtype=float))
    hi = np.atleast_1d(np.asarray(upper, dtype=float))
    d = field.dimension
    if lo.shape != (d,) or hi.shape != (d,) or np.any(hi < lo):
        raise ValueError("K must be a box [lower, upper] in the field's dimension")
    if t < 0 or t >= field.horizon:
        raise ValueError("t must lie in [0, horizon)")
    nodes = nodes or default_nodes(d)
    grid = _box_grid(lo, hi, nodes)
    for p in grid:
        if not field.domain.contains(p):
            raise ValueError(f"K is not inside the domain: {p} is outside")
    taus = [0.0] if field.autonomous else np.linspace(0.0, t, max(time_nodes, 2))
    cone = field.cone
    best = 0.0
    if field.has_jacobian:
        for tau in taus:
            jacs = np.array([field.jac(tau, p) for p in grid])
            best = max(best, float(np.max(cone.operator_norms(jacs))))
        return best
    rng = np.random.default_rng(seed)
    spacing = (hi - lo) / max(nodes - 1, 1)
    for tau in taus:
        vals = np.array([field(tau, p) for p in grid])
        shape = (nodes,) * d
        cube = vals.reshape(*shape, d)
        for ax in range(d):
            if spacing[ax] == 0:
                continue
            diffs = np.diff(cube, axis=ax).reshape(-1, d)
            step_vec = np.zeros(d)
            step_vec[ax] = spacing[ax]
            denom = cone.norm(step_vec)
            best = max(best, max(cone.norm(v) for v in diffs) / denom)
        idx = rng.integers(len(grid), size=(pairs, 2))
        for a, b in idx:
            if a == b:
                continue
            dist = cone.norm(grid[b] - grid[a])
            if dist > 0:
                best = max(best, cone.norm(vals[b] - vals[a]) / dist)
    return best


def check_jacobian(field: VectorField, points, t: float = 0.0, rel: float = 1e-5) -> CertReport:
    """Compare the supplied jacobian with central finite differences."""
    worst = 0.0
    n = 0
    for p in np.atleast_2d(points):
        J = field.jac(t, p)
        fd = np.empty_like(J)
        for k in range(field.dimension):
            h = 1e-6 * max(1.0, abs(p[k]))
            e = np.zeros_like(p)
            e[k] = h
            fd[:, k] = (field(t, p + e) - field(t, p - e)) / (2 * h)
        err = float(np.max(np.abs(fd - J)) / max(1.0, float(np.max(np.abs(J)))))
        worst = max(worst, err)
        n += 1
        if err > rel:
            return CertReport(Verdict.FAIL, n, rel, witness={"t": t, "x": p, "violation": err})
    return CertReport(Verdict.PASS, n, rel, metrics={"max_relative_error": worst})


# --- mollification -------------------------------------------------------------


def _bump(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = np.abs(s) < 1
    out[inside] = np.exp(-1.0 / (1.0 - s[inside] ** 2))
    return out


@lru_cache(maxsize=None)
def bump_normalizer() -> float:
    """Integral of ``exp(-1/(1-s^2))`` over ``(-1, 1)``."""
    val, _ = quad(lambda s: float(_bump(s)), -1.0, 1.0, epsabs=1e-15, epsrel=1e-13, limit=200)
    return val


@lru_cache(maxsize=None)
def kernel_rule(nodes: int = 15) -> tuple[np.ndarray, np.ndarray]:
    """Gauss rule for the weight ``rho_1(s) = c exp(-1/(1-s^2))`` on ``(-1, 1)``.

    The three-term recurrence is obtained by the Stieltjes procedure on a
    fine discretization of ``rho_1`` (Gauss-Legendre in ``s = tanh(u)``),
    and nodes/weights by Golub-Welsch.  The rule integrates polynomials of
    degree ``2 * nodes - 1`` against ``rho_1`` exactly.
    """
    if nodes < 3:
        raise ValueError("at least 3 quadrature nodes are required")
    u, w = np.polynomial.legendre.leggauss(400)
    span = 3.0
    u, w = span * u, span * w
    s = np.tanh(u)
    ws = w / np.cosh(u) ** 2 * np.exp(-np.cosh(u) ** 2) / bump_normalizer()
    a = np.zeros(nodes)
    b = np.zeros(nodes)
    p_prev = np.zeros_like(s)
    p = np.ones_like(s)
    nrm_prev, nrm = 1.0, float(ws @ (p * p))
    for k in range(nodes):
        a[k] = float(ws @ (s * p * p)) / nrm
        if k > 0:
            b[k] = nrm / nrm_prev
        p_prev, p = p, (s - a[k]) * p - b[k] * p_prev
        nrm_prev, nrm = nrm, float(ws @ (p * p))
    x, vecs = eigh_tridiagonal(a, np.sqrt(b[1:]))
    weights = ws.sum() * vecs[0] ** 2
    # exact symmetry keeps the odd moments at zero
    x = 0.5 * (x - x[::-1])
    weights = 0.5 * (weights + weights[::-1])
    return x, weights


def kernel_tensor(dimension: int, nodes: int = 15) -> tuple[np.ndarray, np.ndarray]:
    s, w = kernel_rule(nodes)
    mesh = np.meshgrid(*([s] * dimension), indexing="ij")
    eta = np.stack([m.ravel() for m in mesh], axis=1)
    wmesh = np.meshgrid(*([w] * dimension), indexing="ij")
    weights = np.prod(np.stack([m.ravel() for m in wmesh], axis=1), axis=1)
    return eta, weights


def mollify(field: VectorField, epsilon: float, nodes: int = 15) -> VectorField:
    """Convolve ``f(t, .)`` with the product bump kernel scaled by ``epsilon``.

    The kernel lives on the unit max-norm ball, so the returned field is
    defined on ``U`` shrunk by the radius of that ball in the cone norm,
    which keeps every kernel evaluation inside ``U``.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    d = field.dimension
    eta, weights = kernel_tensor(d, nodes)
    offsets = epsilon * eta
    reach = epsilon * field.cone.norm(np.ones(d))
    domain = field.domain if field.domain.is_whole_space else shrink(field.domain, reach)
    base = field

    def func(t, x):
        acc = np.zeros(d)
        for w, off in zip(weights, offsets):
            acc += w * base(t, x - off)
        return acc

    jac = None
    if field.has_jacobian:
        def jac(t, x):
            acc = np.zeros((d, d))
            for w, off in zip(weights, offsets):
                acc += w * base.jac(t, x - off)
            return acc

    return replace(field, func=func, jacobian=jac, domain=domain,
                   name=f"{field.name}~eps={epsilon:g}")


# --- built-in fields -----------------------------------------------------------


def scalar_riccati(cone: OrderCone | None = None) -> VectorField:
    """``f(x) = x^2`` on the real line."""
    cone = cone or OrderCone.orthant(1)
    return VectorField(lambda t, x: x * x, cone, jacobian=lambda t, x: np.array([[2.0 * x[0]]]),
                       name="scalar-riccati")


def sine(cone: OrderCone | None = None) -> VectorField:
    cone = cone or OrderCone.orthant(1)
    return VectorField(lambda t, x: np.sin(x), cone, jacobian=lambda t, x: np.array([[math.cos(x[0])]]),
                       name="sin")


def linear(matrix, cone: OrderCone | None = None) -> VectorField:
    A = np.atleast_2d(np.asarray(matrix, dtype=float))
    if A.shape[0] != A.shape[1]:
        raise ValueError("linear field needs a square matrix")
    cone = cone or OrderCone.orthant(A.shape[0])
    if cone.dimension != A.shape[0]:
        raise ValueError("matrix and cone dimensions differ")
    return VectorField(lambda t, x: A @ x, cone, jacobian=lambda t, x: A, name="linear")


def constant(value, cone: OrderCone | None = None, domain: DomainSpec | None = None) -> VectorField:
    c = np.atleast_1d(np.asarray(value, dtype=float))
    cone = cone or OrderCone.orthant(c.size)
    if cone.dimension != c.size:
        raise ValueError("value and cone dimensions differ")
    zero = np.zeros((c.size, c.size))
    return VectorField(lambda t, x: c.copy(), cone, domain=domain, jacobian=lambda t, x: zero,
                       name="constant")


# --- domain audits ---------------------------------------------------------------


def check_order_regular(domain: DomainSpec, cone: OrderCone, sampler: Sampler) -> CertReport:
    """Spot-check ``x in U, y <= x  =>  y in U`` with ``y = x - h``, ``h`` in ``C``."""
    d = cone.dimension
    rays = cone.extreme_rays
    u = sampler.unit(d + rays.shape[0])
    xs = sampler.scale(u[:, :d])
    step = float(np.max(sampler.upper - sampler.lower)) or 1.0
    tested = skipped = 0
    for i, x in enumerate(xs):
        if not domain.contains(x):
            skipped += 1
            continue
        y = x - step * (u[i, d:] @ rays)
        tested += 1
        if not domain.contains(y):
            return CertReport(Verdict.FAIL, tested, 0.0, skipped=skipped,
                              witness={"x": x, "y": y, "violation": 1.0})
    verdict = Verdict.INCONCLUSIVE if skipped > 0.5 * sampler.count else Verdict.PASS
    return CertReport(verdict, tested, 0.0, skipped=skipped)


def check_domain_convex(domain: DomainSpec, sampler: Sampler) -> CertReport:
    """Spot-check that midpoints of sampled pairs in ``U`` stay in ``U``."""
    d = domain.dimension
    u = sampler.unit(2 * d)
    xs, ys = sampler.scale(u[:, :d]), sampler.scale(u[:, d:])
    tested = skipped = 0
    for x, y in zip(xs, ys):
        if not (domain.contains(x) and domain.contains(y)):
            skipped += 1
            continue
        tested += 1
        if not domain.contains(0.5 * (x + y)):
            return CertReport(Verdict.FAIL, tested, 0.0, skipped=skipped,
                              witness={"x": x, "y": y, "violation": 1.0})
    verdict = Verdict.INCONCLUSIVE if skipped > 0.5 * sampler.count else Verdict.PASS
    return CertReport(verdict, tested, 0.0, skipped=skipped)
