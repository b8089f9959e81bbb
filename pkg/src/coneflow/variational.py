"""The linearized flow along a trajectory, its growth bound, and the sandwich and
explicit norm bounds it implies for convex quasi-monotone fields."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .cone import DomainSpec, OrderCone, leq, normality_constant, order_gap
from .field import VectorField, lipschitz_estimate
from .flow import DEFAULT_CONE_TOL
from .integrator import DEFAULT_ATOL, DEFAULT_RTOL, IntegrationError, Status, Trajectory, integrate
from .report import CertReport, Verdict


@dataclass
class LinearFlowResult:
    """``w`` solving ``w' = f'(t, psi(t, x)) w``, ``w(0) = direction``, on ``grid``.

    ``bound_curve`` is ``||direction|| exp(int_0^t ||f'(s, psi(s, x))|| ds)``.
    """

    base_trajectory: Trajectory
    direction: np.ndarray
    grid: np.ndarray
    values: np.ndarray
    bound_curve: np.ndarray
    augmented: Trajectory

    @property
    def final(self) -> np.ndarray:
        return self.values[-1]

    def bound_ratio(self) -> float:
        """Largest ``||w(t)|| / bound(t)`` over the grid (0 when the direction is 0)."""
        cone = self.base_trajectory.field.cone
        worst = 0.0
        for w, b in zip(self.values, self.bound_curve):
            n = cone.norm(w)
            if b > 0:
                worst = max(worst, n / b)
            elif n > 0:
                return math.inf
        return worst

    def bound_holds(self, rel: float = 1e-7) -> bool:
        return self.bound_ratio() <= 1.0 + rel


def _augmented_field(field: VectorField) -> VectorField:
    d = field.dimension
    base_domain = field.domain

    def func(t, z):
        x, w = z[:d], z[d:]
        return np.concatenate([field(t, x), field.jac(t, x) @ w])

    domain = DomainSpec("augmented", 2 * d, lambda z: base_domain.contains(z[:d]),
                        lambda z: base_domain.margin(z[:d]))
    cone = OrderCone.orthant(2 * d, field.cone.norm_name)
    return VectorField(func, cone, domain=domain, horizon=field.horizon,
                       autonomous=field.autonomous, name=f"{field.name}+variational")


def _project(traj: Trajectory, field: VectorField, sl: slice) -> Trajectory:
    return Trajectory(traj.initial[sl], field, traj.times, traj.states[:, sl], traj.coeffs[:, sl, :],
                      traj.t_end, traj.status, traj.theta_bracket, traj.stats)


def _simpson_norm(field: VectorField, base: Trajectory, a: float, b: float) -> float:
    if b <= a:
        return 0.0
    m = 0.5 * (a + b)
    op = field.cone.operator_norm
    return (b - a) / 6.0 * (op(field.jac(a, base(a))) + 4.0 * op(field.jac(m, base(m)))
                            + op(field.jac(b, base(b))))


def variational_solve(field: VectorField, x0, direction, t: float, grid=None, rtol: float = DEFAULT_RTOL,
                      atol: float = DEFAULT_ATOL, grid_points: int = 21) -> LinearFlowResult:
    """Co-integrate the trajectory from ``x0`` and its variational equation.

    Both share one step sequence.  The error weights of the ``w`` block scale
    with ``||direction||``, so the step sequence does not depend on the size
    of ``direction`` and ``w`` is linear in it up to rounding.
    """
    if not field.has_jacobian:
        raise ValueError("variational_solve needs a field with a jacobian")
    d = field.dimension
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    y = np.atleast_1d(np.asarray(direction, dtype=float))
    if x0.shape != (d,) or y.shape != (d,):
        raise ValueError(f"x0 and direction must have length {d}")
    aug = _augmented_field(field)
    ysize = float(np.max(np.abs(y)))
    atol_vec = np.concatenate([np.full(d, atol), np.full(d, atol * ysize if ysize > 0 else atol)])
    traj = integrate(aug, np.concatenate([x0, y]), t, rtol, atol_vec)
    if traj.status is not Status.REACHED_TARGET:
        raise IntegrationError(f"trajectory from {x0} escapes before t={t}: {traj.theta_bracket}")
    base = _project(traj, field, slice(0, d))
    wtraj = _project(traj, field, slice(d, 2 * d))
    grid = np.linspace(0.0, t, grid_points) if grid is None else np.asarray(grid, dtype=float)
    if np.any(grid < 0) or np.any(grid > t):
        raise ValueError("grid must lie in [0, t]")
    steps = traj.step_times()
    cumulative = np.concatenate([[0.0], np.cumsum(
        [_simpson_norm(field, base, a, b) for a, b in zip(steps[:-1], steps[1:])])])
    ynorm = field.cone.norm(y)
    bound = np.empty(len(grid))
    for k, tau in enumerate(grid):
        i = max(int(np.searchsorted(steps, tau, side="right")) - 1, 0)
        i = min(i, len(steps) - 1)
        integral = cumulative[i] + _simpson_norm(field, base, steps[i], tau)
        bound[k] = ynorm * math.exp(integral)
    return LinearFlowResult(base, y, grid, wtraj.sample(grid), bound, traj)


def sandwich_check(field: VectorField, x, y, t: float, tol: float = DEFAULT_CONE_TOL,
                   rtol: float = DEFAULT_RTOL, atol: float = DEFAULT_ATOL,
                   bound_rel: float = 1e-7) -> CertReport:
    """Check ``w^x_{y-x}(t) <= psi(t,y) - psi(t,x) <= w^y_{y-x}(t)``.

    Both linearized solutions must also respect their exponential growth
    bound up to ``bound_rel``.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    h = y - x
    low = variational_solve(field, x, h, t, rtol=rtol, atol=atol, grid=[t])
    high = variational_solve(field, y, h, t, rtol=rtol, atol=atol, grid=[t])
    middle = high.base_trajectory.final - low.base_trajectory.final
    lower, upper = low.final, high.final
    cone = field.cone
    metrics = {"lower": lower, "middle": middle, "upper": upper,
               "bound_ratio": max(low.bound_ratio(), high.bound_ratio())}
    for side, a, b in (("lower", lower, middle), ("upper", middle, upper)):
        if not leq(a, b, cone, tol):
            return CertReport(Verdict.FAIL, 1, tol, metrics=metrics, witness={
                "side": side, "x": x, "y": y, "t": t, "violation": -order_gap(a, b, cone)})
    if metrics["bound_ratio"] > 1.0 + bound_rel:
        return CertReport(Verdict.FAIL, 1, tol, metrics=metrics, witness={
            "side": "growth_bound", "x": x, "y": y, "t": t,
            "violation": metrics["bound_ratio"] - 1.0})
    return CertReport(Verdict.PASS, 1, tol, metrics=metrics)


def box_radius(cone: OrderCone, lower, upper) -> float:
    """``sup ||xi||`` over the box, attained at a corner."""
    corners = itertools.product(*zip(np.atleast_1d(lower), np.atleast_1d(upper)))
    return max(cone.norm(np.array(c, dtype=float)) for c in corners)


def _inside_box(traj: Trajectory, lower, upper, samples: int = 201, slack: float = 1e-12) -> bool:
    ts = np.union1d(np.linspace(0.0, traj.t_end, samples), traj.step_times())
    pts = traj.sample(ts)
    span = np.maximum(np.abs(lower), np.abs(upper)) + 1.0
    return bool(np.all(pts >= lower - slack * span) and np.all(pts <= upper + slack * span))


def explicit_bound_check(field: VectorField, x, y, lam: float, t: float, lower, upper,
                         tol: float = DEFAULT_CONE_TOL, rtol: float = DEFAULT_RTOL,
                         atol: float = DEFAULT_ATOL, lipschitz_nodes: int | None = None) -> CertReport:
    """Check ``||psi(t, z)|| <= R_K (1 + mu_C exp(L t))`` for ``z`` on ``[x, y]``.

    ``K = [lower, upper]`` must contain both trajectories on ``[0, t]``.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")
    lower = np.atleast_1d(np.asarray(lower, dtype=float))
    upper = np.atleast_1d(np.asarray(upper, dtype=float))
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    for p in (x, y):
        tr = integrate(field, p, t, rtol, atol)
        if tr.status is not Status.REACHED_TARGET or not _inside_box(tr, lower, upper):
            raise ValueError(f"trajectory from {p} leaves K on [0, {t}]")
    cone = field.cone
    radius = box_radius(cone, lower, upper)
    mu = normality_constant(cone)
    L = lipschitz_estimate(field, t, lower, upper, nodes=lipschitz_nodes)
    bound = radius * (1.0 + mu * math.exp(L * t))
    z = lam * x + (1 - lam) * y
    tz = integrate(field, z, t, rtol, atol)
    if tz.status is not Status.REACHED_TARGET:
        raise IntegrationError(f"solution from {z} escapes before t={t}")
    value = cone.norm(tz.final)
    metrics = {"R_K": radius, "mu_C": mu, "L": L, "bound": bound, "norm_psi_z": value}
    if value > bound + tol:
        return CertReport(Verdict.FAIL, 1, tol, metrics=metrics,
                          witness={"z": z, "t": t, "violation": value - bound})
    return CertReport(Verdict.PASS, 1, tol, metrics=metrics)
