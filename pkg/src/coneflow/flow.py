"""Maximal solutions, escape times, and numerical checks of flow convexity."""

from __future__ import annotations

import math
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .cone import leq, order_gap
from .field import VectorField
from .integrator import (
    DEFAULT_ATOL,
    DEFAULT_MAX_STEPS,
    DEFAULT_RTOL,
    IntegrationError,
    Status,
    Trajectory,
    integrate,
    solve,
)
from .report import CertReport, Verdict

__all__ = [
    "EscapeTime", "Status", "Trajectory", "IntegrationError", "integrate", "escape_time",
    "in_domain_D", "flow_convexity_check", "domain_convexity_check", "comparison_check",
    "subsuper_convexity_check", "semigroup_check", "DEFAULT_CONE_TOL", "DEFAULT_T_MAX",
]

DEFAULT_CONE_TOL = 1e-7
DEFAULT_T_MAX = 10.0
_STOPPED = (Status.ESCAPED_DOMAIN, Status.STEP_COLLAPSE)


class EscapeTime(NamedTuple):
    theta_lo: float
    theta_hi: float
    status: Status
    trajectory: Trajectory


def _effective_horizon(field: VectorField, t_max: float | None) -> float:
    T = field.horizon if t_max is None else min(field.horizon, t_max)
    if math.isinf(T):
        T = DEFAULT_T_MAX
    return T


def escape_time(field: VectorField, x0, t_max: float | None = None, rtol: float = DEFAULT_RTOL,
                atol=DEFAULT_ATOL, max_steps: int = DEFAULT_MAX_STEPS) -> EscapeTime:
    """Bracket ``theta_f(x0)``.

    Solutions that survive up to ``T = min(horizon, t_max)`` (``t_max``
    defaults to 10 when the horizon is infinite) get the conventional
    bracket ``(T, T)``; a solution escaping exactly at ``T`` is not
    distinguished from a global one.
    """
    T = _effective_horizon(field, t_max)
    traj = solve(field, x0, T, rtol, atol, max_steps, final_status=Status.HORIZON_REACHED)
    if traj.status in _STOPPED:
        lo, hi = traj.theta_bracket
        return EscapeTime(lo, hi, traj.status, traj)
    return EscapeTime(T, T, traj.status, traj)


def in_domain_D(field: VectorField, x0, t: float, rtol: float = DEFAULT_RTOL,
                atol=DEFAULT_ATOL) -> bool:
    """Whether the maximal solution from ``x0`` survives past time ``t``."""
    if t >= field.horizon:
        return False
    if t == 0:
        return field.domain.contains(x0)
    traj = solve(field, x0, t, rtol, atol)
    return traj.status is Status.REACHED_TARGET


def _as_lambdas(lambdas) -> list[float]:
    lams = [float(v) for v in np.atleast_1d(lambdas)]
    if any(not 0.0 <= v <= 1.0 for v in lams):
        raise ValueError("lambda values must lie in [0, 1]")
    return lams


def flow_convexity_check(field: VectorField, x, y, lambdas, t: float, tol: float = DEFAULT_CONE_TOL,
                         rtol: float = DEFAULT_RTOL, atol=DEFAULT_ATOL) -> CertReport:
    """Check that ``D_f(t)`` contains the segment ``[x, y]`` and that
    ``psi(t, z) <= lam psi(t, x) + (1 - lam) psi(t, y)`` on it."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    lams = _as_lambdas(lambdas)
    ends = []
    for p in (x, y):
        tr = integrate(field, p, t, rtol, atol)
        if tr.status is not Status.REACHED_TARGET:
            raise ValueError(f"{p} is not in D_f({t}): its solution escapes at {tr.theta_bracket}")
        ends.append(tr.final)
    psi_x, psi_y = ends
    cone = field.cone
    worst = 0.0
    for k, lam in enumerate(lams):
        z = lam * x + (1 - lam) * y
        tz = integrate(field, z, t, rtol, atol)
        if tz.status is not Status.REACHED_TARGET:
            return CertReport(Verdict.FAIL, k + 1, tol, witness={
                "kind": "domain", "lambda": lam, "z": z, "t": t,
                "theta_bracket": tz.theta_bracket, "violation": t - tz.theta_bracket[1]})
        rhs = lam * psi_x + (1 - lam) * psi_y
        gap = order_gap(tz.final, rhs, cone)
        worst = max(worst, -gap)
        if not leq(tz.final, rhs, cone, tol):
            return CertReport(Verdict.FAIL, k + 1, tol, witness={
                "kind": "inequality", "lambda": lam, "z": z, "t": t, "psi_z": tz.final,
                "combination": rhs, "violation": -gap})
    return CertReport(Verdict.PASS, len(lams), tol, metrics={"max_violation": worst})


def domain_convexity_check(field: VectorField, x, y, lambdas, time_tol: float = 1e-6,
                           t_max: float | None = None, rtol: float = DEFAULT_RTOL,
                           atol=DEFAULT_ATOL) -> CertReport:
    """Check ``theta(z) >= min(theta(x), theta(y))`` along the segment ``[x, y]``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    lams = _as_lambdas(lambdas)
    th_x = escape_time(field, x, t_max, rtol, atol)
    th_y = escape_time(field, y, t_max, rtol, atol)
    floor = min(th_x.theta_lo, th_y.theta_lo)
    thetas = []
    for k, lam in enumerate(lams):
        z = lam * x + (1 - lam) * y
        th_z = escape_time(field, z, t_max, rtol, atol)
        thetas.append(th_z.theta_lo)
        if th_z.theta_lo < floor - time_tol:
            return CertReport(Verdict.FAIL, k + 1, time_tol, witness={
                "lambda": lam, "z": z, "theta_z": th_z.theta_lo, "floor": floor,
                "violation": floor - th_z.theta_lo})
    return CertReport(Verdict.PASS, len(lams), time_tol,
                      metrics={"theta_x": th_x.theta_lo, "theta_y": th_y.theta_lo,
                               "theta_z": thetas, "floor": floor})


def _fd_derivative(curve: Callable, t: float, h: float, t_max: float) -> np.ndarray:
    """Fourth-order finite difference, one-sided near the ends of ``[0, t_max]``."""
    if t - 2 * h >= 0 and t + 2 * h <= t_max:
        return (curve(t - 2 * h) - 8 * curve(t - h) + 8 * curve(t + h) - curve(t + 2 * h)) / (12 * h)
    sign = 1.0 if t - 2 * h < 0 else -1.0
    s = sign * h
    vals = [curve(t + k * s) for k in range(5)]
    return (-25 * vals[0] + 48 * vals[1] - 36 * vals[2] + 16 * vals[3] - 3 * vals[4]) / (12 * s)


def comparison_check(field: VectorField, lower: Callable, upper: Callable, grid: Sequence[float],
                     tol: float = DEFAULT_CONE_TOL, premise_tol: float = 1e-6,
                     fd_step: float | None = None) -> CertReport:
    """Check the comparison principle for two curves on ``grid``.

    The premise ``lower' - f(lower) <= upper' - f(upper)`` (defects by
    finite differences, tolerance ``premise_tol`` relative to the local
    field magnitude) is verified first; if it fails the report is
    Inconclusive.  Otherwise the conclusion ``lower(t) <= upper(t)`` is
    asserted on the grid.
    """
    grid = np.sort(np.asarray(grid, dtype=float))
    if grid[0] < 0:
        raise ValueError("grid times must be nonnegative")
    t_max = float(grid[-1])
    h = fd_step if fd_step is not None else 1e-3 * max(t_max, 1e-3)
    cone = field.cone
    x0 = np.atleast_1d(lower(0.0))
    y0 = np.atleast_1d(upper(0.0))
    if not leq(x0, y0, cone, tol):
        raise ValueError("comparison requires lower(0) <= upper(0)")
    worst_premise = 0.0
    for t in grid:
        lo, up = np.atleast_1d(lower(t)), np.atleast_1d(upper(t))
        for p in (lo, up):
            if not field.domain.contains(p):
                raise ValueError(f"curve leaves the domain at t={t}")
        f_lo, f_up = field(t, lo), field(t, up)
        d_lo = _fd_derivative(lower, t, h, t_max) - f_lo
        d_up = _fd_derivative(upper, t, h, t_max) - f_up
        gap = order_gap(d_lo, d_up, cone)
        # finite-difference error grows with the speed of the curves
        scale = 1.0 + max(cone.norm(f_lo), cone.norm(f_up))
        worst_premise = max(worst_premise, -gap / scale)
        if gap < -premise_tol * scale:
            return CertReport(Verdict.INCONCLUSIVE, 0, tol, notes=[
                f"premise violated at t={t:g}: defect gap {gap:.3e}"],
                metrics={"premise_violation": {"t": t, "defect_lower": d_lo, "defect_upper": d_up}})
    worst = 0.0
    for k, t in enumerate(grid):
        lo, up = np.atleast_1d(lower(t)), np.atleast_1d(upper(t))
        gap = order_gap(lo, up, cone)
        worst = max(worst, -gap)
        if not leq(lo, up, cone, tol):
            return CertReport(Verdict.FAIL, k + 1, tol, witness={
                "t": t, "lower": lo, "upper": up, "violation": -gap})
    return CertReport(Verdict.PASS, len(grid), tol,
                      metrics={"max_violation": worst, "max_premise_violation": worst_premise})


def subsuper_convexity_check(field: VectorField, x1_0, x2_0, lam: float, t: float,
                             tol: float = DEFAULT_CONE_TOL, rtol: float = DEFAULT_RTOL,
                             atol=DEFAULT_ATOL) -> CertReport:
    """Compare the solution from ``lam x1 + (1-lam) x2`` with the same
    combination of the solutions from ``x1`` and ``x2`` at time ``t``."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")
    x1 = np.atleast_1d(np.asarray(x1_0, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2_0, dtype=float))
    x3 = lam * x1 + (1 - lam) * x2
    finals = []
    for p in (x1, x2, x3):
        tr = integrate(field, p, t, rtol, atol)
        if tr.status is not Status.REACHED_TARGET:
            raise IntegrationError(f"solution from {p} escapes before t={t}")
        finals.append(tr.final)
    sub = finals[2]
    sup = lam * finals[0] + (1 - lam) * finals[1]
    gap = order_gap(sub, sup, field.cone)
    if not leq(sub, sup, field.cone, tol):
        return CertReport(Verdict.FAIL, 1, tol, witness={
            "t": t, "x3": sub, "combination": sup, "lambda": lam, "violation": -gap})
    return CertReport(Verdict.PASS, 1, tol, metrics={"gap": gap})


def semigroup_check(field: VectorField, x0, s: float, t: float, tol: float = 1e-7,
                    rtol: float = DEFAULT_RTOL, atol=DEFAULT_ATOL) -> CertReport:
    """``psi(s + t, x0)`` against ``psi(t, psi(s, x0))`` for an autonomous field."""
    if not field.autonomous:
        raise ValueError("semigroup check needs an autonomous field")
    direct = integrate(field, x0, s + t, rtol, atol)
    if direct.status is not Status.REACHED_TARGET:
        raise IntegrationError(f"solution escapes before s+t={s + t}")
    mid = integrate(field, x0, s, rtol, atol).final
    two_step = integrate(field, mid, t, rtol, atol)
    if two_step.status is not Status.REACHED_TARGET:
        raise IntegrationError("restarted solution escapes before t")
    cone = field.cone
    a, b = direct.final, two_step.final
    err = cone.norm(a - b) / (1.0 + cone.norm(a))
    if err > tol:
        return CertReport(Verdict.FAIL, 1, tol, witness={
            "x0": x0, "s": s, "t": t, "direct": a, "composed": b, "violation": err})
    return CertReport(Verdict.PASS, 1, tol, metrics={"relative_error": err})
