"""Adaptive Dormand-Prince 5(4) integration with dense output and escape detection."""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from .field import VectorField

EPS = np.finfo(float).eps
DEFAULT_RTOL = 1e-9
DEFAULT_ATOL = 1e-12
DEFAULT_MAX_STEPS = 200_000
BLOWUP_NORM = 1e150

# Dormand-Prince 5(4) tableau, error weights and the quartic dense-output matrix.
C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0])
A = np.array([
    [0, 0, 0, 0, 0],
    [1 / 5, 0, 0, 0, 0],
    [3 / 40, 9 / 40, 0, 0, 0],
    [44 / 45, -56 / 15, 32 / 9, 0, 0],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729, 0],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
])
B = np.array([35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
E = np.array([-71 / 57600, 0, 71 / 16695, -71 / 1920, 17253 / 339200, -22 / 525, 1 / 40])
P = np.array([
    [1, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0, 0, 0, 0],
    [0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 5.0


class IntegrationError(RuntimeError):
    pass


class Status(str, enum.Enum):
    REACHED_TARGET = "ReachedTarget"
    ESCAPED_DOMAIN = "EscapedDomain"
    HORIZON_REACHED = "HorizonReached"
    STEP_COLLAPSE = "StepCollapse"


@dataclass
class Stats:
    accepted: int = 0
    rejected: int = 0
    rhs_evaluations: int = 0


@dataclass
class Trajectory:
    """Maximal-solution segment with a piecewise quartic interpolant.

    The interpolant covers ``[0, t_end]``.  For escaping solutions
    ``theta_bracket = (lo, hi)`` encloses the escape time and
    ``t_end == lo``.
    """

    initial: np.ndarray
    field: VectorField
    times: np.ndarray
    states: np.ndarray
    coeffs: np.ndarray
    t_end: float
    status: Status
    theta_bracket: tuple[float, float] | None = None
    stats: Stats = dc_field(default_factory=Stats)

    @property
    def final(self) -> np.ndarray:
        return self(self.t_end)

    def _locate(self, t: float) -> tuple[int, float]:
        if t < 0 or t > self.t_end * (1 + 4 * EPS) + 1e-300:
            raise ValueError(f"t={t} outside the solution interval [0, {self.t_end}]")
        i = int(np.searchsorted(self.times, t, side="right")) - 1
        i = min(max(i, 0), len(self.coeffs) - 1)
        h = self.times[i + 1] - self.times[i]
        return i, (t - self.times[i]) / h

    def __call__(self, t):
        if np.ndim(t) > 0:
            return np.array([self(float(s)) for s in np.asarray(t, dtype=float)])
        t = float(t)
        hit = np.searchsorted(self.times, t)
        if hit < len(self.times) and self.times[hit] == t:
            return self.states[hit].copy()
        i, x = self._locate(t)
        h = self.times[i + 1] - self.times[i]
        powers = np.array([x, x * x, x ** 3, x ** 4])
        return self.states[i] + h * (self.coeffs[i] @ powers)

    def derivative(self, t: float) -> np.ndarray:
        i, x = self._locate(float(t))
        return self.coeffs[i] @ np.array([1.0, 2 * x, 3 * x * x, 4 * x ** 3])

    def sample(self, grid) -> np.ndarray:
        return self(np.asarray(grid, dtype=float))

    def step_times(self) -> np.ndarray:
        return self.times[self.times <= self.t_end]

    def to_csv(self, path, grid=None) -> Path:
        """Write ``t,x_1,...,x_d`` rows for accepted steps plus ``grid`` samples."""
        ts = set(float(t) for t in self.step_times())
        if grid is not None:
            ts.update(float(t) for t in np.asarray(grid, dtype=float) if 0 <= t <= self.t_end)
        path = Path(path)
        d = self.initial.size
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t"] + [f"x_{k + 1}" for k in range(d)])
            for t in sorted(ts):
                writer.writerow([repr(t)] + [repr(float(v)) for v in self(t)])
        return path


def _rms(v: np.ndarray) -> float:
    return math.sqrt(float(np.dot(v, v)) / v.size)


def _initial_step(fun, t0, y0, f0, rtol, atol, t_span) -> float:
    scale = atol + rtol * np.abs(y0)
    d0, d1 = _rms(y0 / scale), _rms(f0 / scale)
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, t_span)
    f1 = fun(t0 + h0, y0 + h0 * f0)
    if not np.all(np.isfinite(f1)):
        return h0 * 1e-3
    d2 = _rms((f1 - f0) / scale) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1 / 5)
    return min(100 * h0, h1, t_span)


def _blowup_bracket(field: VectorField, times, states, h_last: float) -> tuple[float, float]:
    """Extrapolate the blow-up time from the last two accepted points.

    Assumes a power law ``||x(t)|| ~ A (theta - t)^(-g)``; the ratio
    ``q = ||x|| / (d/dt ||x||)`` is then linear in ``t`` with slope
    ``-1/g`` and vanishes at ``theta``.
    """
    cone = field.cone
    qs = []
    for t, y in zip(times[-2:], states[-2:]):
        f = field(t, y)
        n = cone.norm(y)
        nf = cone.norm(f)
        if not (np.isfinite(nf) and nf > 0 and n > 0):
            qs.append(math.nan)
            continue
        delta = 1e-7 * n / nf
        dn = (cone.norm(y + delta * f) - cone.norm(y - delta * f)) / (2 * delta)
        qs.append(n / dn if dn > 0 else math.nan)
    t_last = float(times[-1])
    remaining = math.nan
    if len(qs) == 2 and all(np.isfinite(qs)) and qs[0] > qs[1] > 0:
        g = (times[-1] - times[-2]) / (qs[0] - qs[1])
        remaining = g * qs[1]
    elif np.isfinite(qs[-1]) and qs[-1] > 0:
        remaining = qs[-1]
    if not np.isfinite(remaining) or remaining <= 0:
        remaining = h_last
    return t_last, t_last + max(2.0 * remaining, h_last)


def solve(field: VectorField, x0, t_end: float, rtol: float = DEFAULT_RTOL, atol=DEFAULT_ATOL,
          max_steps: int = DEFAULT_MAX_STEPS, escape_margin: float = 1e-6,
          final_status: Status = Status.REACHED_TARGET) -> Trajectory:
    """Integrate from ``x0`` at time 0 towards ``t_end`` or the first escape.

    ``atol`` may be a per-component array.
    """
    y = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    if y.shape != (field.dimension,):
        raise ValueError(f"x0 must have length {field.dimension}")
    if not field.domain.contains(y):
        raise ValueError(f"x0={y} lies outside the domain")
    if t_end < 0:
        raise ValueError("t_end must be nonnegative")
    atol = np.broadcast_to(np.asarray(atol, dtype=float), y.shape)
    stats = Stats()

    def fun(t, x):
        stats.rhs_evaluations += 1
        return field(t, x)

    times = [0.0]
    states = [y.copy()]
    coeffs: list[np.ndarray] = []

    def result(status, t_stop, bracket=None):
        if not coeffs:
            # zero-length solution; a flat segment keeps the interpolant valid
            coeffs.append(np.zeros((y.size, 4)))
            times.append(max(t_stop, 1e-300))
            states.append(states[-1].copy())
        return Trajectory(states[0].copy(), field, np.array(times), np.array(states),
                          np.array(coeffs), float(t_stop), status, bracket, stats)

    if t_end == 0:
        return result(final_status, 0.0)
    with np.errstate(over="ignore", invalid="ignore"):
        return _march(field, fun, y, t_end, rtol, atol, max_steps, escape_margin, final_status,
                      stats, times, states, coeffs, result)


def _march(field, fun, y, t_end, rtol, atol, max_steps, escape_margin, final_status, stats,
           times, states, coeffs, result):

    t = 0.0
    f = fun(t, y)
    if not np.all(np.isfinite(f)):
        raise ValueError("field is not finite at x0")
    h = _initial_step(fun, t, y, f, rtol, atol, t_end)
    K = np.empty((7, y.size))
    while True:
        if stats.accepted >= max_steps:
            raise IntegrationError(f"max_steps={max_steps} exceeded at t={t}")
        h_min = 1e3 * EPS * max(abs(t), 1e-3)
        if h < h_min:
            return _collapse(field, times, states, y, t, h, escape_margin, rtol, result)
        clipped = t + h >= t_end
        step = t_end - t if clipped else h
        K[0] = f
        ok = True
        for s in range(1, 6):
            K[s] = fun(t + C[s] * step, y + step * (A[s, :s] @ K[:s]))
            if not np.isfinite(K[s]).all():
                ok = False
                break
        if ok:
            y_new = y + step * (B @ K[:6])
            f_new = fun(t + step, y_new)
            ok = bool(np.isfinite(y_new).all() and np.isfinite(f_new).all())
        if not ok:
            stats.rejected += 1
            h = 0.25 * step
            continue
        K[6] = f_new
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        err = _rms(step * (E @ K) / scale)
        if err > 1.0:
            stats.rejected += 1
            h = step * max(MIN_FACTOR, SAFETY * err ** -0.2)
            continue
        t_new = t_end if clipped else t + step
        stats.accepted += 1
        coeffs.append(K.T @ P)
        times.append(t_new)
        states.append(y_new.copy())
        if not field.domain.contains(y_new):
            lo, hi = _bisect_exit(field, times, states, coeffs)
            return result(Status.ESCAPED_DOMAIN, lo, _widen(lo, hi, rtol))
        if field.cone.norm(y_new) > BLOWUP_NORM:
            lo, hi = _blowup_bracket(field, times, states, step)
            return result(Status.STEP_COLLAPSE, lo, _widen(lo, hi, rtol))
        factor = MAX_FACTOR if err == 0 else min(MAX_FACTOR, SAFETY * err ** -0.2)
        t, y, f = t_new, y_new, f_new
        if clipped:
            return result(final_status, t_end)
        h = step * factor


def _bisect_exit(field, times, states, coeffs):
    i = len(coeffs) - 1
    t0, t1 = times[i], times[i + 1]
    h = t1 - t0
    y0, Q = states[i], coeffs[i]

    def inside(t):
        x = (t - t0) / h
        return field.domain.contains(y0 + h * (Q @ np.array([x, x * x, x ** 3, x ** 4])))

    lo, hi = t0, t1
    for _ in range(60):
        if hi - lo <= 1e-10 * max(1.0, hi):
            break
        mid = 0.5 * (lo + hi)
        if inside(mid):
            lo = mid
        else:
            hi = mid
    return lo, hi


def _widen(lo: float, hi: float, rtol: float) -> tuple[float, float]:
    # the numerical escape time carries the global integration error, ~rtol * theta
    slack = 10.0 * max(rtol, EPS) * max(hi, 0.0)
    return max(0.0, lo - slack), hi + slack


def _collapse(field, times, states, y, t, h, escape_margin, rtol, result):
    margin = field.domain.margin(y)
    if margin <= escape_margin:
        speed = field.cone.norm(field(t, y))
        reach = 2.0 * margin / speed if speed > 0 else h
        return result(Status.ESCAPED_DOMAIN, t, _widen(t, t + max(reach, h), rtol))
    lo, hi = _blowup_bracket(field, np.array(times), np.array(states), h)
    return result(Status.STEP_COLLAPSE, t, _widen(t, max(hi, t + h), rtol))


def integrate(field: VectorField, x0, t_target: float, rtol: float = DEFAULT_RTOL,
              atol=DEFAULT_ATOL, max_steps: int = DEFAULT_MAX_STEPS) -> Trajectory:
    """Solve ``x' = f(t, x)``, ``x(0) = x0`` up to ``t_target`` or the first escape.

    Inspect ``status``: a trajectory that escapes before ``t_target``
    stops at the lower end of its escape bracket.
    """
    if t_target >= field.horizon:
        raise ValueError(f"t_target={t_target} is not below the horizon {field.horizon}")
    return solve(field, x0, t_target, rtol, atol, max_steps)
