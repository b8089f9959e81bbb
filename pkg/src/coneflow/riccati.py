"""Generalized Riccati fields of affine processes on the nonnegative orthant.

Each component has Levy-Khintchine form

    f_i(x) = alpha_i/2 x_i^2 + x . beta_i - c_i
             + int (exp(x . xi) - 1 - x . xi 1{|xi| <= 1}) mu_i(dxi)

with jump measures made of atoms plus an optional truncated density.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from .cone import OrderCone, finiteness, whole_space
from .field import (
    Sampler,
    VectorField,
    check_convexity,
    check_order_regular,
    check_quasimonotone,
)
from .report import CertReport, Verdict, combine


class MalformedMeasure(ValueError):
    pass


def _norms(points: np.ndarray, norm: str) -> np.ndarray:
    if norm == "max":
        return np.max(np.abs(points), axis=1)
    if norm == "sum":
        return np.sum(np.abs(points), axis=1)
    return np.sqrt(np.sum(points * points, axis=1))


@dataclass(frozen=True)
class Density:
    """A jump density on ``C \\ {0}`` truncated to ``|xi|_max <= r_max``.

    ``func`` maps an ``(n, d)`` array of points to ``n`` nonnegative
    values.  Integrals use Gauss-Legendre on a per-axis partition graded
    geometrically towards 0 (``small_levels`` dyadic intervals below 1) and
    dyadically outwards to ``r_max``.
    """

    func: Callable[[np.ndarray], np.ndarray]
    r_max: float = 64.0
    nodes: int = 8
    small_levels: int = 30

    def __post_init__(self):
        if not self.r_max > 1:
            raise MalformedMeasure("density truncation r_max must exceed 1")
        if self.nodes < 2:
            raise MalformedMeasure("density quadrature needs at least 2 nodes per interval")

    def axis_rule(self, nodes: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        n = nodes or self.nodes
        edges = [0.0] + [2.0 ** -k for k in range(self.small_levels, 0, -1)] + [1.0]
        e = 1.0
        while e * 2 < self.r_max:
            e *= 2
            edges.append(e)
        edges.append(self.r_max)
        s, w = np.polynomial.legendre.leggauss(n)
        pts, wts = [], []
        for a, b in zip(edges[:-1], edges[1:]):
            pts.append(0.5 * (b - a) * s + 0.5 * (a + b))
            wts.append(0.5 * (b - a) * w)
        return np.concatenate(pts), np.concatenate(wts)


@dataclass(frozen=True)
class DensityTable:
    points: np.ndarray
    weights: np.ndarray  # quadrature weight times density value
    small: np.ndarray  # |xi| <= 1 in the configured norm
    shell: np.ndarray  # dyadic shell index of |xi|_max


def _table(density: Density, d: int, norm: str, nodes: int | None = None) -> DensityTable:
    p1, w1 = density.axis_rule(nodes)
    mesh = np.meshgrid(*([p1] * d), indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    wmesh = np.meshgrid(*([w1] * d), indexing="ij")
    wts = np.prod(np.stack([m.ravel() for m in wmesh], axis=1), axis=1)
    vals = np.asarray(density.func(pts), dtype=float)
    if np.any(vals < 0) or not np.all(np.isfinite(vals)):
        raise MalformedMeasure("density must be finite and nonnegative on the orthant")
    keep = vals * wts > 0
    pts, wts = pts[keep], (vals * wts)[keep]
    shell = np.ceil(np.log2(np.max(pts, axis=1))).astype(int)
    return DensityTable(pts, wts, _norms(pts, norm) <= 1.0, shell)


@dataclass(frozen=True)
class JumpMeasure:
    """Atoms ``(xi, mass)`` in ``C \\ {0}`` plus an optional density."""

    atoms: tuple = ()
    density: Density | None = None

    def __post_init__(self):
        cleaned = []
        for xi, mass in self.atoms:
            xi = np.atleast_1d(np.asarray(xi, dtype=float))
            mass = float(mass)
            if np.any(xi < 0):
                raise MalformedMeasure(f"atom {xi.tolist()} lies outside the orthant")
            if not np.any(xi > 0):
                raise MalformedMeasure("atom at the origin")
            if not mass > 0 or not math.isfinite(mass):
                raise MalformedMeasure(f"atom mass must be positive and finite, got {mass}")
            cleaned.append((xi, mass))
        object.__setattr__(self, "atoms", tuple(cleaned))

    @property
    def is_empty(self) -> bool:
        return not self.atoms and self.density is None


@dataclass(frozen=True)
class AffineParams:
    """Per-coordinate diffusion ``alpha``, drift rows ``beta``, killing ``c`` and jumps."""

    alpha: np.ndarray
    beta: np.ndarray
    c: np.ndarray
    jumps: tuple = ()
    norm: str = "euclidean"

    def __post_init__(self):
        alpha = np.atleast_1d(np.asarray(self.alpha, dtype=float))
        d = alpha.size
        beta = np.asarray(self.beta, dtype=float).reshape(d, d)
        c = np.atleast_1d(np.asarray(self.c, dtype=float))
        if c.size != d:
            raise ValueError("c must have one entry per coordinate")
        jumps = tuple(self.jumps) or tuple(JumpMeasure() for _ in range(d))
        if len(jumps) != d:
            raise ValueError("one jump measure per coordinate is required")
        for mu in jumps:
            for xi, _ in mu.atoms:
                if xi.size != d:
                    raise MalformedMeasure(f"atom {xi.tolist()} does not have dimension {d}")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "jumps", jumps)

    @property
    def dimension(self) -> int:
        return self.alpha.size

    @cached_property
    def _atoms(self) -> list[tuple[np.ndarray, np.ndarray, np.ndarray]]:
        out = []
        for mu in self.jumps:
            if mu.atoms:
                locs = np.array([xi for xi, _ in mu.atoms])
                mass = np.array([m for _, m in mu.atoms])
            else:
                locs = np.zeros((0, self.dimension))
                mass = np.zeros(0)
            out.append((locs, mass, _norms(locs, self.norm) <= 1.0))
        return out

    @cached_property
    def _tables(self) -> list[DensityTable | None]:
        return [None if mu.density is None else _table(mu.density, self.dimension, self.norm)
                for mu in self.jumps]

    @property
    def has_density(self) -> bool:
        return any(mu.density is not None for mu in self.jumps)

    # JSON -----------------------------------------------------------------

    @classmethod
    def from_json(cls, block: dict) -> "AffineParams":
        d = int(block["d"])
        coords = block["coordinates"]
        if len(coords) != d:
            raise ValueError(f"expected {d} coordinate blocks, got {len(coords)}")
        alpha, beta, c, jumps = [], [], [], []
        for i, co in enumerate(coords):
            alpha.append(float(co.get("alpha", 0.0)))
            row = co.get("beta", [0.0] * d)
            if len(row) != d:
                raise ValueError(f"coordinate {i}: beta must have length {d}")
            beta.append([float(v) for v in row])
            c.append(float(co.get("c", 0.0)))
            jb = co.get("jumps", {}) or {}
            atoms = tuple((a["xi"], a["mass"]) for a in jb.get("atoms", []))
            dens = _density_from_json(jb["density"], d) if jb.get("density") else None
            jumps.append(JumpMeasure(atoms, dens))
        return cls(np.array(alpha), np.array(beta), np.array(c), tuple(jumps),
                   block.get("norm", "euclidean"))


def _density_from_json(block: dict, d: int) -> Density:
    kind = block.get("kind")
    r_max = float(block.get("r_max", 64.0))
    nodes = int(block.get("nodes", 8))
    scale = float(block.get("scale", 1.0))
    if kind == "exponential":
        rates = np.asarray(block["rates"], dtype=float)
        if rates.size != d:
            raise ValueError("exponential density needs one rate per coordinate")
        return Density(lambda p: scale * np.exp(-(p @ rates)), r_max, nodes)
    if kind == "tempered_stable":
        if d != 1:
            raise ValueError("tempered_stable densities are one-dimensional")
        a, b = float(block["index"]), float(block["rate"])
        return Density(lambda p: scale * p[:, 0] ** (-1.0 - a) * np.exp(-b * p[:, 0]), r_max, nodes)
    raise ValueError(f"unknown density kind {kind!r}")


# --- evaluation ------------------------------------------------------------------


def _diverges(table: DensityTable, integrand: np.ndarray) -> bool:
    big = table.shell >= 1
    if not np.any(big):
        return False
    shells = np.unique(table.shell[big])
    sums = np.array([integrand[table.shell == s].sum() for s in shells])
    if not np.all(np.isfinite(sums)):
        return True
    if len(sums) >= 3 and sums[-3] > 0 and sums[-1] / sums[-3] > 10.0:
        return True
    return False


def _jump_terms(params: AffineParams, i: int, x: np.ndarray, compensated: bool = True):
    """Compensated jump integral for coordinate ``i`` and its gradient."""
    locs, mass, small = params._atoms[i]
    value = 0.0
    grad = np.zeros(params.dimension)
    if mass.size:
        a = locs @ x
        e = np.exp(a)
        value += float(mass @ (np.expm1(a) - np.where(small, a, 0.0)))
        grad += (mass * (e - small)) @ locs
    table = params._tables[i]
    if table is not None:
        with np.errstate(over="ignore", invalid="ignore"):
            a = table.points @ x
            e = np.exp(a)
            if _diverges(table, table.weights * e):
                return math.inf, np.full(params.dimension, math.inf)
            value += float(table.weights @ (np.expm1(a) - np.where(table.small, a, 0.0)))
            grad += (table.weights * (e - table.small)) @ table.points
    return value, grad


def eval_f(params: AffineParams, x) -> np.ndarray:
    """Evaluate the Riccati field; components are ``+inf`` outside its domain."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    out = 0.5 * params.alpha * x * x + params.beta @ x - params.c
    for i in range(params.dimension):
        val, _ = _jump_terms(params, i, x)
        out[i] += val
    out[~np.isfinite(out)] = math.inf
    return out


def jacobian(params: AffineParams, x) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    J = params.beta.copy()
    J[np.diag_indices_from(J)] += params.alpha * x
    for i in range(params.dimension):
        _, g = _jump_terms(params, i, x)
        J[i] += g
    return J


def split_form(params: AffineParams, x) -> tuple[np.ndarray, np.ndarray]:
    """Split ``f = f_dagger + large`` with ``large_i = int_{|xi|>1} (exp(x.xi) - 1) mu_i``.

    Only atoms are split; density contributions go to ``f_dagger``.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    d = params.dimension
    dagger = 0.5 * params.alpha * x * x + params.beta @ x - params.c
    large = np.zeros(d)
    for i in range(d):
        locs, mass, small = params._atoms[i]
        for xi, m, is_small in zip(locs, mass, small):
            a = float(xi @ x)
            if is_small:
                dagger[i] += m * (math.expm1(a) - a)
            else:
                large[i] += m * math.expm1(a)
        table = params._tables[i]
        if table is not None:
            a = table.points @ x
            dagger[i] += float(table.weights @ (np.expm1(a) - np.where(table.small, a, 0.0)))
    return dagger, large


# --- admissibility ---------------------------------------------------------------


def _shell_sums(table: DensityTable, integrand: np.ndarray, which: str, levels: int = 0):
    if which == "large":
        sel = table.shell >= 1
    else:
        # only complete dyadic shells; the interval touching 0 is irregular
        sel = (table.shell <= 0) & (table.shell > -levels)
    shells = np.unique(table.shell[sel])
    return np.array([integrand[table.shell == s].sum() for s in shells]), shells


def validate(params: AffineParams) -> CertReport:
    """Check the admissibility conditions coordinate by coordinate."""
    d = params.dimension
    failures: list[dict] = []
    checks: dict[str, list] = {"alpha": [], "killing": [], "cross_drift": [],
                               "large_jump_mass": [], "small_jump_integrability": []}
    errors: dict[str, float] = {}
    for i in range(d):
        if params.alpha[i] < 0:
            failures.append({"bullet": "alpha", "coordinate": i, "value": params.alpha[i]})
        if params.c[i] < 0:
            failures.append({"bullet": "killing", "coordinate": i, "value": params.c[i]})
        locs, mass, small = params._atoms[i]
        comp = (mass[small] @ locs[small]) if mass.size else np.zeros(d)
        table = params._tables[i]
        if table is not None:
            comp = comp + (table.weights * table.small) @ table.points
            coarse = _table(params.jumps[i].density, d, params.norm,
                            max(2, params.jumps[i].density.nodes - 2))
            comp_coarse = (coarse.weights * coarse.small) @ coarse.points
            errors[f"compensator_{i}"] = float(np.max(np.abs(
                (table.weights * table.small) @ table.points - comp_coarse)))
            mass_sums, _ = _shell_sums(table, table.weights, "large")
            if len(mass_sums) >= 2 and mass_sums[-1] > 0.9 * mass_sums[-2]:
                failures.append({"bullet": "large_jump_mass", "coordinate": i,
                                 "value": float(mass_sums[-1])})
            weight = np.sum(np.abs(np.delete(table.points, i, axis=1)), axis=1) + table.points[:, i] ** 2
            small_sums, _ = _shell_sums(table, table.weights * weight, "small",
                                         params.jumps[i].density.small_levels)
            # shells ascend from the innermost; a non-decaying inner tail diverges
            if len(small_sums) >= 2 and small_sums[0] > 0.9 * small_sums[1]:
                failures.append({"bullet": "small_jump_integrability", "coordinate": i,
                                 "value": float(small_sums[0])})
        for k in range(d):
            if k == i:
                continue
            margin = params.beta[i, k] - comp[k]
            checks["cross_drift"].append({"coordinate": i, "k": k, "margin": float(margin)})
            if margin < 0:
                failures.append({"bullet": "cross_drift", "coordinate": i, "k": k,
                                 "value": float(margin)})
    metrics = {"cross_drift": checks["cross_drift"], "quadrature_error": errors,
               "violations": failures}
    n = 5 * d
    if failures:
        return CertReport(Verdict.FAIL, n, 0.0, witness=failures[0], metrics=metrics)
    return CertReport(Verdict.PASS, n, 0.0, metrics=metrics)


# --- fields and oracles --------------------------------------------------------


def as_vector_field(params: AffineParams, cone: OrderCone | None = None, check: bool = True) -> VectorField:
    """Wrap the Riccati map as an autonomous field on ``U = {f < inf}``."""
    d = params.dimension
    cone = cone or OrderCone.orthant(d, params.norm)
    if cone.kind != "orthant" or cone.dimension != d:
        raise ValueError("affine fields live on the orthant of matching dimension")
    if check:
        report = validate(params)
        if not report.passed:
            raise ValueError(f"inadmissible parameters: {report.witness}")
    if params.has_density:
        domain = finiteness(lambda x: eval_f(params, x), d)
    else:
        domain = whole_space(d)
    return VectorField(lambda t, x: eval_f(params, x), cone, domain=domain,
                       jacobian=lambda t, x: jacobian(params, x), name="affine")


def cir(alpha: float, beta: float, c: float = 0.0) -> AffineParams:
    """One-dimensional CIR parameters: ``f(x) = alpha/2 x^2 + beta x - c``."""
    return AffineParams(np.array([alpha]), np.array([[beta]]), np.array([c]))


def cir_closed_form(alpha: float, beta: float, x: float, t: float) -> float:
    """Flow of ``psi' = alpha/2 psi^2 + beta psi`` from ``x``."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    if beta == 0.0:
        denom = 1.0 - 0.5 * alpha * t * x
        if denom <= 0:
            raise ValueError("blow-up time passed")
        return x / denom
    growth = math.exp(beta * t)
    denom = 1.0 + (alpha * x / (2.0 * beta)) * (1.0 - growth)
    if denom <= 0:
        raise ValueError("blow-up time passed")
    return x * growth / denom


def check_proposition(params: AffineParams, sampler: Sampler, tol: float = 1e-9) -> CertReport:
    """Audit convexity, quasi-monotonicity and order regularity of the Riccati field.

    Admissibility is recorded alongside but does not gate the audit.
    """
    field = as_vector_field(params, check=False)
    report = combine({
        "convexity": check_convexity(field, sampler, tol),
        "quasimonotone": check_quasimonotone(field, sampler, tol),
        "order_regular": check_order_regular(field.domain, field.cone, sampler),
    }, tolerance=tol)
    report.metrics["admissibility"] = validate(params).verdict.value
    return report


def two_factor_example() -> AffineParams:
    """An admissible two-factor field with small and large atom jumps."""
    return AffineParams(
        alpha=np.array([1.0, 0.5]),
        beta=np.array([[-1.0, 0.5], [0.3, -0.8]]),
        c=np.array([0.1, 0.0]),
        jumps=(
            JumpMeasure(atoms=(([0.5, 0.2], 1.0), ([1.5, 0.5], 0.3))),
            JumpMeasure(atoms=(([0.0, 2.0], 0.5),)),
        ),
    )
