"""Ordering cones, the induced partial order, and open order-regular domains."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, NamedTuple

import numpy as np

NORMS = ("euclidean", "max", "sum")
DEFAULT_TOL = 1e-9


class ConeError(ValueError):
    """Raised for malformed or non-proper cone specifications."""


@dataclass(frozen=True)
class OrderCone:
    """A proper closed polyhedral cone ``C = {x : l_j(x) >= 0 for all j}``.

    The rows of ``dual_generators`` are the functionals ``l_j``; they
    generate the dual cone ``C*``.  ``norm`` is shared by every
    norm-dependent quantity computed downstream.
    """

    dimension: int
    kind: str
    dual_generators: np.ndarray
    norm_name: str = "euclidean"

    def __post_init__(self):
        gens = np.atleast_2d(np.asarray(self.dual_generators, dtype=float))
        object.__setattr__(self, "dual_generators", gens)
        gens.setflags(write=False)
        if self.dimension < 1:
            raise ConeError("dimension must be a positive integer")
        if self.kind not in ("orthant", "polyhedral"):
            raise ConeError(f"unknown cone kind {self.kind!r}")
        if self.norm_name not in NORMS:
            raise ConeError(f"unknown norm {self.norm_name!r}; expected one of {NORMS}")
        if gens.shape[1] != self.dimension:
            raise ConeError(
                f"dual generators have {gens.shape[1]} columns, expected {self.dimension}"
            )
        if np.any(np.all(gens == 0.0, axis=1)):
            raise ConeError("dual generators must be nonzero")
        if np.linalg.matrix_rank(gens) < self.dimension:
            raise ConeError("dual generators do not span the dual space; cone is not proper")

    @classmethod
    def orthant(cls, dimension: int, norm: str = "euclidean") -> "OrderCone":
        return cls(dimension, "orthant", np.eye(dimension), norm)

    @classmethod
    def polyhedral(cls, dual_generators, norm: str = "euclidean") -> "OrderCone":
        gens = np.atleast_2d(np.asarray(dual_generators, dtype=float))
        return cls(gens.shape[1], "polyhedral", gens, norm)

    def norm(self, x) -> float:
        x = np.asarray(x, dtype=float)
        if self.norm_name == "max":
            return float(np.max(np.abs(x)))
        if self.norm_name == "sum":
            return float(np.sum(np.abs(x)))
        return float(np.sqrt(np.dot(x, x)))

    def dual_norm(self, a) -> float:
        """Norm of a linear functional with respect to ``self.norm``."""
        a = np.asarray(a, dtype=float)
        if self.norm_name == "max":
            return float(np.sum(np.abs(a)))
        if self.norm_name == "sum":
            return float(np.max(np.abs(a)))
        return float(np.sqrt(np.dot(a, a)))

    def operator_norm(self, matrix, iterations: int = 50) -> float:
        """Induced operator norm of ``matrix``.

        Max norm uses the max absolute row sum, Sum norm the max absolute
        column sum, and the Euclidean norm a fixed-count power iteration on
        ``A^T A`` (a lower estimate that is exact in one dimension).
        """
        a = np.atleast_2d(np.asarray(matrix, dtype=float))
        return float(self.operator_norms(a[None], iterations)[0])

    def operator_norms(self, matrices, iterations: int = 50) -> np.ndarray:
        """``operator_norm`` over a stack of matrices of shape ``(n, p, q)``."""
        a = np.asarray(matrices, dtype=float)
        if self.norm_name == "max":
            return np.max(np.sum(np.abs(a), axis=2), axis=1)
        if self.norm_name == "sum":
            return np.max(np.sum(np.abs(a), axis=1), axis=1)
        if a.shape[1:] == (1, 1):
            return np.abs(a[:, 0, 0])
        gram = np.einsum("nki,nkj->nij", a, a)
        q = a.shape[2]
        v = np.ones(q) + 0.1 * np.arange(q)
        v = np.broadcast_to(v / np.linalg.norm(v), (a.shape[0], q)).copy()
        lam = np.zeros(a.shape[0])
        for _ in range(iterations):
            u = np.einsum("nij,nj->ni", gram, v)
            nu = np.sqrt(np.einsum("ni,ni->n", u, u))
            live = nu > 0
            lam[live] = np.einsum("ni,ni->n", v[live], u[live])
            v[live] = u[live] / nu[live, None]
        lam = np.maximum(lam, np.einsum("ni,nij,nj->n", v, gram, v))
        # a start vector orthogonal to the top singular vector would stall
        stalled = (lam == 0.0) & np.any(a != 0, axis=(1, 2))
        if np.any(stalled):
            lam[stalled] = np.max(np.sum(a[stalled] ** 2, axis=1), axis=1)
        return np.sqrt(np.maximum(lam, 0.0))

    def functional_values(self, x) -> np.ndarray:
        return self.dual_generators @ np.asarray(x, dtype=float)

    def contains(self, x, tol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(self.functional_values(x) >= -tol * (1.0 + self.norm(x))))

    @cached_property
    def extreme_rays(self) -> np.ndarray:
        """Generating rays of ``C`` (one per row), normalized in the cone norm.

        Enumerates the one-dimensional solution sets of ``d-1`` active
        generator constraints and keeps those lying in ``C``.
        """
        d = self.dimension
        gens = self.dual_generators
        if self.kind == "orthant":
            return np.eye(d)
        if d == 1:
            rays = [np.array([1.0]) if gens[0, 0] > 0 else np.array([-1.0])]
            return np.array(rays)
        found: list[np.ndarray] = []
        for rows in itertools.combinations(range(gens.shape[0]), d - 1):
            sub = gens[list(rows)]
            if np.linalg.matrix_rank(sub) < d - 1:
                continue
            _, _, vt = np.linalg.svd(sub)
            r = vt[-1]
            for cand in (r, -r):
                vals = gens @ cand
                if np.all(vals >= -1e-12) and np.any(vals > 1e-12):
                    cand = cand / self.norm(cand)
                    if not any(np.allclose(cand, f, atol=1e-10) for f in found):
                        found.append(cand)
        if not found:
            raise ConeError("cone has no extreme rays; it is {0}")
        return np.array(found)

    def to_json(self) -> dict:
        kind = "orthant" if self.kind == "orthant" else "polyhedral"
        return {
            "dimension": self.dimension,
            "kind": kind,
            "dual_generators": self.dual_generators.tolist(),
            "norm": self.norm_name,
        }

    @classmethod
    def from_json(cls, block: dict) -> "OrderCone":
        norm = block.get("norm", "euclidean")
        if block["kind"] == "orthant":
            return cls.orthant(int(block["dimension"]), norm)
        gens = np.asarray(block["dual_generators"], dtype=float)
        cone = cls.polyhedral(gens, norm)
        if cone.dimension != int(block["dimension"]):
            raise ConeError("dimension does not match dual generator width")
        return cone


def _check_dims(cone: OrderCone, *vectors) -> list[np.ndarray]:
    out = []
    for v in vectors:
        v = np.atleast_1d(np.asarray(v, dtype=float))
        if v.shape != (cone.dimension,):
            raise ValueError(f"expected a vector of length {cone.dimension}, got shape {v.shape}")
        out.append(v)
    return out


def leq(x, y, cone: OrderCone, tol: float = DEFAULT_TOL) -> bool:
    """``x <= y`` in the cone order, with slack ``tol * (1 + ||y - x||)``."""
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    x, y = _check_dims(cone, x, y)
    return cone.contains(y - x, tol)


def order_gap(x, y, cone: OrderCone) -> float:
    """Smallest generator value ``min_j l_j(y - x)``; negative means ``x <= y`` fails."""
    x, y = _check_dims(cone, x, y)
    return float(np.min(cone.functional_values(y - x)))


class NormalityEstimate(NamedTuple):
    value: float
    certified: bool
    sampled_max: float
    samples: int


def normality_estimate(cone: OrderCone, samples: int = 100_000, seed: int = 0) -> NormalityEstimate:
    """Estimate ``mu_C`` with ``0 <= x <= y  =>  ||x|| <= mu_C ||y||``.

    The orthant value 1 is exact for all three norms (they are monotone).
    For polyhedral cones, ``y`` is drawn on the unit sphere of ``C`` and
    ``x`` is pushed along a random direction of ``C`` to the boundary of the
    order interval ``[0, y]``; the largest ``||x||`` seen is inflated by 10%.
    """
    if cone.kind == "orthant":
        return NormalityEstimate(1.0, True, 1.0, 0)
    rng = np.random.default_rng(seed)
    rays = cone.extreme_rays
    gens = cone.dual_generators
    k = rays.shape[0]

    def draw(n):
        w = rng.exponential(size=(n, k)) * (rng.random((n, k)) < 0.7)
        w[np.all(w == 0, axis=1), rng.integers(k)] = 1.0
        return w @ rays

    best = 1.0
    batch = 10_000
    done = 0
    while done < samples:
        n = min(batch, samples - done)
        y = draw(n)
        y /= np.array([cone.norm(v) for v in y])[:, None]
        direc = draw(n)
        ly = y @ gens.T
        ld = direc @ gens.T
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(ld > 1e-15, ly / ld, np.inf)
        s = np.min(ratio, axis=1)
        ok = np.isfinite(s)
        x = direc[ok] * s[ok, None]
        if x.size:
            best = max(best, max(cone.norm(v) for v in x))
        done += n
    return NormalityEstimate(1.1 * best, False, best, samples)


def normality_constant(cone: OrderCone, samples: int = 100_000, seed: int = 0) -> float:
    return normality_estimate(cone, samples, seed).value


def dual_sample(cone: OrderCone, count: int, seed: int = 0) -> np.ndarray:
    """Return ``count`` functionals in ``C*`` (rows), generators first.

    Extra functionals are random nonnegative combinations of a random
    subset of generators.  When ``count`` is below the number of
    generators only the first ``count`` generators are returned.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    gens = cone.dual_generators
    m = gens.shape[0]
    if count <= m:
        return gens[:count].copy()
    rng = np.random.default_rng(seed)
    extra = count - m
    w = rng.exponential(size=(extra, m)) * (rng.random((extra, m)) < 0.5)
    empty = np.all(w == 0, axis=1)
    w[empty, rng.integers(m, size=int(empty.sum()))] = 1.0
    return np.vstack([gens, w @ gens])


# --- domains -----------------------------------------------------------------


@dataclass(frozen=True)
class DomainSpec:
    """An open convex order-regular set ``U`` with a margin function.

    ``margin(x)`` is a lower bound on the distance from ``x`` to the
    complement of ``U`` (``inf`` for the whole space, 0 outside ``U``).
    """

    kind: str
    dimension: int
    _contains: Callable[[np.ndarray], bool] = field(repr=False)
    _margin: Callable[[np.ndarray], float] = field(repr=False)
    shrunk_by: float = 0.0

    def contains(self, x) -> bool:
        return bool(self._contains(np.atleast_1d(np.asarray(x, dtype=float))))

    def margin(self, x) -> float:
        return float(self._margin(np.atleast_1d(np.asarray(x, dtype=float))))

    @property
    def is_whole_space(self) -> bool:
        return self.kind == "whole"


def whole_space(dimension: int) -> DomainSpec:
    return DomainSpec("whole", dimension, lambda x: bool(np.all(np.isfinite(x))), lambda x: math.inf)


def _ray_margin(contains, direction, s_max: float):
    u = np.asarray(direction, dtype=float)

    def margin(x):
        if not contains(x):
            return 0.0
        lo, hi = 0.0, 1.0
        while contains(x + hi * u):
            lo = hi
            hi *= 2.0
            if hi > s_max:
                return math.inf
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if contains(x + mid * u):
                lo = mid
            else:
                hi = mid
            if hi - lo <= 1e-12 * max(1.0, hi):
                break
        return lo

    return margin


def sublevel(g: Callable, bound: float, dimension: int, lipschitz: float | None = None,
             direction=None, s_max: float = 1e8) -> DomainSpec:
    """``U = {x : g(x) < bound}`` for convex, order-nondecreasing ``g``.

    With a Lipschitz constant of ``g`` the margin is ``(bound - g(x)) / G``;
    otherwise it is found by bisection along ``direction`` (default the
    all-ones vector).
    """

    def contains(x):
        val = g(x)
        return bool(np.isfinite(val) and val < bound)

    if lipschitz is not None:
        if lipschitz <= 0:
            raise ValueError("lipschitz must be positive")

        def margin(x):
            val = g(x)
            return max(0.0, (bound - val) / lipschitz) if np.isfinite(val) else 0.0
    else:
        u = np.ones(dimension) if direction is None else direction
        margin = _ray_margin(contains, u, s_max)
    return DomainSpec("sublevel", dimension, contains, margin)


def halfspace(normal, bound: float, cone: OrderCone) -> DomainSpec:
    """``U = {x : normal . x < bound}``; ``normal`` should lie in ``C*`` for order regularity."""
    a = np.atleast_1d(np.asarray(normal, dtype=float))
    return sublevel(lambda x: float(a @ x), float(bound), a.size, lipschitz=cone.dual_norm(a))


def finiteness(evaluate: Callable, dimension: int, direction=None, s_max: float = 1e6) -> DomainSpec:
    """``U = {x : evaluate(x) is finite}``; margin by ray bisection."""

    def contains(x):
        try:
            val = np.asarray(evaluate(x), dtype=float)
        except (OverflowError, FloatingPointError):
            return False
        return bool(np.all(np.isfinite(val)))

    u = np.ones(dimension) if direction is None else direction
    return DomainSpec("finiteness", dimension, contains, _ray_margin(contains, u, s_max))


def shrink(domain: DomainSpec, kappa: float) -> DomainSpec:
    """``U(kappa)``: points whose margin exceeds ``kappa``."""
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    if domain.is_whole_space:
        return domain
    base_margin = domain._margin

    def contains(x):
        return base_margin(x) > kappa

    def margin(x):
        return max(0.0, base_margin(x) - kappa)

    return DomainSpec(domain.kind, domain.dimension, contains, margin, domain.shrunk_by + kappa)
