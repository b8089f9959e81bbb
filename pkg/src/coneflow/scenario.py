"""JSON scenarios: parsing, the field registry, and command execution."""

from __future__ import annotations

import json
import math
import platform
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any

import jsonschema
import numpy as np
import scipy

from . import __version__
from .cone import OrderCone, halfspace, shrink, whole_space
from .field import (
    Sampler,
    VectorField,
    check_convexity,
    check_jacobian,
    check_quasimonotone,
    constant,
    linear,
    mollify,
    scalar_riccati,
    sine,
)
from .flow import (
    DEFAULT_CONE_TOL,
    Status,
    comparison_check,
    domain_convexity_check,
    escape_time,
    flow_convexity_check,
    integrate,
    semigroup_check,
    subsuper_convexity_check,
)
from .integrator import DEFAULT_ATOL, DEFAULT_RTOL
from .report import CertReport, Verdict, _jsonable, combine
from .riccati import AffineParams, as_vector_field, check_proposition, eval_f, validate
from .variational import explicit_bound_check, sandwich_check

SCHEMA_VERSION = 1
COMMANDS = ("certify", "flow", "escape-time", "convexity", "sandwich", "bound", "comparison",
            "mollify-convergence", "riccati", "semigroup", "subsuper")

_vector = {"type": "array", "items": {"type": "number"}, "minItems": 1}
_box = {"type": "object", "required": ["lower", "upper"],
        "properties": {"lower": _vector, "upper": _vector}}

SCENARIO_SCHEMA = {
    "type": "object",
    "required": ["field", "command"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "name": {"type": "string"},
        "description": {"type": "string"},
        "seed": {"type": "integer"},
        "expected_exit": {"type": "integer"},
        "cone": {
            "type": "object",
            "required": ["dimension", "kind"],
            "properties": {
                "dimension": {"type": "integer", "minimum": 1},
                "kind": {"enum": ["orthant", "polyhedral"]},
                "dual_generators": {"type": "array", "items": _vector},
                "norm": {"enum": ["euclidean", "max", "sum"]},
            },
        },
        "field": {
            "type": "object",
            "required": ["name"],
            "properties": {
                "name": {"enum": ["scalar-riccati", "linear", "sin", "constant", "affine"]},
                "matrix": {"type": "array", "items": _vector},
                "value": _vector,
                "params": {"type": "object"},
            },
        },
        "domain": {
            "type": "object",
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["whole", "halfspace"]},
                "normal": _vector,
                "bound": {"type": "number"},
            },
        },
        "tolerances": {
            "type": "object",
            "properties": {
                "rtol": {"type": "number", "exclusiveMinimum": 0},
                "atol": {"type": "number", "exclusiveMinimum": 0},
                "cone_tol": {"type": "number", "minimum": 0},
            },
            "additionalProperties": False,
        },
        "command": {
            "type": "object",
            "required": ["type"],
            "properties": {"type": {"enum": list(COMMANDS)}, "region": _box, "K": _box},
        },
        "output": {"type": "object", "properties": {"report": {"type": "string"},
                                                     "dump": {"type": "string"}}},
    },
}


class ScenarioError(ValueError):
    """Configuration problem; maps to exit code 3."""


@dataclass
class Scenario:
    raw: dict
    name: str
    seed: int
    field: VectorField
    command: dict
    rtol: float
    atol: float
    cone_tol: float

    @property
    def kind(self) -> str:
        return self.command["type"]


def load_scenario(path, seed: int | None = None) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"{path}: cannot read scenario: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from exc
    return parse_scenario(raw, seed=seed, source=str(path))


def parse_scenario(raw: Any, seed: int | None = None, source: str = "<scenario>") -> Scenario:
    try:
        jsonschema.validate(raw, SCENARIO_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ScenarioError(f"{source}: field '{where}': {exc.message}") from exc
    tol = raw.get("tolerances", {})
    try:
        field = build_field(raw)
    except (KeyError, ValueError, TypeError) as exc:
        raise ScenarioError(f"{source}: field: {exc}") from exc
    return Scenario(raw, raw.get("name", Path(source).stem), raw.get("seed", 0) if seed is None else seed,
                    field, raw["command"], tol.get("rtol", DEFAULT_RTOL), tol.get("atol", DEFAULT_ATOL),
                    tol.get("cone_tol", DEFAULT_CONE_TOL))


def build_field(raw: dict) -> VectorField:
    """Instantiate a registry field from a scenario's ``cone``/``field``/``domain`` blocks."""
    spec = raw["field"]
    name = spec["name"]
    cone = OrderCone.from_json(raw["cone"]) if "cone" in raw else None
    if name == "affine":
        params = AffineParams.from_json(spec["params"])
        return as_vector_field(params, cone, check=spec.get("check", True))
    if name in ("scalar-riccati", "sin") and cone is not None and cone.dimension != 1:
        raise ValueError(f"{name} is a one-dimensional field")
    if name == "scalar-riccati":
        field = scalar_riccati(cone)
    elif name == "sin":
        field = sine(cone)
    elif name == "linear":
        field = linear(spec["matrix"], cone)
    else:
        field = constant(spec["value"], cone)
    dom = raw.get("domain")
    if dom and dom["kind"] == "halfspace":
        field = replace(field, domain=halfspace(dom["normal"], dom["bound"], field.cone))
    return field


def _vec(v) -> np.ndarray:
    return np.atleast_1d(np.asarray(v, dtype=float))


# --- batch case generation ---------------------------------------------------------


def random_cases(field: VectorField, count: int, seed: int, x_box, y_box=None, t_cap: float = 1.0,
                 t_fraction=(0.05, 0.9), ordered: bool = False, rtol: float = 1e-6) -> list[dict]:
    """Seeded ``(x, y, lambda, t)`` cases with ``t`` below both escape times.

    With ``ordered`` the second point is ``x + h`` for ``h`` in the cone.
    Escape times only need a safe lower end, so a loose ``rtol`` is enough.
    """
    rng = np.random.default_rng(seed)
    lo_x, hi_x = _vec(x_box[0]), _vec(x_box[1])
    lo_y, hi_y = (lo_x, hi_x) if y_box is None else (_vec(y_box[0]), _vec(y_box[1]))
    rays = field.cone.extreme_rays
    cases = []
    while len(cases) < count:
        x = lo_x + (hi_x - lo_x) * rng.random(lo_x.size)
        if ordered:
            y = x + (rng.random(rays.shape[0]) * (hi_y - lo_y).max()) @ rays
        else:
            y = lo_y + (hi_y - lo_y) * rng.random(lo_y.size)
        if not (field.domain.contains(x) and field.domain.contains(y)):
            continue
        th = min(escape_time(field, x, t_cap, rtol).theta_lo, escape_time(field, y, t_cap, rtol).theta_lo)
        frac = t_fraction[0] + (t_fraction[1] - t_fraction[0]) * rng.random()
        cases.append({"x": x, "y": y, "lambda": float(rng.random()), "t": frac * min(th, t_cap)})
    return cases


def _cases(scn: Scenario, cmd: dict, ordered: bool = False) -> list[dict]:
    if "random_cases" in cmd:
        rc = cmd["random_cases"]
        return random_cases(scn.field, int(rc["count"]), int(rc.get("seed", scn.seed)),
                            (rc["x"][0], rc["x"][1]), (rc["y"][0], rc["y"][1]) if "y" in rc else None,
                            float(rc.get("t_cap", 1.0)), tuple(rc.get("t_fraction", (0.05, 0.9))),
                            ordered=ordered or bool(rc.get("ordered", False)))
    return cmd.get("cases", [cmd])


# --- commands ------------------------------------------------------------------------


def _sampler(scn: Scenario, cmd: dict) -> Sampler:
    region = cmd.get("region")
    if region is None:
        raise ScenarioError("command needs a 'region' box")
    return Sampler(int(cmd.get("count", 1000)), region["lower"], region["upper"], scn.seed,
                   float(cmd.get("t_max", 0.0)))


def _cmd_certify(scn: Scenario, cmd: dict, dump) -> CertReport:
    sampler = _sampler(scn, cmd)
    tol = float(cmd.get("tol", 1e-9))
    reports = {}
    for check in cmd.get("checks", ["convexity", "quasimonotone"]):
        if check == "convexity":
            reports[check] = check_convexity(scn.field, sampler, tol)
        elif check == "quasimonotone":
            reports[check] = check_quasimonotone(scn.field, sampler, tol)
        elif check == "jacobian":
            pts = sampler.scale(sampler.unit(scn.field.dimension))
            reports[check] = check_jacobian(scn.field, [p for p in pts if scn.field.domain.contains(p)])
        else:
            raise ScenarioError(f"unknown certify check {check!r}")
    return combine(reports, tolerance=tol)


def _cmd_flow(scn: Scenario, cmd: dict, dump) -> CertReport:
    x0, t = _vec(cmd["x0"]), float(cmd["t"])
    traj = integrate(scn.field, x0, t, scn.rtol, scn.atol)
    if dump is not None:
        traj.to_csv(Path(dump) / "trajectory.csv", cmd.get("grid"))
    metrics = {"status": traj.status.value, "t_end": traj.t_end, "final": traj.final,
               "steps_accepted": traj.stats.accepted, "steps_rejected": traj.stats.rejected,
               "rhs_evaluations": traj.stats.rhs_evaluations, "theta_bracket": traj.theta_bracket}
    if traj.status is not Status.REACHED_TARGET:
        return CertReport(Verdict.INCONCLUSIVE, 1, scn.rtol, metrics=metrics,
                          notes=["solution escaped before the target time"])
    if "expected" in cmd:
        expected = _vec(cmd["expected"])
        rel = float(cmd.get("rel_tol", 1e-8))
        err = float(np.max(np.abs(traj.final - expected) / np.maximum(np.abs(expected), 1e-300)))
        metrics["relative_error"] = err
        if err > rel:
            return CertReport(Verdict.FAIL, 1, rel, metrics=metrics,
                              witness={"final": traj.final, "expected": expected, "violation": err})
        return CertReport(Verdict.PASS, 1, rel, metrics=metrics)
    return CertReport(Verdict.PASS, 1, scn.rtol, metrics=metrics)


def _cmd_escape(scn: Scenario, cmd: dict, dump) -> CertReport:
    reports = {}
    starts = cmd.get("x0s", [cmd["x0"]] if "x0" in cmd else [])
    for k, x0 in enumerate(starts):
        et = escape_time(scn.field, _vec(x0), cmd.get("t_max"), scn.rtol, scn.atol)
        if dump is not None:
            et.trajectory.to_csv(Path(dump) / f"escape_{k}.csv")
        width = et.theta_hi - et.theta_lo
        metrics = {"theta_lo": et.theta_lo, "theta_hi": et.theta_hi, "status": et.status.value,
                   "width": width}
        verdict, witness = Verdict.PASS, None
        expected = cmd.get("expected")
        if expected is not None:
            theta = float(expected[k] if isinstance(expected, list) else expected)
            ok = et.theta_lo <= theta <= et.theta_hi and width <= 1e-6 * max(1.0, et.theta_hi)
            if not ok:
                verdict = Verdict.FAIL
                witness = {"x0": x0, "expected": theta, "bracket": [et.theta_lo, et.theta_hi],
                           "violation": max(et.theta_lo - theta, theta - et.theta_hi, width)}
        reports[f"x0[{k}]"] = CertReport(verdict, 1, 1e-6, witness=witness, metrics=metrics)
    return combine(reports)


def _cmd_convexity(scn: Scenario, cmd: dict, dump) -> CertReport:
    reports = {}
    for k, case in enumerate(_cases(scn, cmd)):
        lams = case.get("lambdas", [case["lambda"]] if "lambda" in case else np.linspace(0, 1, 11))
        x, y, t = _vec(case["x"]), _vec(case["y"]), float(case["t"])
        reports[f"flow[{k}]"] = flow_convexity_check(scn.field, x, y, lams, t, scn.cone_tol,
                                                     scn.rtol, scn.atol)
        if cmd.get("domain_check", False):
            reports[f"domain[{k}]"] = domain_convexity_check(scn.field, x, y, lams,
                                                             t_max=cmd.get("t_max"), rtol=scn.rtol,
                                                             atol=scn.atol)
    return combine(reports, tolerance=scn.cone_tol)


def _cmd_sandwich(scn: Scenario, cmd: dict, dump) -> CertReport:
    reports = {}
    for k, case in enumerate(_cases(scn, cmd)):
        reports[f"case[{k}]"] = sandwich_check(scn.field, case["x"], case["y"], float(case["t"]),
                                               scn.cone_tol, scn.rtol, scn.atol)
    return combine(reports, tolerance=scn.cone_tol)


def _cmd_bound(scn: Scenario, cmd: dict, dump) -> CertReport:
    K = cmd["K"]
    return explicit_bound_check(scn.field, cmd["x"], cmd["y"], float(cmd["lambda"]), float(cmd["t"]),
                                K["lower"], K["upper"], scn.cone_tol, scn.rtol, scn.atol)


def _curve(scn: Scenario, spec: dict, t_max: float):
    if "constant" in spec:
        value = _vec(spec["constant"])
        return lambda t: value.copy()
    traj = integrate(scn.field, _vec(spec["x0"]), t_max, scn.rtol, scn.atol)
    if traj.status is not Status.REACHED_TARGET:
        raise ScenarioError(f"curve from {spec['x0']} escapes before t={t_max}")
    return traj


def _cmd_comparison(scn: Scenario, cmd: dict, dump) -> CertReport:
    reports = {}
    if "random_cases" in cmd:
        cases = [{"lower": {"x0": c["x"]}, "upper": {"x0": c["y"]}, "t_max": c["t"]}
                 for c in _cases(scn, cmd, ordered=True)]
    else:
        cases = cmd.get("cases", [cmd])
    for k, case in enumerate(cases):
        t_max = float(case.get("t_max", cmd.get("t_max", 1.0)))
        grid = np.linspace(0.0, t_max, int(cmd.get("grid_points", 21)))
        lower = _curve(scn, case["lower"], t_max)
        upper = _curve(scn, case["upper"], t_max)
        reports[f"case[{k}]"] = comparison_check(scn.field, lower, upper, grid, scn.cone_tol,
                                                 float(cmd.get("premise_tol", 1e-6)))
    return combine(reports, tolerance=scn.cone_tol)


def _cmd_semigroup(scn: Scenario, cmd: dict, dump) -> CertReport:
    reports = {}
    for k, case in enumerate(_cases(scn, cmd)):
        if "s" in case:
            s, t = float(case["s"]), float(case["t"])
        else:
            s, t = 0.5 * case["t"] * case["lambda"], 0.5 * case["t"] * (1 - case["lambda"])
        x0 = case.get("x0", case.get("x"))
        reports[f"case[{k}]"] = semigroup_check(scn.field, x0, s, t, float(cmd.get("tol", 1e-7)),
                                                scn.rtol, scn.atol)
    return combine(reports)


def _cmd_subsuper(scn: Scenario, cmd: dict, dump) -> CertReport:
    reports = {}
    for k, case in enumerate(_cases(scn, cmd)):
        x1 = case.get("x1", case.get("x"))
        x2 = case.get("x2", case.get("y"))
        reports[f"case[{k}]"] = subsuper_convexity_check(scn.field, x1, x2, float(case["lambda"]),
                                                         float(case["t"]), scn.cone_tol, scn.rtol,
                                                         scn.atol)
    return combine(reports, tolerance=scn.cone_tol)


def mollify_convergence(field: VectorField, x0, t: float, epsilons=(0.2, 0.1, 0.05, 0.025),
                        convergence_tol: float = 1e-3, time_points: int = 21, nodes: int = 15,
                        slack: float = 0.1, rtol: float = DEFAULT_RTOL,
                        atol: float = DEFAULT_ATOL) -> CertReport:
    """Flows of mollified fields against the flow of ``field`` along an epsilon ladder.

    ``e(eps)`` is the largest deviation over a time grid; it must not grow
    along the ladder (up to ``slack`` relative and an integration noise
    floor) and must end below ``convergence_tol``.
    """
    x0 = _vec(x0)
    eps = sorted((float(e) for e in epsilons), reverse=True)
    reach = eps[0] * field.cone.norm(np.ones(field.dimension))
    if not field.domain.is_whole_space and not shrink(field.domain, reach).contains(x0):
        raise ValueError(f"x0={x0} is not inside the domain shrunk by {reach}")
    grid = np.linspace(0.0, t, time_points)
    ref = integrate(field, x0, t, rtol, atol)
    if ref.status is not Status.REACHED_TARGET:
        raise ValueError("reference solution escapes before t")
    ref_vals = ref.sample(grid)
    scale = 1.0 + max(field.cone.norm(v) for v in ref_vals)
    floor = 100.0 * rtol * scale
    errors = []
    for e in eps:
        tr = integrate(mollify(field, e, nodes), x0, t, rtol, atol)
        if tr.status is not Status.REACHED_TARGET:
            errors.append(math.inf)
            continue
        vals = tr.sample(grid)
        errors.append(max(field.cone.norm(a - b) for a, b in zip(vals, ref_vals)))
    metrics = {"epsilons": eps, "errors": errors, "noise_floor": floor}
    for k in range(1, len(errors)):
        if errors[k] > (1.0 + slack) * errors[k - 1] + floor:
            return CertReport(Verdict.FAIL, len(errors), convergence_tol, metrics=metrics, witness={
                "epsilon": eps[k], "error": errors[k], "previous": errors[k - 1],
                "violation": errors[k] - errors[k - 1]})
    if errors[-1] > convergence_tol:
        return CertReport(Verdict.FAIL, len(errors), convergence_tol, metrics=metrics, witness={
            "epsilon": eps[-1], "error": errors[-1], "violation": errors[-1] - convergence_tol})
    return CertReport(Verdict.PASS, len(errors), convergence_tol, metrics=metrics)


def _cmd_mollify(scn: Scenario, cmd: dict, dump) -> CertReport:
    report = mollify_convergence(scn.field, cmd["x0"], float(cmd["t"]),
                                 cmd.get("epsilons", (0.2, 0.1, 0.05, 0.025)),
                                 float(cmd.get("convergence_tol", 1e-3)),
                                 int(cmd.get("time_points", 21)), int(cmd.get("nodes", 15)),
                                 rtol=scn.rtol, atol=scn.atol)
    if dump is not None:
        with (Path(dump) / "mollify_convergence.csv").open("w") as fh:
            fh.write("epsilon,error\n")
            for e, err in zip(report.metrics["epsilons"], report.metrics["errors"]):
                fh.write(f"{e!r},{err!r}\n")
    return report


def _cmd_riccati(scn: Scenario, cmd: dict, dump) -> CertReport:
    raw = scn.raw["field"]
    if raw["name"] != "affine":
        raise ScenarioError("the riccati command needs an affine field")
    params = AffineParams.from_json(raw["params"])
    action = cmd.get("action", "proposition")
    if action == "validate":
        return validate(params)
    if action == "eval":
        value = eval_f(params, _vec(cmd["x"]))
        return CertReport(Verdict.PASS, 1, 0.0, metrics={"x": cmd["x"], "f": value,
                                                         "finite": bool(np.all(np.isfinite(value)))})
    if action == "proposition":
        return check_proposition(params, _sampler(scn, cmd), float(cmd.get("tol", 1e-9)))
    raise ScenarioError(f"unknown riccati action {action!r}")


_HANDLERS = {
    "certify": _cmd_certify,
    "flow": _cmd_flow,
    "escape-time": _cmd_escape,
    "convexity": _cmd_convexity,
    "sandwich": _cmd_sandwich,
    "bound": _cmd_bound,
    "comparison": _cmd_comparison,
    "mollify-convergence": _cmd_mollify,
    "riccati": _cmd_riccati,
    "semigroup": _cmd_semigroup,
    "subsuper": _cmd_subsuper,
}


def versions() -> dict:
    return {"coneflow": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def execute(scn: Scenario, dump=None) -> dict:
    """Run a parsed scenario and return the JSON report (a plain dict)."""
    if dump is not None:
        Path(dump).mkdir(parents=True, exist_ok=True)
    report = _HANDLERS[scn.kind](scn, scn.command, dump)
    body = report.to_json()
    witnesses = [body["witness"]] if body["witness"] is not None else []
    return {
        "schema_version": SCHEMA_VERSION,
        "scenario": scn.name,
        "command": scn.kind,
        "seed": scn.seed,
        "verdict": body["verdict"],
        "exit_code": report.verdict.exit_code,
        "witnesses": witnesses,
        "metrics": {k: v for k, v in body.items() if k not in ("verdict", "witness")},
        "versions": versions(),
    }


def dumps_report(report: dict) -> str:
    return json.dumps(_jsonable(report), indent=2, sort_keys=True) + "\n"
