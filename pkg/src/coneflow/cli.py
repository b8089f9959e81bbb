"""``cone-flow`` command line entry point."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .integrator import IntegrationError, Status, integrate
from .report import _jsonable
from .riccati import AffineParams, MalformedMeasure, as_vector_field, eval_f, validate
from .scenario import ScenarioError, dumps_report, execute, load_scenario, versions

CONFIG_ERROR = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # usage errors are configuration errors, not Inconclusive results
        self.print_usage(sys.stderr)
        self.exit(CONFIG_ERROR, f"{self.prog}: error: {message}\n")


def _parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cone-flow", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute a JSON scenario")
    run.add_argument("scenario", type=Path)
    run.add_argument("--dump", type=Path, help="directory for CSV dumps")
    run.add_argument("--seed", type=int, help="override the scenario seed")
    run.add_argument("--out", type=Path, help="write the JSON report here instead of stdout")

    ric = sub.add_parser("riccati", help="affine Riccati parameters")
    ric.add_argument("action", choices=["validate", "eval", "flow"])
    ric.add_argument("params", type=Path)
    ric.add_argument("--x", help="comma-separated point")
    ric.add_argument("--t", type=float, help="flow time")
    ric.add_argument("--rtol", type=float, default=1e-9)
    ric.add_argument("--dump", type=Path, help="CSV path for the flow trajectory")
    ric.add_argument("--out", type=Path)
    return parser


def _emit(text: str, out: Path | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text)


def _run(args) -> int:
    scn = load_scenario(args.scenario, seed=args.seed)
    out = args.out
    if out is None and "report" in scn.raw.get("output", {}):
        out = Path(scn.raw["output"]["report"])
    dump = args.dump
    if dump is None and "dump" in scn.raw.get("output", {}):
        dump = Path(scn.raw["output"]["dump"])
    try:
        report = execute(scn, dump)
    except (ValueError, IntegrationError) as exc:
        raise ScenarioError(f"{args.scenario}: command '{scn.kind}': {exc}") from exc
    _emit(dumps_report(report), out)
    return int(report["exit_code"])


def _point(text: str | None, d: int) -> np.ndarray:
    if text is None:
        raise ScenarioError("--x is required")
    x = np.array([float(v) for v in text.split(",")])
    if x.size != d:
        raise ScenarioError(f"--x needs {d} components")
    return x


def _riccati(args) -> int:
    try:
        block = json.loads(args.params.read_text())
        params = AffineParams.from_json(block)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{args.params}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from exc
    except (OSError, KeyError, TypeError, ValueError, MalformedMeasure) as exc:
        raise ScenarioError(f"{args.params}: {exc}") from exc
    d = params.dimension
    if args.action == "validate":
        rep = validate(params)
        body = {"verdict": rep.verdict.value, "witnesses": [rep.witness] if rep.witness else [],
                "metrics": rep.metrics}
        code = rep.verdict.exit_code
    elif args.action == "eval":
        x = _point(args.x, d)
        body = {"verdict": "Pass", "x": x, "f": eval_f(params, x), "witnesses": [], "metrics": {}}
        code = 0
    else:
        if args.t is None:
            raise ScenarioError("--t is required for flow")
        field = as_vector_field(params, check=False)
        traj = integrate(field, _point(args.x, d), args.t, args.rtol)
        if args.dump is not None:
            traj.to_csv(args.dump)
        reached = traj.status is Status.REACHED_TARGET
        body = {"verdict": "Pass" if reached else "Inconclusive", "witnesses": [],
                "metrics": {"status": traj.status.value, "t_end": traj.t_end, "final": traj.final,
                            "theta_bracket": traj.theta_bracket}}
        code = 0 if reached else 2
    body.update(schema_version=1, command=f"riccati {args.action}", versions=versions())
    _emit(json.dumps(_jsonable(body), indent=2, sort_keys=True) + "\n", args.out)
    return code


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return _run(args) if args.command == "run" else _riccati(args)
    except ScenarioError as exc:
        print(f"cone-flow: configuration error: {exc}", file=sys.stderr)
        return CONFIG_ERROR


if __name__ == "__main__":
    sys.exit(main())
