"""Certification reports shared by every check in the package."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Any

import numpy as np


class Verdict(str, enum.Enum):
    PASS = "Pass"
    FAIL = "Fail"
    INCONCLUSIVE = "Inconclusive"

    @property
    def exit_code(self) -> int:
        return {"Pass": 0, "Fail": 1, "Inconclusive": 2}[self.value]


@dataclass
class CertReport:
    """Outcome of a sampling-based check.

    ``Pass`` only means no violation was found among ``samples_tested``
    samples at ``tolerance``.  A ``Fail`` always carries a witness.
    """

    verdict: Verdict
    samples_tested: int = 0
    tolerance: float = 0.0
    witness: dict[str, Any] | None = None
    skipped: int = 0
    metrics: dict[str, Any] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.verdict = Verdict(self.verdict)
        if self.verdict is Verdict.FAIL and self.witness is None:
            raise ValueError("a failing report needs a witness")

    @property
    def passed(self) -> bool:
        return self.verdict is Verdict.PASS

    def to_json(self) -> dict:
        return {
            "verdict": self.verdict.value,
            "samples_tested": self.samples_tested,
            "skipped": self.skipped,
            "tolerance": self.tolerance,
            "witness": _jsonable(self.witness),
            "metrics": _jsonable(self.metrics),
            "notes": list(self.notes),
        }


def combine(reports: dict[str, CertReport], tolerance: float | None = None) -> CertReport:
    """Aggregate named sub-reports: any Fail wins, then any Inconclusive."""
    verdicts = [r.verdict for r in reports.values()]
    if Verdict.FAIL in verdicts:
        verdict = Verdict.FAIL
    elif Verdict.INCONCLUSIVE in verdicts:
        verdict = Verdict.INCONCLUSIVE
    else:
        verdict = Verdict.PASS
    witness = None
    for name, r in reports.items():
        if r.verdict is Verdict.FAIL:
            witness = {"check": name, **r.witness}
            break
    tol = tolerance if tolerance is not None else max((r.tolerance for r in reports.values()), default=0.0)
    return CertReport(
        verdict,
        samples_tested=sum(r.samples_tested for r in reports.values()),
        tolerance=tol,
        witness=witness,
        skipped=sum(r.skipped for r in reports.values()),
        metrics={name: r.to_json() for name, r in reports.items()},
    )


def _jsonable(obj):
    if obj is None or isinstance(obj, (bool, str)):
        return obj
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if v != v:
            return "nan"
        if v in (float("inf"), float("-inf")):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(obj, int):
        return obj
    return str(obj)
