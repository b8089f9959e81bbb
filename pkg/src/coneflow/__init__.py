"""Flows of ODEs on cone-ordered spaces: integration, escape times and convexity checks."""

__version__ = "0.1.0"

from .cone import OrderCone, leq, normality_constant, shrink  # noqa: E402
from .field import VectorField, mollify  # noqa: E402
from .flow import escape_time, flow_convexity_check, integrate  # noqa: E402
from .report import CertReport, Verdict  # noqa: E402

__all__ = [
    "CertReport", "OrderCone", "Verdict", "VectorField", "escape_time", "flow_convexity_check",
    "integrate", "leq", "mollify", "normality_constant", "shrink",
]
