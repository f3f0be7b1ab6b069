"""Trace checkers, reference oracles, metrics and the command-line tool."""
from ..clients import Submission, client_plan
from .checker import CheckReport, Violation, check_atomic_broadcast, check_vcbc_consistency
from .metrics import MetricsReport, compute_metrics, to_csv
from .oracles import BridgeReport, SigmaReport, check_bridges, choice_oracle, compute_sigma

__all__ = [
    "BridgeReport",
    "CheckReport",
    "MetricsReport",
    "SigmaReport",
    "Submission",
    "Violation",
    "check_atomic_broadcast",
    "check_bridges",
    "check_vcbc_consistency",
    "choice_oracle",
    "client_plan",
    "compute_metrics",
    "compute_sigma",
    "to_csv",
]
