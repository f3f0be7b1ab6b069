"""Deterministic network simulation of replica groups."""
from .abasim import AbaOutcome, run_aba
from .scenario import (
    Adversary,
    ClientPlan,
    CryptoCost,
    DelayModel,
    Fault,
    Scenario,
    ScenarioError,
    inject_fault,
    load_scenario,
)
from .sim import Simulation, Trace, load_trace, run, trace_from_records

__all__ = [
    "AbaOutcome",
    "Adversary",
    "ClientPlan",
    "CryptoCost",
    "DelayModel",
    "Fault",
    "Scenario",
    "ScenarioError",
    "Simulation",
    "Trace",
    "inject_fault",
    "load_scenario",
    "load_trace",
    "run",
    "run_aba",
    "trace_from_records",
]
