"""Scenario description for simulated runs, loadable from JSON or TOML."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

from ..configfile import read_config

FAULT_KINDS = ("crash", "silent", "equivocating-vcbc-sender")
SCHEDULERS = ("fair", "fifo", "random", "adversarial-vcbc-delay")
STRATEGIES = ("single", "leader-predicted", "f+1-broadcast")
DELAY_MODELS = ("fixed", "uniform", "matrix")


class ScenarioError(ValueError):
    pass


@dataclass
class DelayModel:
    model: str = "uniform"
    ms: float = 10.0
    low_ms: float = 5.0
    high_ms: float = 15.0
    matrix_ms: list[list[float]] | None = None


@dataclass
class Fault:
    replica: int
    kind: str
    at_s: float = 0.0
    params: dict = field(default_factory=dict)


@dataclass
class ClientPlan:
    requests: int = 0
    rate: float = 100.0  # requests per simulated second, open loop
    size: int = 256
    strategy: str = "f+1-broadcast"
    clients: int = 1
    start_s: float = 0.0


@dataclass
class Adversary:
    """Parameters of the adversarial-vcbc-delay scheduler.

    ``slots`` lists explicit (sender, priority) instances to hold back;
    ``probability`` additionally selects each instance at random.
    ``targets`` defaults to N-f-1 replicas other than the sender.
    """

    slots: list[list[int]] = field(default_factory=list)
    probability: float = 0.0
    targets: list[int] | None = None


@dataclass
class CryptoCost:
    sign_us: float = 0.0
    verify_us: float = 0.0
    combine_us: float = 0.0


@dataclass
class Scenario:
    n: int = 4
    f: int | None = None
    config: dict = field(default_factory=dict)
    delay: DelayModel = field(default_factory=DelayModel)
    scheduler: str = "fair"
    adversary: Adversary = field(default_factory=Adversary)
    faults: list[Fault] = field(default_factory=list)
    client: ClientPlan = field(default_factory=ClientPlan)
    duration_s: float = 60.0
    seed: int = 0
    scheme: str = "test-sha256"
    crypto_cost: CryptoCost = field(default_factory=CryptoCost)
    message_log: bool = False
    property_run: bool = True

    @property
    def fault_threshold(self) -> int:
        return (self.n - 1) // 3 if self.f is None else self.f

    def validate(self) -> "Scenario":
        if self.n < 1:
            raise ScenarioError("n must be positive")
        f = self.fault_threshold
        if f < 0 or 3 * f + 1 > self.n:
            raise ScenarioError(f"n={self.n} cannot tolerate f={f}")
        if self.scheduler not in SCHEDULERS:
            raise ScenarioError(f"unknown scheduler {self.scheduler!r}")
        if self.delay.model not in DELAY_MODELS:
            raise ScenarioError(f"unknown delay model {self.delay.model!r}")
        if self.delay.model == "matrix":
            m = self.delay.matrix_ms
            if not m or len(m) != self.n or any(len(row) != self.n for row in m):
                raise ScenarioError("delay matrix must be n x n")
        if self.client.strategy not in STRATEGIES:
            raise ScenarioError(f"unknown client strategy {self.client.strategy!r}")
        if self.client.clients < 1 or self.client.rate <= 0:
            raise ScenarioError("client plan needs at least one client and a positive rate")
        if not 0 <= self.seed < 2**64:
            raise ScenarioError("seed must be a 64-bit unsigned integer")
        faulty = set()
        for fl in self.faults:
            if fl.kind not in FAULT_KINDS:
                raise ScenarioError(f"unknown fault kind {fl.kind!r}")
            if not 0 <= fl.replica < self.n:
                raise ScenarioError(f"fault on unknown replica {fl.replica}")
            faulty.add(fl.replica)
        if self.property_run and len(faulty) > f:
            raise ScenarioError(f"{len(faulty)} faulty replicas exceed f={f}")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        d = dict(d)
        sub = {"delay": DelayModel, "adversary": Adversary, "client": ClientPlan, "crypto_cost": CryptoCost}
        for key, typ in sub.items():
            if key in d and isinstance(d[key], dict):
                d[key] = _build(typ, d[key])
        if "faults" in d:
            d["faults"] = [_build(Fault, x) for x in d["faults"]]
        return _build(cls, d).validate()


def _build(typ, d: dict):
    known = typ.__dataclass_fields__
    extra = set(d) - set(known)
    if extra:
        raise ScenarioError(f"unknown {typ.__name__} fields: {sorted(extra)}")
    return typ(**d)


def inject_fault(sc: Scenario, replica: int, kind: str, **params) -> Scenario:
    at_s = params.pop("at_s", 0.0)
    sc.faults.append(Fault(replica, kind, at_s, params))
    return sc.validate()


def load_scenario(path: str | Path) -> Scenario:
    return Scenario.from_dict(read_config(path))
