"""Atomic broadcast property checks over simulation traces."""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

Rid = tuple[int, int]


@dataclass
class Violation:
    prop: str
    detail: str

    def __str__(self) -> str:
        return f"{self.prop}: {self.detail}"


@dataclass
class CheckReport:
    violations: list[Violation] = field(default_factory=list)
    incomplete: list[str] = field(default_factory=list)
    stats: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, prop: str, detail: str) -> None:
        self.violations.append(Violation(prop, detail))


@dataclass
class TraceView:
    """Per-replica facts extracted from a trace."""

    n: int
    f: int
    complete: bool
    byzantine: set[int]
    faulty: set[int]
    logs: dict[int, list[Rid]]
    submitted: dict[Rid, tuple[int, ...]]

    @property
    def correct(self) -> list[int]:
        return [i for i in range(self.n) if i not in self.faulty]

    @property
    def honest(self) -> list[int]:
        """Correct replicas plus crashed ones, whose logs must be prefixes."""
        return [i for i in range(self.n) if i not in self.byzantine]


def view(trace) -> TraceView:
    sc = trace.scenario
    n = sc["n"]
    f = (n - 1) // 3 if sc.get("f") is None else sc["f"]
    faulty = {fl["replica"] for fl in sc.get("faults", [])}
    byzantine = {fl["replica"] for fl in sc.get("faults", []) if fl["kind"] != "crash"}
    logs: dict[int, list[Rid]] = defaultdict(list)
    submitted: dict[Rid, tuple[int, ...]] = {}
    for rec in trace.records:
        ev = rec["ev"]
        if ev == "deliver":
            logs[rec["rep"]].append((rec["client"], rec["seq"]))
        elif ev == "submit":
            submitted[(rec["client"], rec["seq"])] = tuple(rec["targets"])
    return TraceView(n, f, trace.complete, byzantine, faulty, {i: logs[i] for i in range(n)}, submitted)


def check_atomic_broadcast(trace) -> CheckReport:
    v = view(trace)
    rep = CheckReport()
    correct, honest = v.correct, v.honest
    sets = {i: set(v.logs[i]) for i in range(v.n)}

    for i in honest:
        if len(sets[i]) != len(v.logs[i]):
            seen: set[Rid] = set()
            dups = [m for m in v.logs[i] if m in seen or seen.add(m)]
            rep.add("integrity", f"replica {i} delivered {dups[:3]} more than once")
        if not v.byzantine:
            unknown = sets[i] - v.submitted.keys()
            if unknown:
                rep.add("integrity", f"replica {i} delivered never-submitted {sorted(unknown)[:3]}")

    for a in range(len(honest)):
        for b in range(a + 1, len(honest)):
            i, j = honest[a], honest[b]
            la, lb = v.logs[i], v.logs[j]
            k = min(len(la), len(lb))
            if la[:k] != lb[:k]:
                at = next(x for x in range(k) if la[x] != lb[x])
                rep.add("total-order", f"replicas {i} and {j} diverge at position {at}: {la[at]} vs {lb[at]}")

    anywhere = set().union(*(sets[i] for i in correct)) if correct else set()
    for i in correct:
        missing = anywhere - sets[i]
        if missing:
            msg = f"replica {i} lacks {len(missing)} requests delivered elsewhere"
            (rep.add("agreement", msg) if v.complete else rep.incomplete.append(msg))

    owed = [m for m, tg in v.submitted.items() if any(t not in v.faulty for t in tg)]
    lost = [m for m in owed if m not in anywhere]
    if lost:
        msg = f"{len(lost)} requests submitted to a correct replica never delivered, e.g. {sorted(lost)[:3]}"
        (rep.add("validity", msg) if v.complete else rep.incomplete.append(msg))

    rep.stats = {
        "complete": v.complete,
        "submitted": len(v.submitted),
        "delivered": {i: len(v.logs[i]) for i in range(v.n)},
        "correct": correct,
    }
    return rep


def check_vcbc_consistency(trace) -> CheckReport:
    """At most one payload digest delivered per VCBC instance across
    non-Byzantine replicas."""
    byz = {fl["replica"] for fl in trace.scenario.get("faults", []) if fl["kind"] != "crash"}
    seen: dict[tuple[int, int], set[str]] = defaultdict(set)
    for rec in trace.records:
        if rec["ev"] == "vcbc" and rec["rep"] not in byz:
            seen[(rec["origin"], rec["prio"])].add(rec["digest"])
    rep = CheckReport()
    for key, digests in sorted(seen.items()):
        if len(digests) > 1:
            rep.add("vcbc-consistency", f"instance {key} delivered {len(digests)} payloads")
    rep.stats = {"instances": len(seen)}
    return rep
