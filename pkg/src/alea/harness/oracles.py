"""Reference oracles rebuilt from traces, independent of the replica's queues.

The choice function takes a replica's VCBC outputs for one queue and its
delivered set S at a round boundary and returns the slot that queue should
expose as head, or ``None``. A batch counts as "in S" when all of its
requests are.
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

Rid = tuple[int, int]


def choice_oracle(outputs: dict[int, frozenset], S: set, upto: int | None = None) -> int | None:
    """Lowest slot ``s`` with an output not in S such that every earlier slot
    has an output that is in S; ``None`` when no slot qualifies."""
    s = 0
    while True:
        if upto is not None and s > upto:
            return None
        batch = outputs.get(s)
        if batch is None:
            return None
        if not batch <= S:
            return s
        s += 1


@dataclass
class BridgeReport:
    heads_checked: int = 0
    votes_checked: int = 0
    counterexamples: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.counterexamples


def check_bridges(trace, limit: int = 20) -> BridgeReport:
    """Replays each honest replica's VCBC outputs and deliveries in trace order.

    At every round entry the reported (head, present) pair of each queue must
    match the choice oracle, and every non-eager vote must be 1 exactly when
    the oracle has a choice for the leader's queue.
    """
    sc = trace.scenario
    byz = {fl["replica"] for fl in sc.get("faults", []) if fl["kind"] != "crash"}
    outputs: dict[int, dict[int, dict[int, frozenset]]] = defaultdict(lambda: defaultdict(dict))
    S: dict[int, set] = defaultdict(set)
    leader_of: dict[tuple[int, int], int] = {}
    rep = BridgeReport()

    def bad(msg):
        if len(rep.counterexamples) < limit:
            rep.counterexamples.append(msg)
        else:
            rep.counterexamples[-1] = f"... and more ({msg})"

    for rec in trace.records:
        ev = rec["ev"]
        i = rec.get("rep")
        if i in byz:
            continue
        if ev == "vcbc":
            outputs[i][rec["origin"]][rec["prio"]] = frozenset(tuple(x) for x in rec["reqs"])
        elif ev == "deliver":
            S[i].add((rec["client"], rec["seq"]))
        elif ev == "round":
            leader_of[(i, rec["round"])] = rec["leader"]
            for q, (head, present) in enumerate(rec["heads"]):
                want = choice_oracle(outputs[i][q], S[i])
                got = head if present else None
                rep.heads_checked += 1
                if want != got:
                    bad(f"head rep {i} round {rec['round']} queue {q}: head={got} oracle={want}")
        elif ev == "vote":
            r = rec["round"]
            if rec["eager"]:
                # Early votes are cast before the round's leader is recorded.
                continue
            q = leader_of.get((i, r))
            if q is None:
                bad(f"vote rep {i} round {r}: vote before round entry")
                continue
            want = int(choice_oracle(outputs[i][q], S[i]) is not None)
            rep.votes_checked += 1
            if want != rec["vote"]:
                bad(f"vote rep {i} round {r}: vote={rec['vote']} oracle={want}")
    return rep


@dataclass
class SigmaReport:
    per_slot: dict[tuple[int, int], int] = field(default_factory=dict)
    per_slot_alt: dict[tuple[int, int], int] = field(default_factory=dict)
    undelivered: int = 0

    @property
    def mean(self) -> float | None:
        return sum(self.per_slot.values()) / len(self.per_slot) if self.per_slot else None

    @property
    def mean_alt(self) -> float | None:
        return sum(self.per_slot_alt.values()) / len(self.per_slot_alt) if self.per_slot_alt else None


def compute_sigma(trace) -> SigmaReport:
    """Agreement rounds spent on each delivered slot.

    For a slot (i, s) delivered at round R the primary count is the number of
    rounds r <= R led by i in which some honest replica voted with head s
    after (i, s) had been broadcast. The alternative count drops the
    broadcast condition, so it also charges rounds that visited the queue
    before the batch existed.
    """
    sc = trace.scenario
    byz = {fl["replica"] for fl in sc.get("faults", []) if fl["kind"] != "crash"}
    born: dict[tuple[int, int], int] = {}
    heads: dict[int, list[tuple[int, int]]] = defaultdict(list)  # round -> (head, t)
    leader: dict[int, int] = {}
    delivered: dict[tuple[int, int], int] = {}
    for rec in trace.records:
        ev = rec["ev"]
        if ev == "broadcast":
            born.setdefault((rec["rep"], rec["prio"]), rec["t"])
        elif ev == "equivocate":
            born.setdefault((rec["rep"], rec["prio"]), rec["t"])
        if rec.get("rep") in byz:
            continue
        if ev == "round":
            leader[rec["round"]] = rec["leader"]
        elif ev == "vote":
            heads[rec["round"]].append((rec["head"], rec["t"]))
        elif ev == "ac_deliver":
            delivered.setdefault((rec["origin"], rec["prio"]), rec["round"])
    out = SigmaReport()
    by_queue: dict[int, list[int]] = defaultdict(list)
    for r, q in leader.items():
        by_queue[q].append(r)
    for (q, s), R in sorted(delivered.items()):
        t0 = born.get((q, s))
        prim = alt = 0
        for r in by_queue[q]:
            if r > R:
                continue
            hs = heads.get(r, ())
            if any(h == s for h, _ in hs):
                alt += 1
                if t0 is not None and any(h == s and t >= t0 for h, t in hs):
                    prim += 1
        out.per_slot[(q, s)] = prim
        out.per_slot_alt[(q, s)] = alt
    out.undelivered = len(set(born) - set(delivered))
    return out
