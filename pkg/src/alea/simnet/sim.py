"""Deterministic discrete-event simulation of a replica group.

Events are kept in a heap ordered by (virtual time in ns, global sequence
number), so a run is a pure function of the scenario and seed. Channels
are reliable: a message to a live replica is delivered exactly once, though
schedulers may delay and reorder it.
"""
from __future__ import annotations

import heapq
import json
import random
from collections import Counter
from dataclasses import dataclass, field

from .. import tcrypto
from ..clients import client_plan
from ..net.wire import Kind, MessageEnvelope, stage_of
from ..replica import MS, SECOND, Replica, config_from_dict
from .faults import EquivocatingReplica
from .scenario import Scenario

DELIVER, TIMER, SUBMIT, START, CRASH = range(5)
HELD_KINDS = (Kind.SEND, Kind.FINAL)


@dataclass
class Trace:
    scenario: dict
    seed: int
    records: list = field(default_factory=list)
    complete: bool = False
    end_ns: int = 0

    def header(self) -> dict:
        return {"ev": "header", "seed": self.seed, "scenario": self.scenario}

    def footer(self) -> dict:
        return {"ev": "end", "complete": self.complete, "t": self.end_ns}

    def lines(self):
        for rec in [self.header(), *self.records, self.footer()]:
            yield json.dumps(rec, sort_keys=True, separators=(",", ":"))

    def dumps(self) -> str:
        return "\n".join(self.lines()) + "\n"

    def write(self, path) -> None:
        with open(path, "w") as fh:
            for line in self.lines():
                fh.write(line)
                fh.write("\n")


def load_trace(path) -> Trace:
    with open(path) as fh:
        records = [json.loads(line) for line in fh if line.strip()]
    return trace_from_records(records)


def trace_from_records(records: list[dict]) -> Trace:
    if not records or records[0].get("ev") != "header":
        raise ValueError("trace does not start with a header record")
    head, body = records[0], records[1:]
    tr = Trace(head["scenario"], head["seed"])
    if body and body[-1].get("ev") == "end":
        tr.complete = body[-1]["complete"]
        tr.end_ns = body[-1]["t"]
        body = body[:-1]
    tr.records = body
    return tr


class Simulation:
    def __init__(self, sc: Scenario, seed: int | None = None):
        sc.validate()
        self.sc = sc
        self.seed = sc.seed if seed is None else seed
        self.n = n = sc.n
        self.f = f = sc.fault_threshold
        self.rng = random.Random(self.seed)
        self.adv_rng = random.Random(self.seed ^ 0x5EED_AD7E)
        self.keys = tcrypto.provision(n, f, self.seed.to_bytes(8, "big"), sc.scheme)

        self.faults = {fl.replica: fl for fl in sc.faults}
        self.silent = {i for i, fl in self.faults.items() if fl.kind == "silent"}
        self.byzantine = {i for i, fl in self.faults.items() if fl.kind != "crash"}
        self.crashed: set[int] = set()
        self.replicas: list[Replica] = []
        for i in range(n):
            cfg = config_from_dict(n, i, sc.config, sc.f)
            fl = self.faults.get(i)
            if fl is not None and fl.kind == "equivocating-vcbc-sender":
                rep = EquivocatingReplica(cfg, self.keys, random.Random(self.seed * 31 + i))
            else:
                rep = Replica(cfg, self.keys)
            self.replicas.append(rep)

        self.heap: list = []
        self._inflight = 0  # queued events other than timers
        self._seq = 0
        self.now = 0
        self.records: list[dict] = []
        self.msg_count: Counter = Counter()
        self.msg_bytes: Counter = Counter()
        self.busy = [0] * n
        self._link_last: dict[tuple[int, int], int] = {}
        self._targets: dict[tuple[int, int], frozenset[int]] = {}
        # per target: (dst, release after round, src, env, sent at, order)
        self.held: dict[int, list[tuple]] = {}
        self._held_seq = 0
        self._hold_until: dict[tuple[int, int, int], int] = {}
        self._dmat = None
        if sc.delay.model == "matrix":
            self._dmat = [[int(x * MS) for x in row] for row in sc.delay.matrix_ms]
        self._cost = sc.crypto_cost

    # -- event plumbing ---------------------------------------------------

    def _push(self, t: int, etype: int, rep: int, a=None, b=None, c=None) -> None:
        self._seq += 1
        if etype != TIMER:
            self._inflight += 1
        heapq.heappush(self.heap, (t, self._seq, etype, rep, a, b, c))

    def _rec(self, rec: dict) -> None:
        rec["t"] = self.now
        self.records.append(rec)

    def _delay(self, src: int, dst: int) -> int:
        if src == dst:
            return 0
        dm = self.sc.delay
        if dm.model == "fixed":
            d = int(dm.ms * MS)
        elif dm.model == "uniform":
            d = int(self.rng.uniform(dm.low_ms, dm.high_ms) * MS)
        else:
            d = self._dmat[src][dst]
        if self.sc.scheduler == "random":
            d = int(d * self.rng.uniform(0.0, 10.0))
        return d

    def _adv_targets(self, env: MessageEnvelope) -> frozenset[int]:
        key = (env.origin, env.seq)
        tg = self._targets.get(key)
        if tg is None:
            adv = self.sc.adversary
            chosen = [list(x) for x in adv.slots]
            selected = list(key) in chosen or (adv.probability > 0 and self.adv_rng.random() < adv.probability)
            if not selected:
                tg = frozenset()
            elif adv.targets is not None:
                tg = frozenset(x for x in adv.targets if x != env.origin)
            else:
                others = [j for j in range(self.n) if j != env.origin]
                tg = frozenset(self.adv_rng.sample(others, self.n - self.f - 1))
            self._targets[key] = tg
        return tg

    def _hold_round(self, dst: int, origin: int) -> int:
        rep = self.replicas[dst]
        r = rep.r
        for rr in range(r, r + 10 * self.n):
            if rep.leader(rr) == origin:
                return rr
        return r

    def _dispatch(self, src: int, sends, t0: int) -> None:
        if src in self.silent:
            return
        adversarial = self.sc.scheduler == "adversarial-vcbc-delay"
        for dst, env in sends:
            kind = env.kind
            self.msg_count[kind] += 1
            self.msg_bytes[kind] += env.size
            if adversarial and kind in HELD_KINDS and dst != src and dst in self._adv_targets(env):
                # The hold window is fixed when the instance first reaches the target.
                hk = (env.origin, env.seq, dst)
                rr = self._hold_until.get(hk)
                if rr is None:
                    rr = self._hold_until[hk] = self._hold_round(dst, env.origin)
                if self.replicas[dst].r <= rr:
                    self._held_seq += 1
                    lst = self.held.setdefault(dst, [])
                    lst.append((dst, rr, src, env, t0, self._held_seq))
                    lst.sort(key=lambda x: (x[1], x[5]))
                    continue
            t = t0 + self._delay(src, dst)
            if self.sc.scheduler == "fifo":
                link = (src, dst)
                t = max(t, self._link_last.get(link, 0))
                self._link_last[link] = t
            self._push(t, DELIVER, dst, src, env, t0)

    def _release(self, rep: int | None = None) -> None:
        if rep is None:
            items = [x for lst in self.held.values() for x in lst]
            items.sort(key=lambda x: x[5])
            self.held.clear()
        else:
            lst = self.held.get(rep)
            r = self.replicas[rep].r
            if not lst or lst[0][1] >= r:
                return
            items = [x for x in lst if x[1] < r]
            keep = [x for x in lst if x[1] >= r]
            if keep:
                self.held[rep] = keep
            else:
                del self.held[rep]
        for dst, _, src, env, t0, _ in items:
            self._push(self.now + self._delay(src, dst), DELIVER, dst, src, env, t0)

    def _apply(self, i: int, fx) -> None:
        t0 = self.now
        if self._cost.sign_us or self._cost.verify_us or self._cost.combine_us:
            c = self._cost
            ops = tcrypto.base.OPS
            cost = ops["sign"] * c.sign_us + ops["verify"] * c.verify_us + ops["combine"] * c.combine_us
            ops.clear()
            t0 += int(cost * 1000)
            self.busy[i] = t0
        for rec in fx.records:
            self._rec(rec)
        for delay, key in fx.timers:
            self._push(t0 + delay, TIMER, i, key)
        self._dispatch(i, fx.sends, t0)
        if self.held:
            self._release(i)

    # -- client plan ------------------------------------------------------

    def _schedule_clients(self) -> None:
        plan = self.sc.client
        if plan.requests <= 0:
            return
        subs = client_plan(plan.strategy, plan.rate, plan.size, n=self.n, f=self.f, requests=plan.requests,
                           clients=plan.clients, seed=self.seed, start_s=plan.start_s,
                           leader_fn=self.replicas[0].cfg.leader)
        for sub in subs:
            self._push(sub.t_ns, SUBMIT, -1, sub.request, sub.targets)

    # -- main loop --------------------------------------------------------

    def run(self) -> Trace:
        tcrypto.base.OPS.clear()
        for i in range(self.n):
            self._push(0, START, i)
        for i, fl in self.faults.items():
            if fl.kind == "crash":
                self._push(int(fl.at_s * SECOND), CRASH, i)
        self._schedule_clients()
        horizon = int(self.sc.duration_s * SECOND)
        complete = False
        while True:
            if not self._inflight and self.held:
                # Holding back the only traffic left would delay it forever.
                self._release()
            if not self.heap:
                complete = True
                break
            if self.heap[0][0] > horizon:
                break
            t, _, etype, i, a, b, c = heapq.heappop(self.heap)
            if etype != TIMER:
                self._inflight -= 1
            if i >= 0 and t < self.busy[i]:
                self._push(self.busy[i], etype, i, a, b, c)
                continue
            self.now = t
            if etype == SUBMIT:
                self._rec({"ev": "submit", "client": a.client, "seq": a.seq, "targets": list(b)})
                for tgt in b:
                    if tgt not in self.crashed:
                        self.now = t
                        self._apply(tgt, self.replicas[tgt].submit(a, t))
                continue
            if i in self.crashed:
                continue
            rep = self.replicas[i]
            if etype == DELIVER:
                if self.sc.message_log:
                    self._rec({"ev": "msg", "kind": int(b.kind), "src": a, "dst": i, "size": b.size, "ts": c})
                self._apply(i, rep.receive(b, t))
            elif etype == TIMER:
                self._apply(i, rep.on_timer(a, t))
            elif etype == START:
                self._apply(i, rep.start(t))
            elif etype == CRASH:
                self.crashed.add(i)
                self._rec({"ev": "crash", "rep": i})
        self.now = min(self.now, horizon) if not complete else self.now
        self._summary()
        tr = Trace(self.sc.to_dict(), self.seed, self.records, complete, self.now)
        return tr

    def _summary(self) -> None:
        stages: Counter = Counter()
        for k, v in self.msg_count.items():
            stages[stage_of(Kind(k))] += v
        self._rec({
            "ev": "summary",
            "count": {Kind(k).name: v for k, v in sorted(self.msg_count.items())},
            "bytes": {Kind(k).name: v for k, v in sorted(self.msg_bytes.items())},
            "stages": dict(sorted(stages.items())),
            "faulty": sorted(self.faults),
            "byzantine": sorted(self.byzantine),
            "crashed": sorted(self.crashed),
            "rounds": [r.r for r in self.replicas],
            "held_pending": sum(map(len, self.held.values())),
        })


def run(sc: Scenario, seed: int | None = None) -> Trace:
    return Simulation(sc, seed).run()
