"""The replica: broadcast component, agreement loop and recovery.

The replica is a serial event processor. Each entry point (``start``,
``submit``, ``receive``, ``on_timer``) takes the current virtual time in
nanoseconds and returns an :class:`Effects` with the messages to send,
timers to arm, requests delivered to the application and trace records.
Identical event sequences produce identical effects.

Client requests are batched and disseminated through VCBC; each VCBC output
lands in the priority queue of its origin. Agreement rounds visit the queues
in ``leader_fn`` order and run one binary agreement per round on whether to
deliver the head of the visited queue.
"""
from __future__ import annotations

import struct
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

from . import tcrypto
from .aba import Aba
from .batch import Batch, Request, batch_digest, decode_requests, encode_requests
from .net.wire import AGREEMENT_KINDS, BROADCAST_KINDS, Kind, MessageEnvelope
from .pqueue import PriorityQueue
from .vcbc import VcbcId, VcbcInstance, VerifiablePayload, canonical_bytes

MS = 1_000_000
SECOND = 1_000_000_000
EAGER_ORIGIN = 1  # INIT envelopes with this origin carry early votes

PROPOSING = "PROPOSING"
AWAIT_ABA = "AWAIT_ABA"
AWAIT_VALUE = "AWAIT_VALUE"

_ENTRY = struct.Struct(">QH")
_LEN = struct.Struct(">I")


class ConfigError(ValueError):
    pass


class ProtocolError(RuntimeError):
    pass


@dataclass
class Features:
    unanimity: bool = True
    pipelining_prediction: bool = False
    parallel_rounds: bool = False
    parallel_depth: int = 0  # 0 means n


@dataclass
class ReplicaConfig:
    n: int
    own_index: int = 0
    f: int | None = None
    batch_size: int = 1
    batch_timeout_ns: int = 50 * MS
    # a timed-out partial batch waits while this many own slots are undelivered
    partial_backlog: int = 1
    leader_fn: Callable[[int], int] | None = None
    features: Features = field(default_factory=Features)
    await_value_warn_ns: int = 5 * SECOND
    prediction_weight: float = 0.1
    prediction_cap_ns: int = 1 * SECOND

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError("n must be at least 1")
        if self.f is None:
            self.f = (self.n - 1) // 3
        if self.f < 0 or 3 * self.f + 1 > self.n:
            raise ConfigError(f"n={self.n} cannot tolerate f={self.f}")
        if not 0 <= self.own_index < self.n:
            raise ConfigError("own_index out of range")
        if self.batch_size < 1:
            raise ConfigError("batch size must be positive")
        if self.partial_backlog < 1:
            raise ConfigError("partial_backlog must be positive")
        if not 0 <= self.features.parallel_depth <= self.n:
            raise ConfigError("parallel_depth must lie in [0, n]")

    def leader(self, r: int) -> int:
        return self.leader_fn(r) if self.leader_fn else r % self.n


class Delivery(NamedTuple):
    request: Request
    round: int
    origin: int
    priority: int


@dataclass
class Effects:
    sends: list = field(default_factory=list)
    timers: list = field(default_factory=list)
    outputs: list = field(default_factory=list)
    records: list = field(default_factory=list)


def pack_filler(entries: list[VerifiablePayload]) -> bytes:
    parts = [_LEN.pack(len(entries))]
    for m in entries:
        sig = m.proof.sig_bytes
        parts += [_ENTRY.pack(m.id.priority, len(sig)), sig, _LEN.pack(len(m.payload)), m.payload]
    return b"".join(parts)


def unpack_filler(queue: int, body: bytes) -> list[VerifiablePayload]:
    out = []
    try:
        (count,) = _LEN.unpack_from(body)
        off = _LEN.size
        for _ in range(count):
            prio, slen = _ENTRY.unpack_from(body, off)
            off += _ENTRY.size
            sig = body[off : off + slen]
            off += slen
            (plen,) = _LEN.unpack_from(body, off)
            off += _LEN.size
            payload = body[off : off + plen]
            if len(payload) != plen or len(sig) != slen:
                break
            off += plen
            vid = VcbcId(queue, prio)
            proof = tcrypto.CombinedSignature(tcrypto.digest(canonical_bytes(vid, payload)), sig)
            out.append(VerifiablePayload(vid, payload, proof))
    except struct.error:
        pass
    return out


class Replica:
    def __init__(self, cfg: ReplicaConfig, keys: tcrypto.KeyBundle):
        self.cfg = cfg
        self.n, self.f, self.me = cfg.n, cfg.f, cfg.own_index
        self.keys = keys

        self.S: set[tuple[int, int]] = set()
        self.queues = [PriorityQueue(x) for x in range(self.n)]
        self.buf: list[Request] = []
        self._buf_ids: set[tuple[int, int]] = set()
        self._batch_gen = 0
        self._batch_armed = False
        self.priority = 0

        self.r = 0
        self.phase = PROPOSING
        self._round_started = False
        self._deferring = False
        self._defer_expired = False

        self.vcbcs: dict[tuple[int, int], VcbcInstance] = {}
        self.proofs: dict[tuple[int, int], VerifiablePayload] = {}
        self._send_seen: dict[tuple[int, int], int] = {}
        self._rid_index: dict[tuple[int, int], set[tuple[int, int]]] = {}
        self.ewma: float | None = None

        self.abas: dict[int, Aba] = {}
        self._aba_floor = 0
        self.votes: dict[int, int] = {}
        self.eager: dict[int, dict[int, int]] = {}  # round -> sender -> slot
        self._eager_sent: set[int] = set()

        self.stats: Counter = Counter()
        self.started = False
        self.now = 0
        self._fx = Effects()

    # -- entry points -----------------------------------------------------

    def _begin(self, now: int) -> Effects:
        self.now = now
        self._fx = Effects()
        return self._fx

    def start(self, now: int = 0) -> Effects:
        fx = self._begin(now)
        self.started = True
        self._drive()
        return fx

    def submit(self, req: Request, now: int = 0) -> Effects:
        fx = self._begin(now)
        self.on_client_request(req)
        self._drive()
        return fx

    def receive(self, env: MessageEnvelope, now: int = 0) -> Effects:
        fx = self._begin(now)
        k = env.kind
        if k == Kind.INIT and env.origin == EAGER_ORIGIN:
            self._on_eager(env)
        elif k in AGREEMENT_KINDS:
            self._on_aba_msg(env)
        elif k in BROADCAST_KINDS:
            self._on_vcbc_msg(env)
        elif k == Kind.FILLGAP:
            self.on_fill_gap(env.sender, env.origin, env.seq)
        elif k == Kind.FILLER:
            self.on_filler(env.sender, env.origin, unpack_filler(env.origin, env.body))
        elif k == Kind.CLIENTREQ:
            self.on_client_request(Request(env.origin, env.seq, env.body))
        self._drive()
        return fx

    def on_timer(self, key: tuple, now: int = 0) -> Effects:
        fx = self._begin(now)
        kind = key[0]
        if kind == "batch":
            if key[1] == self._batch_gen and self.buf:
                if self.priority - self.queues[self.me].head < self.cfg.partial_backlog:
                    self._flush()
                else:
                    self._fx.timers.append((self.cfg.batch_timeout_ns, key))
        elif kind == "defer":
            if key[1] == self.r and self._deferring:
                self._defer_expired = True
        elif kind == "await":
            if key[1] == self.r and self.phase == AWAIT_VALUE:
                self.stats["await_value_warnings"] += 1
                self._rec("await_value_slow", round=self.r)
        self._drive()
        return fx

    # -- helpers ----------------------------------------------------------

    def leader(self, r: int) -> int:
        return self.cfg.leader(r)

    def _rec(self, ev: str, **fields) -> None:
        fields["ev"] = ev
        fields["rep"] = self.me
        self._fx.records.append(fields)

    def _send(self, msgs) -> None:
        self._fx.sends.extend(msgs)

    def _to_all(self, env: MessageEnvelope) -> None:
        self._fx.sends.extend((j, env) for j in range(self.n))

    def _aba(self, r: int) -> Aba:
        aba = self.abas.get(r)
        if aba is None:
            aba = Aba(r, self.n, self.f, self.me, self.keys.coin, self.keys.coin_shares[self.me],
                      unanimity=self.cfg.features.unanimity)
            self.abas[r] = aba
        return aba

    def _covered(self, batch: Batch) -> bool:
        S = self.S
        return all(rid in S for rid in batch.rids)

    # -- broadcast component ----------------------------------------------

    def on_client_request(self, m: Request) -> None:
        rid = m.rid
        if rid in self.S or rid in self._buf_ids:
            self.stats["duplicate_requests"] += 1
            return
        self.buf.append(m)
        self._buf_ids.add(rid)
        if len(self.buf) >= self.cfg.batch_size:
            self._flush()
        elif not self._batch_armed:
            self._batch_armed = True
            self._fx.timers.append((self.cfg.batch_timeout_ns, ("batch", self._batch_gen)))

    def _flush(self) -> None:
        requests = tuple(self.buf)
        self.buf.clear()
        self._buf_ids.clear()
        self._batch_gen += 1
        self._batch_armed = False
        self.start_vcbc(requests)

    def start_vcbc(self, requests) -> None:
        key = (self.me, self.priority)
        self.priority += 1
        inst = self._vcbc(key)
        payload = encode_requests(requests)
        self._send(inst.start_broadcast(payload))
        self._rec("broadcast", prio=key[1], size=len(requests), digest=batch_digest(payload))

    def _vcbc(self, key: tuple[int, int]) -> VcbcInstance:
        inst = self.vcbcs.get(key)
        if inst is None:
            inst = VcbcInstance(VcbcId(*key), self.me, self.n, self.f, self.keys.vcbc,
                                self.keys.vcbc_shares[self.me])
            self.vcbcs[key] = inst
        return inst

    def _on_vcbc_msg(self, env: MessageEnvelope) -> None:
        key = (env.origin, env.seq)
        if key in self.proofs or not 0 <= env.origin < self.n:
            return
        inst = self._vcbc(key)
        if env.kind == Kind.SEND and env.sender == env.origin:
            self._send_seen.setdefault(key, self.now)
        flagged = inst.equivocation
        out, delivered = inst.handle(env)
        self._send(out)
        if inst.equivocation and not flagged:
            self.stats["equivocations"] += 1
            self._rec("equivocation", origin=key[0], prio=key[1])
        if delivered:
            self._vcbc_delivered(inst)

    def _vcbc_delivered(self, inst: VcbcInstance) -> None:
        key = (inst.id.sender, inst.id.priority)
        self.proofs[key] = inst.make_verifiable()
        del self.vcbcs[key]
        t0 = self._send_seen.pop(key, None)
        if t0 is not None:
            sample = self.now - t0
            w = self.cfg.prediction_weight
            self.ewma = sample if self.ewma is None else w * sample + (1 - w) * self.ewma
        requests = decode_requests(inst.payload)
        if requests is None:
            self.stats["malformed_batches"] += 1
            requests = ()
        batch = Batch(requests, key[0], key[1])
        self._rec("vcbc", origin=key[0], prio=key[1], digest=batch_digest(inst.payload),
                  reqs=[list(rid) for rid in batch.rids])
        self.on_vcbc_deliver(inst.id, batch)

    def on_vcbc_deliver(self, vid: VcbcId, batch: Batch) -> None:
        q = self.queues[vid.sender]
        if not q.enqueue(vid.priority, batch):
            return
        if self._covered(batch):
            q.dequeue(batch)
            return
        slot = (vid.sender, vid.priority)
        for rid in batch.rids:
            if rid not in self.S:
                self._rid_index.setdefault(rid, set()).add(slot)

    # -- agreement component ----------------------------------------------

    def _idle(self) -> bool:
        return all(q.peek() is None for q in self.queues)

    def round_start(self) -> int | None:
        """Choose this round's input; ``None`` while a 0-vote is deferred."""
        q = self.queues[self.leader(self.r)]
        if q.peek() is not None:
            return 1
        if self._deferring:
            return 0 if self._defer_expired else None
        if self._should_defer(q):
            self._deferring = True
            return None
        return 0

    def _should_defer(self, q: PriorityQueue) -> bool:
        if not self.cfg.features.pipelining_prediction or self.ewma is None:
            return False
        t0 = self._send_seen.get((q.id, q.head))
        if t0 is None:
            return False
        deadline = t0 + min(2 * self.ewma, self.cfg.prediction_cap_ns)
        if deadline <= self.now:
            return False
        self._fx.timers.append((int(deadline - self.now), ("defer", self.r)))
        return True

    def _vote(self, b: int) -> None:
        q = self.queues[self.leader(self.r)]
        self._rec("vote", round=self.r, vote=b, eager=False, deferred=self._deferring,
                  head=q.head, present=int(q.peek() is not None))
        self._deferring = self._defer_expired = False
        self.votes[self.r] = b
        aba = self._aba(self.r)
        if not aba.proposed and not aba.finished:
            self._send(aba.propose(b))
        self.phase = AWAIT_ABA

    def _drive(self) -> None:
        if not self.started:
            return
        while True:
            if self.phase == PROPOSING:
                if not self._round_started:
                    if self.r not in self.abas and self._idle():
                        break
                    self._round_started = True
                    self._rec("round", round=self.r, leader=self.leader(self.r),
                              heads=[[q.head, int(q.peek() is not None)] for q in self.queues])
                b = self.round_start()
                if b is None:
                    break
                self._vote(b)
            elif self.phase == AWAIT_ABA:
                aba = self.abas.get(self.r)
                if aba is not None and aba.decided is not None:
                    self.on_aba_decide(self.r, aba.decided)
                elif self._eager_unanimous():
                    q = self.queues[self.leader(self.r)]
                    self._rec("decide", round=self.r, bit=1, via="eager", ir=0)
                    self.ac_deliver(q.peek(), q.head)
                    self._advance()
                else:
                    break
            else:
                q = self.queues[self.leader(self.r)]
                value = q.peek()
                if value is None:
                    break
                self.ac_deliver(value, q.head)
                self._advance()
        if self.cfg.features.parallel_rounds:
            self.parallel_round_control()

    def on_aba_decide(self, r: int, b: int) -> None:
        if r != self.r:
            raise ProtocolError(f"decision for round {r} while in round {self.r}")
        if self.phase != AWAIT_ABA:
            raise ProtocolError(f"unexpected decision in phase {self.phase}")
        aba = self.abas[r]
        self._rec("decide", round=r, bit=b, via=aba.decided_via, ir=aba.decided_round)
        if b == 0:
            self._advance()
            return
        q = self.queues[self.leader(r)]
        value = q.peek()
        if value is not None:
            self.ac_deliver(value, q.head)
            self._advance()
            return
        self.stats["fill_gaps"] += 1
        self._rec("fillgap", round=r, queue=q.id, slot=q.head)
        self._to_all(MessageEnvelope(Kind.FILLGAP, self.me, q.id, q.head))
        self.phase = AWAIT_VALUE
        self._fx.timers.append((self.cfg.await_value_warn_ns, ("await", r)))

    def _advance(self) -> None:
        self.r += 1
        self.phase = PROPOSING
        self._round_started = False
        self._deferring = self._defer_expired = False
        while self._aba_floor < self.r:
            aba = self.abas.get(self._aba_floor)
            if aba is not None and not aba.finished:
                break
            self.abas.pop(self._aba_floor, None)
            self.votes.pop(self._aba_floor, None)
            self._aba_floor += 1
        for rr in [x for x in self.eager if x < self.r]:
            del self.eager[rr]
        self._eager_sent = {x for x in self._eager_sent if x >= self.r}

    def ac_deliver(self, value: Batch, slot: int) -> None:
        r = self.r
        for q in self.queues:
            q.dequeue(value)
        outputs = self._fx.outputs
        S = self.S
        self._rec("ac_deliver", round=r, origin=value.origin, prio=slot, size=len(value))
        for m in value.requests:
            rid = m.rid
            if rid not in S:
                S.add(rid)
                outputs.append(Delivery(m, r, value.origin, value.priority))
                self._rec("deliver", client=m.client, seq=m.seq, round=r, origin=value.origin)
        # Batches whose requests are now all delivered would only yield empty rounds.
        candidates: dict[int, list[int]] = {}
        for rid in value.rids:
            for qid, s in self._rid_index.pop(rid, ()):
                candidates.setdefault(qid, []).append(s)
            if rid in self._buf_ids:
                self._buf_ids.discard(rid)
                self.buf = [x for x in self.buf if x.rid != rid]
        for qid, slots in candidates.items():
            self.queues[qid].remove_if(self._covered, sorted(set(slots)))

    def _on_aba_msg(self, env: MessageEnvelope) -> None:
        r = env.seq
        if r < self._aba_floor or env.origin != 0:
            return
        aba = self._aba(r)
        if aba.finished:
            return
        self._send(aba.handle(env))
        if aba.finished:
            self._rec("aba_done", round=r, bit=aba.decided, via=aba.decided_via,
                      ir=aba.decided_round, coins=aba.coin_releases, rounds=aba.internal_round + 1)

    def parallel_round_control(self) -> None:
        """Announce early 1-votes for upcoming rounds whose leader queue
        already has a head value.

        Early votes travel in their own instance, tagged with the slot they
        refer to, and never feed the round's real ABA. A round may skip its
        ABA only when all N early votes name the slot that is still the
        leader's uncovered head at the turn.
        """
        feats = self.cfg.features
        depth = min(feats.parallel_depth or self.n, self.n)
        seen = {self.leader(self.r)}
        for rr in range(self.r + 1, self.r + depth + 1):
            ld = self.leader(rr)
            if ld in seen:
                continue
            seen.add(ld)
            if rr in self._eager_sent:
                continue
            q = self.queues[ld]
            if q.peek() is None:
                continue
            self._eager_sent.add(rr)
            self._rec("vote", round=rr, vote=1, eager=True, deferred=False, head=q.head, present=1)
            self._to_all(MessageEnvelope(Kind.INIT, self.me, EAGER_ORIGIN, rr, 0,
                                         bytes((1, 1)) + struct.pack(">Q", q.head)))

    def _on_eager(self, env: MessageEnvelope) -> None:
        rr = env.seq
        if not self.r <= rr <= self.r + 2 * self.n or len(env.body) != 10 or env.body[0] != 1:
            return
        (slot,) = struct.unpack_from(">Q", env.body, 2)
        self.eager.setdefault(rr, {}).setdefault(env.sender, slot)

    def _eager_unanimous(self) -> bool:
        tally = self.eager.get(self.r)
        if tally is None or len(tally) < self.n:
            return False
        q = self.queues[self.leader(self.r)]
        return q.peek() is not None and all(s == q.head for s in tally.values())

    # -- recovery ---------------------------------------------------------

    def on_fill_gap(self, sender: int, q: int, s: int) -> None:
        if not 0 <= q < self.n:
            return
        Q = self.queues[q]
        if Q.head < s:
            return
        entries = [self.proofs[(q, x)] for x in range(s, Q.head + 1) if (q, x) in self.proofs]
        if not entries:
            return
        self.stats["fillers_sent"] += 1
        self._rec("filler_sent", to=sender, queue=q, slots=[m.id.priority for m in entries])
        self._fx.sends.append((sender, MessageEnvelope(Kind.FILLER, self.me, q, s, 0, pack_filler(entries))))

    def on_filler(self, sender: int, q: int, entries: list[VerifiablePayload]) -> None:
        if not 0 <= q < self.n:
            return
        accepted = []
        for m in entries:
            key = (m.id.sender, m.id.priority)
            if key in self.proofs:
                continue
            inst = self._vcbc(key)
            if inst.on_verifiable(m):
                accepted.append(key[1])
                self._vcbc_delivered(inst)
            elif not inst.delivered and inst.payload is None and not inst.echo_shares:
                del self.vcbcs[key]
        if accepted:
            self.stats["fillers_accepted"] += 1
            self._rec("filler_accepted", sender=sender, queue=q, slots=accepted)


def config_from_dict(n: int, own_index: int, d: dict, f: int | None = None) -> ReplicaConfig:
    """Build a config from file-style overrides (durations in ms / s)."""
    d = dict(d)
    feats = Features(**d.pop("features", {}))
    kw = {"n": n, "own_index": own_index, "f": f, "features": feats}
    if "batch_size" in d:
        kw["batch_size"] = d.pop("batch_size")
    if "batch_timeout_ms" in d:
        kw["batch_timeout_ns"] = int(d.pop("batch_timeout_ms") * MS)
    if "partial_backlog" in d:
        kw["partial_backlog"] = d.pop("partial_backlog")
    if "await_value_warn_s" in d:
        kw["await_value_warn_ns"] = int(d.pop("await_value_warn_s") * SECOND)
    if "prediction_cap_ms" in d:
        kw["prediction_cap_ns"] = int(d.pop("prediction_cap_ms") * MS)
    if "prediction_weight" in d:
        kw["prediction_weight"] = d.pop("prediction_weight")
    order = d.pop("leader_order", None)
    if order is not None:
        if sorted(order) != list(range(n)):
            raise ConfigError("leader_order must be a permutation of replica indices")
        kw["leader_fn"] = lambda r, order=tuple(order): order[r % n]
    if d:
        raise ConfigError(f"unknown config fields: {sorted(d)}")
    return ReplicaConfig(**kw)
