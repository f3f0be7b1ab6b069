"""Asynchronous binary agreement with a threshold-signature common coin.

Each internal round runs INIT (bit broadcast with f+1 relay and 2f+1
acceptance into ``bin_values``), AUX and CONF (N-f quorums whose values must
lie in ``bin_values``), then reveals a coin share. With the coin ``c`` and
the confirmed value set ``V``: ``V = {b}`` keeps ``b`` as estimate and
decides it when ``b == c``; ``V = {0, 1}`` adopts ``c``. FINISH messages
gossip decisions: f+1 of them are relayed and adopted, 2f+1 terminate.

The round-0 INIT also declares the replica's input. Seeing all N inputs
equal to our own lets us decide immediately (unanimity fast path) while
still waiting for 2f+1 FINISH before terminating.
"""
from __future__ import annotations

import struct

from . import tcrypto
from .net.wire import Kind, MessageEnvelope

_COIN = struct.Struct(">4sQI")


class AbaError(Exception):
    pass


class ProtocolMisuse(AbaError):
    pass


def coin_name(agreement_round: int, internal_round: int) -> bytes:
    return _COIN.pack(b"COIN", agreement_round, internal_round)


def _mask(values) -> int:
    m = 0
    for v in values:
        m |= 1 << v
    return m


def _unmask(m: int) -> frozenset[int]:
    return frozenset(v for v in (0, 1) if m >> v & 1)


class Aba:
    def __init__(self, round_id: int, n: int, f: int, me: int, params: tcrypto.ThresholdParams,
                 key: tcrypto.KeyShare, unanimity: bool = True):
        self.id = round_id
        self.n, self.f, self.me = n, f, me
        self.params, self.key = params, key
        self.unanimity = unanimity

        self.proposed = False
        self.restricted = False
        self.input: int | None = None
        self.estimate: int | None = None
        self.internal_round = 0

        self.init_from: dict[int, tuple[set[int], set[int]]] = {}
        self.init_sent: dict[int, set[int]] = {}
        self.bin_values: dict[int, list[int]] = {}
        self.aux: dict[int, dict[int, int]] = {}
        self.aux_sent: set[int] = set()
        self.conf: dict[int, dict[int, int]] = {}
        self.conf_sent: set[int] = set()
        self.confirmed: dict[int, frozenset[int]] = {}
        self.coin_shares: dict[int, dict[int, tcrypto.SignatureShare]] = {}
        self.coin_sent: set[int] = set()
        self.coins: dict[int, int] = {}
        self.inputs: dict[int, int] = {}
        self.finish_from: dict[int, int] = {}
        self.finish_sent = False

        self.decided: int | None = None
        self.decided_round: int | None = None
        self.decided_via: str | None = None
        self.finished = False
        self.flagged: set[int] = set()
        self.coin_releases = 0
        self.invalid_shares = 0

    # -- outgoing helpers -------------------------------------------------

    def _bcast(self, out, kind: Kind, ir: int, body: bytes) -> None:
        env = MessageEnvelope(kind, self.me, 0, self.id, ir, body)
        out.extend((j, env) for j in range(self.n))

    def _send_init(self, out, r: int, v: int, is_input: bool = False) -> None:
        self.init_sent.setdefault(r, set()).add(v)
        self._bcast(out, Kind.INIT, r, bytes((v, 1 if is_input else 0)))

    def _send_finish(self, out, b: int) -> None:
        if not self.finish_sent:
            self.finish_sent = True
            self._bcast(out, Kind.FINISH, 0, bytes((b,)))

    def _decide(self, out, b: int, via: str) -> None:
        if self.decided is None:
            self.decided = b
            self.decided_round = self.internal_round
            self.decided_via = via
        self._send_finish(out, b)

    @property
    def active(self) -> bool:
        return self.proposed and not self.restricted and not self.finished

    # -- inputs -----------------------------------------------------------

    def propose(self, b: int, restricted: bool = False) -> list[tuple[int, MessageEnvelope]]:
        """Input ``b``. A restricted instance only sends its INIT and FINISH
        until :meth:`release` is called."""
        if self.proposed or self.finished:
            raise ProtocolMisuse(f"ABA({self.id}) already proposed or terminated")
        if b not in (0, 1):
            raise ValueError("proposal must be a bit")
        self.proposed = True
        self.restricted = restricted
        self.input = self.estimate = b
        out: list = []
        self._send_init(out, 0, b, is_input=True)
        return out + self._step()

    def release(self) -> list[tuple[int, MessageEnvelope]]:
        if not self.restricted:
            return []
        self.restricted = False
        out: list = []
        if self.finished:
            return out
        for r in sorted(self.init_from):
            self._bv(r, out)
        return out + self._step()

    def on_init(self, sender: int, r: int, v: int, is_input: bool = False):
        if self.finished:
            return []
        if is_input and r == 0 and sender not in self.inputs:
            self.inputs[sender] = v
        senders = self.init_from.setdefault(r, (set(), set()))[v]
        if sender in senders:
            return []
        senders.add(sender)
        out: list = []
        if self.active and r != self.internal_round:
            self._bv(r, out)
        return out + self._step()

    def on_aux(self, sender: int, r: int, v: int):
        if self.finished:
            return []
        tally = self.aux.setdefault(r, {})
        if sender in tally:
            return []
        tally[sender] = v
        return self._step() if r == self.internal_round else []

    def on_conf(self, sender: int, r: int, values: frozenset[int]):
        if self.finished or not values:
            return []
        tally = self.conf.setdefault(r, {})
        if sender in tally:
            return []
        tally[sender] = _mask(values)
        return self._step() if r == self.internal_round else []

    def on_coin_share(self, sender: int, r: int, share_bytes: bytes):
        if self.finished:
            return []
        shares = self.coin_shares.setdefault(r, {})
        if sender in shares or r in self.coins:
            return []
        name = coin_name(self.id, r)
        share = tcrypto.SignatureShare(sender, tcrypto.digest(name), share_bytes)
        if not tcrypto.verify_share(self.params, name, share):
            self.invalid_shares += 1
            return []
        shares[sender] = share
        if len(shares) >= self.params.k:
            sig = tcrypto.combine(self.params, name, shares.values(), verified=True)
            self.coins[r] = tcrypto.coin_value(self.params, name, sig)
            if r == self.internal_round:
                return self._step()
        return []

    def on_finish(self, sender: int, b: int):
        if self.finished:
            return []
        prev = self.finish_from.get(sender)
        if prev is not None:
            if prev != b:
                self.flagged.add(sender)
            return []
        self.finish_from[sender] = b
        count = sum(1 for x in self.finish_from.values() if x == b)
        out: list = []
        if count >= self.f + 1:
            if self.decided is None:
                self.decided = b
                self.decided_round = self.internal_round
                self.decided_via = "finish"
            self._send_finish(out, b)
        if count >= 2 * self.f + 1:
            self.finished = True
        return out

    def handle(self, env: MessageEnvelope) -> list[tuple[int, MessageEnvelope]]:
        k, body, r = env.kind, env.body, env.internal_round
        if k == Kind.COIN:
            return self.on_coin_share(env.sender, r, body)
        if not body or body[0] > 1 and k != Kind.CONF:
            return []
        if k == Kind.INIT:
            return self.on_init(env.sender, r, body[0], len(body) > 1 and body[1] == 1)
        if k == Kind.AUX:
            return self.on_aux(env.sender, r, body[0])
        if k == Kind.CONF:
            return self.on_conf(env.sender, r, _unmask(body[0]) if body[0] <= 3 else frozenset())
        if k == Kind.FINISH:
            return self.on_finish(env.sender, body[0])
        return []

    # -- state machine ----------------------------------------------------

    def _bv(self, r: int, out) -> None:
        """Relay and acceptance rules for INIT messages of round ``r``."""
        tallies = self.init_from.get(r)
        if tallies is None:
            return
        sent = self.init_sent.setdefault(r, set())
        bv = self.bin_values.setdefault(r, [])
        for v in (0, 1):
            cnt = len(tallies[v])
            if cnt >= self.f + 1 and v not in sent:
                self._send_init(out, r, v)
            if cnt >= 2 * self.f + 1 and v not in bv:
                bv.append(v)

    def _fast_path(self, out) -> None:
        if not self.unanimity or self.decided is not None or self.input is None:
            return
        if len(self.inputs) == self.n and all(v == self.input for v in self.inputs.values()):
            self._decide(out, self.input, "unanimity")

    def _step(self) -> list[tuple[int, MessageEnvelope]]:
        out: list = []
        if self.finished:
            return out
        self._fast_path(out)
        if not self.active:
            return out
        n_f = self.n - self.f
        while True:
            r = self.internal_round
            self._bv(r, out)
            bv = self.bin_values.get(r)
            if not bv:
                break
            if r not in self.aux_sent:
                self.aux_sent.add(r)
                self._bcast(out, Kind.AUX, r, bytes((bv[0],)))
            if r not in self.conf_sent:
                accepted = [v for v in self.aux.get(r, {}).values() if v in bv]
                if len(accepted) < n_f:
                    break
                self.conf_sent.add(r)
                self._bcast(out, Kind.CONF, r, bytes((_mask(accepted),)))
            if r not in self.confirmed:
                bmask = _mask(bv)
                accepted = [m for m in self.conf.get(r, {}).values() if m & ~bmask == 0]
                if len(accepted) < n_f:
                    break
                union = 0
                for m in accepted:
                    union |= m
                self.confirmed[r] = _unmask(union)
            if r not in self.coin_sent:
                self.coin_sent.add(r)
                self.coin_releases += 1
                share = tcrypto.sign_share(self.key, coin_name(self.id, r))
                self._bcast(out, Kind.COIN, r, share.share_bytes)
            if r not in self.coins:
                break
            values, c = self.confirmed[r], self.coins[r]
            if len(values) == 1:
                (b,) = values
                self.estimate = b
                if b == c:
                    self._decide(out, b, "coin")
            else:
                self.estimate = c
            self.internal_round = r + 1
            if self.estimate not in self.init_sent.get(r + 1, ()):
                self._send_init(out, r + 1, self.estimate)
        return out
