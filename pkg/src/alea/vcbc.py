"""Verifiable consistent broadcast: echo broadcast with threshold signatures.

The sender SENDs the payload to everyone, collects a Byzantine quorum of
ECHO signature shares over the instance's canonical bytes, combines them and
ships FINAL(payload, signature). A FINAL is self-certifying, so it doubles
as the transferable message used for recovery.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

from . import tcrypto
from .net.wire import Kind, MessageEnvelope

_CANON = struct.Struct(">4sIQ")


class VcbcError(Exception):
    pass


class ProtocolMisuse(VcbcError):
    pass


class Unavailable(VcbcError):
    pass


@dataclass(frozen=True, order=True)
class VcbcId:
    sender: int
    priority: int


@dataclass(frozen=True)
class VerifiablePayload:
    id: VcbcId
    payload: bytes
    proof: tcrypto.CombinedSignature


def canonical_bytes(vid: VcbcId, payload: bytes) -> bytes:
    return _CANON.pack(b"VCBC", vid.sender, vid.priority) + hashlib.sha256(payload).digest()


def pack_final(payload: bytes, sig: tcrypto.CombinedSignature) -> bytes:
    return struct.pack(">H", len(sig.sig_bytes)) + sig.sig_bytes + payload


def unpack_final(vid: VcbcId, body: bytes) -> tuple[bytes, tcrypto.CombinedSignature] | None:
    if len(body) < 2:
        return None
    (slen,) = struct.unpack_from(">H", body)
    if len(body) < 2 + slen:
        return None
    sig_bytes = body[2 : 2 + slen]
    payload = body[2 + slen :]
    return payload, tcrypto.CombinedSignature(tcrypto.digest(canonical_bytes(vid, payload)), sig_bytes)


def verifiable_envelope(sender: int, m: VerifiablePayload) -> MessageEnvelope:
    return MessageEnvelope(Kind.FINAL, sender, m.id.sender, m.id.priority, 0, pack_final(m.payload, m.proof))


@dataclass
class VcbcInstance:
    id: VcbcId
    me: int
    n: int
    f: int
    params: tcrypto.ThresholdParams
    key: tcrypto.KeyShare
    payload: bytes | None = None
    echo_shares: dict[int, tcrypto.SignatureShare] = field(default_factory=dict)
    final_sig: tcrypto.CombinedSignature | None = None
    delivered: bool = False
    started: bool = False
    echoed: bool = False
    final_sent: bool = False
    equivocation: bool = False
    invalid_shares: int = 0
    dropped_finals: int = 0

    @property
    def quorum(self) -> int:
        return tcrypto.vcbc_threshold(self.n, self.f)

    def _to_all(self, kind: Kind, body: bytes) -> list[tuple[int, MessageEnvelope]]:
        env = MessageEnvelope(kind, self.me, self.id.sender, self.id.priority, 0, body)
        return [(j, env) for j in range(self.n)]

    def start_broadcast(self, payload: bytes) -> list[tuple[int, MessageEnvelope]]:
        if self.me != self.id.sender:
            raise ProtocolMisuse(f"replica {self.me} is not the sender of {self.id}")
        if self.started:
            raise ProtocolMisuse(f"{self.id} already started")
        self.started = True
        self.payload = payload
        return self._to_all(Kind.SEND, payload)

    def on_send(self, payload: bytes) -> list[tuple[int, MessageEnvelope]]:
        if self.echoed or self.delivered:
            if self.payload is not None and payload != self.payload:
                self.equivocation = True
            return []
        if self.payload is not None and payload != self.payload and self.me != self.id.sender:
            self.equivocation = True
            return []
        if self.me != self.id.sender:
            self.payload = payload
        self.echoed = True
        share = tcrypto.sign_share(self.key, canonical_bytes(self.id, payload))
        return [(self.id.sender, MessageEnvelope(Kind.ECHO, self.me, self.id.sender, self.id.priority, 0, share.share_bytes))]

    def on_echo(self, signer: int, share_bytes: bytes) -> list[tuple[int, MessageEnvelope]]:
        if self.me != self.id.sender or self.payload is None or signer in self.echo_shares:
            return []
        msg = canonical_bytes(self.id, self.payload)
        share = tcrypto.SignatureShare(signer, tcrypto.digest(msg), share_bytes)
        if not tcrypto.verify_share(self.params, msg, share):
            self.invalid_shares += 1
            return []
        self.echo_shares[signer] = share
        if self.final_sent or len(self.echo_shares) < self.quorum:
            return []
        self.final_sent = True
        sig = tcrypto.combine(self.params, msg, self.echo_shares.values(), verified=True)
        return self._to_all(Kind.FINAL, pack_final(self.payload, sig))

    def on_final(self, payload: bytes, sig: tcrypto.CombinedSignature) -> bool:
        """Returns True when this call delivers the instance."""
        if self.delivered:
            return False
        if not tcrypto.verify_signature(self.params, canonical_bytes(self.id, payload), sig):
            self.dropped_finals += 1
            return False
        if self.payload is not None and self.payload != payload:
            self.equivocation = True
        self.payload = payload
        self.final_sig = sig
        self.delivered = True
        return True

    def make_verifiable(self) -> VerifiablePayload:
        if not self.delivered:
            raise Unavailable(f"{self.id} not delivered")
        return VerifiablePayload(self.id, self.payload, self.final_sig)

    def on_verifiable(self, m: VerifiablePayload) -> bool:
        if m.id != self.id:
            self.dropped_finals += 1
            return False
        return self.on_final(m.payload, m.proof)

    def handle(self, env: MessageEnvelope) -> tuple[list[tuple[int, MessageEnvelope]], bool]:
        """Dispatch one SEND/ECHO/FINAL; returns (outgoing, delivered_now)."""
        if env.kind == Kind.SEND:
            if env.sender != self.id.sender:
                return [], False
            return self.on_send(env.body), False
        if env.kind == Kind.ECHO:
            return self.on_echo(env.sender, env.body), False
        if env.kind == Kind.FINAL:
            parsed = unpack_final(self.id, env.body)
            if parsed is None:
                self.dropped_finals += 1
                return [], False
            return [], self.on_final(*parsed)
        return [], False
