"""Bit-exact wire encoding of protocol messages.

Layout (all integers big-endian)::

    version:u8 kind:u8 sender:u32 origin:u32 seq:u64 internal_round:u32 body_len:u32 body

``origin``/``seq`` address the protocol instance: (sender, priority) for
VCBC, (0, agreement round) for ABA, (1, agreement round) for early
votes (an INIT whose body appends the u64 slot voted for), (queue, slot) for recovery and
(client, request seq) for client requests.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum

VERSION = 1
MAX_BODY = 16 * 1024 * 1024

_HEADER = struct.Struct(">BBIIQII")
HEADER_SIZE = _HEADER.size  # fixed fields plus the body length prefix


class Kind(IntEnum):
    SEND = 1
    ECHO = 2
    FINAL = 3
    INIT = 4
    AUX = 5
    CONF = 6
    COIN = 7
    FINISH = 8
    FILLGAP = 9
    FILLER = 10
    CLIENTREQ = 11


BROADCAST_KINDS = frozenset({Kind.SEND, Kind.ECHO, Kind.FINAL})
AGREEMENT_KINDS = frozenset({Kind.INIT, Kind.AUX, Kind.CONF, Kind.COIN, Kind.FINISH})
RECOVERY_KINDS = frozenset({Kind.FILLGAP, Kind.FILLER})


def stage_of(kind: int) -> str:
    if kind in BROADCAST_KINDS:
        return "broadcast"
    if kind in AGREEMENT_KINDS:
        return "agreement"
    if kind in RECOVERY_KINDS:
        return "recovery"
    return "client"


class WireError(ValueError):
    pass


class DecodeError(WireError):
    pass


class SizeError(WireError):
    pass


@dataclass(frozen=True, slots=True)
class MessageEnvelope:
    kind: int
    sender: int
    origin: int = 0
    seq: int = 0
    internal_round: int = 0
    body: bytes = b""
    version: int = VERSION

    @property
    def size(self) -> int:
        return HEADER_SIZE + len(self.body)


def encode(e: MessageEnvelope) -> bytes:
    if len(e.body) > MAX_BODY:
        raise SizeError(f"body of {len(e.body)} bytes exceeds {MAX_BODY}")
    try:
        head = _HEADER.pack(e.version, int(e.kind), e.sender, e.origin, e.seq, e.internal_round, len(e.body))
    except struct.error as exc:
        raise WireError(str(exc)) from None
    return head + e.body


def decode(data: bytes) -> MessageEnvelope:
    if len(data) < HEADER_SIZE:
        raise DecodeError("truncated header")
    version, kind, sender, origin, seq, iround, blen = _HEADER.unpack_from(data)
    if version != VERSION:
        raise DecodeError(f"unsupported version {version}")
    if kind not in Kind._value2member_map_:
        raise DecodeError(f"unknown message kind {kind}")
    if blen > MAX_BODY:
        raise DecodeError("body length exceeds limit")
    if len(data) != HEADER_SIZE + blen:
        raise DecodeError("truncated body" if len(data) < HEADER_SIZE + blen else "trailing bytes")
    return MessageEnvelope(Kind(kind), sender, origin, seq, iround, bytes(data[HEADER_SIZE:]), version)
