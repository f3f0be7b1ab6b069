"""Client requests and the batch encoding carried inside VCBC payloads."""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

_REQ = struct.Struct(">IQI")
_COUNT = struct.Struct(">I")


@dataclass(frozen=True, slots=True)
class Request:
    client: int
    seq: int
    payload: bytes = b""

    @property
    def rid(self) -> tuple[int, int]:
        return (self.client, self.seq)


@dataclass(frozen=True)
class Batch:
    """Ordered requests of one VCBC proposal.

    Equality and hashing use the requests only, so the same content
    proposed by two replicas compares equal across queues.
    """

    requests: tuple[Request, ...]
    origin: int = field(default=-1, compare=False)
    priority: int = field(default=-1, compare=False)

    @property
    def rids(self) -> tuple[tuple[int, int], ...]:
        return tuple(r.rid for r in self.requests)

    def __len__(self) -> int:
        return len(self.requests)


def encode_requests(requests) -> bytes:
    parts = [_COUNT.pack(len(requests))]
    for r in requests:
        parts.append(_REQ.pack(r.client, r.seq, len(r.payload)))
        parts.append(r.payload)
    return b"".join(parts)


def decode_requests(data: bytes) -> tuple[Request, ...] | None:
    """Inverse of :func:`encode_requests`; ``None`` on malformed input."""
    try:
        (count,) = _COUNT.unpack_from(data)
        off = _COUNT.size
        out = []
        seen = set()
        for _ in range(count):
            client, seq, plen = _REQ.unpack_from(data, off)
            off += _REQ.size
            if off + plen > len(data):
                return None
            req = Request(client, seq, bytes(data[off : off + plen]))
            off += plen
            if req.rid not in seen:
                seen.add(req.rid)
                out.append(req)
    except struct.error:
        return None
    if off != len(data):
        return None
    return tuple(out)


def batch_digest(payload: bytes) -> str:
    return hashlib.sha256(payload).hexdigest()[:16]
