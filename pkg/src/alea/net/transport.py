"""Reliable, exactly-once, per-peer FIFO links over TCP.

Every node dials each peer it sends to and accepts inbound connections from
peers that send to it, so a pair of replicas uses two connections, one per
direction. Frames on either connection look like::

    length:u32 type:u8 body crc32:u32

where ``length`` covers type, body and checksum and the CRC is taken over
type and body. A dialer opens with HELLO(node id), the acceptor answers
with ACK(highest sequence number delivered from that node) and the dialer
then resends everything after it. Each DATA frame carries a per-link
sequence number and one encoded envelope. Sequence numbers at or below the
delivered mark are dropped as duplicates. A gap, bad checksum or
undecodable envelope closes the connection, and the dialer reconnects with
capped exponential backoff. The dialer also reconnects when unacknowledged
frames see no ACK progress for ``ack_timeout`` seconds, which covers a
receiver stuck on a corrupted length prefix.
"""
from __future__ import annotations

import asyncio
import logging
import struct
import zlib
from collections import OrderedDict
from typing import Callable

from .wire import HEADER_SIZE, MAX_BODY, MessageEnvelope, WireError, decode, encode

log = logging.getLogger(__name__)

HELLO, DATA, ACK = 1, 2, 3
MAX_FRAME = 1 + 8 + HEADER_SIZE + MAX_BODY + 4
_U32 = struct.Struct(">I")
_U64 = struct.Struct(">Q")

Address = tuple[str, int]


class FrameError(ConnectionError):
    """Malformed frame; fatal for the connection it arrived on."""


def frame(ftype: int, body: bytes) -> bytes:
    payload = bytes((ftype,)) + body
    return _U32.pack(len(payload) + 4) + payload + _U32.pack(zlib.crc32(payload))


async def read_frame(reader: asyncio.StreamReader) -> tuple[int, bytes]:
    try:
        (length,) = _U32.unpack(await reader.readexactly(4))
        if not 5 <= length <= MAX_FRAME:
            raise FrameError(f"bad frame length {length}")
        data = await reader.readexactly(length)
    except asyncio.IncompleteReadError as exc:
        raise ConnectionResetError("peer closed the connection") from exc
    payload, (crc,) = data[:-4], _U32.unpack(data[-4:])
    if zlib.crc32(payload) != crc:
        raise FrameError("checksum mismatch")
    return payload[0], payload[1:]


class _OutLink:
    """Sending half of a link: sequence numbering, resend and reconnect."""

    def __init__(self, tp: "Transport", peer: int, addr: Address):
        self.tp, self.peer, self.addr = tp, peer, addr
        self.next_seq = 1
        self.acked = 0
        self.unacked: OrderedDict[int, bytes] = OrderedDict()
        self.wake = asyncio.Event()
        self.idle = asyncio.Event()
        self.idle.set()
        self.connects = 0
        self.task: asyncio.Task | None = None
        self._writer: asyncio.StreamWriter | None = None

    def push(self, data: bytes) -> None:
        self.unacked[self.next_seq] = data
        self.next_seq += 1
        self.idle.clear()
        self.wake.set()

    def _ack(self, upto: int) -> None:
        while self.unacked:
            seq = next(iter(self.unacked))
            if seq > upto:
                break
            del self.unacked[seq]
        self.acked = max(self.acked, upto)
        if not self.unacked:
            self.idle.set()

    def drop_connection(self) -> None:
        """Abort the current connection; the link reconnects and resends."""
        if self._writer is not None:
            self._writer.transport.abort()

    async def run(self) -> None:
        delay = self.tp.backoff[0]
        while True:
            try:
                reader, writer = await asyncio.open_connection(*self.addr)
            except OSError:
                await asyncio.sleep(delay)
                delay = min(delay * 2, self.tp.backoff[1])
                continue
            self._writer = writer
            acks = None
            try:
                writer.write(frame(HELLO, _U32.pack(self.tp.me)))
                ftype, body = await read_frame(reader)
                if ftype != ACK or len(body) != 8:
                    raise FrameError("expected ACK after HELLO")
                self._ack(_U64.unpack(body)[0])
                self.connects += 1
                delay = self.tp.backoff[0]
                acks = asyncio.create_task(self._read_acks(reader))
                await self._pump(writer, acks)
            except (OSError, ConnectionError) as exc:
                log.debug("link %d->%d dropped: %s", self.tp.me, self.peer, exc)
            finally:
                self._writer = None
                if acks is not None:
                    acks.cancel()
                writer.transport.abort()
            await asyncio.sleep(delay)
            delay = min(delay * 2, self.tp.backoff[1])

    async def _pump(self, writer: asyncio.StreamWriter, acks: asyncio.Task) -> None:
        sent = self.acked
        while True:
            self.wake.clear()
            batch = [(s, d) for s, d in self.unacked.items() if s > sent]
            for s, d in batch:
                writer.write(frame(DATA, _U64.pack(s) + d))
                sent = s
            if batch:
                await writer.drain()
            if acks.done():
                acks.result()
                raise ConnectionResetError("ack stream ended")
            if sent == self.next_seq - 1:
                before = self.acked
                waiter = asyncio.create_task(self.wake.wait())
                try:
                    done, _ = await asyncio.wait({waiter, acks}, timeout=self.tp.ack_timeout,
                                                 return_when=asyncio.FIRST_COMPLETED)
                finally:
                    waiter.cancel()
                if not done and self.unacked and self.acked == before:
                    raise ConnectionResetError("no ACK progress")

    async def _read_acks(self, reader: asyncio.StreamReader) -> None:
        while True:
            ftype, body = await read_frame(reader)
            if ftype != ACK or len(body) != 8:
                raise FrameError("unexpected frame on sending side")
            self._ack(_U64.unpack(body)[0])


class Transport:
    """Point-to-point transport for one node.

    ``peers`` maps node ids to addresses this node dials when sending.
    ``listen`` is the address to accept inbound links on, or ``None`` for a
    send-only node such as a client. ``on_message(src, env)`` runs on the
    event loop, one message at a time, exactly once per sent envelope and
    in per-sender order.
    """

    def __init__(self, me: int, peers: dict[int, Address],
                 on_message: Callable[[int, MessageEnvelope], None], *,
                 listen: Address | None = None, backoff: tuple[float, float] = (0.02, 1.0),
                 ack_timeout: float = 5.0):
        self.me = me
        self.peers = dict(peers)
        self.on_message = on_message
        self.listen = listen
        self.backoff = backoff
        self.ack_timeout = ack_timeout
        self.out: dict[int, _OutLink] = {}
        self.delivered: dict[int, int] = {}
        self.duplicates = 0
        self.rejected = 0
        self._server: asyncio.AbstractServer | None = None
        self._inbound: set[asyncio.StreamWriter] = set()
        self._ack_due: dict[int, set[asyncio.StreamWriter]] = {}

    async def start(self) -> None:
        if self.listen is not None:
            self._server = await asyncio.start_server(self._serve, *self.listen)
            if self.listen[1] == 0:
                self.listen = self._server.sockets[0].getsockname()[:2]
        for peer in self.peers:
            if peer != self.me:
                self._link(peer)

    def _link(self, peer: int) -> _OutLink:
        link = self.out.get(peer)
        if link is None:
            link = self.out[peer] = _OutLink(self, peer, self.peers[peer])
            link.task = asyncio.get_running_loop().create_task(link.run())
        return link

    def send(self, dst: int, env: MessageEnvelope) -> None:
        if dst == self.me:
            asyncio.get_running_loop().call_soon(self.on_message, self.me, env)
            return
        self._link(dst).push(encode(env))

    async def flush(self, timeout: float | None = None) -> None:
        """Wait until every message sent so far has been acknowledged."""
        await asyncio.wait_for(asyncio.gather(*(lk.idle.wait() for lk in self.out.values())), timeout)

    async def close(self) -> None:
        for link in self.out.values():
            if link.task is not None:
                link.task.cancel()
            link.drop_connection()
        for w in list(self._inbound):
            w.transport.abort()
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()
        await asyncio.gather(*(lk.task for lk in self.out.values() if lk.task), return_exceptions=True)

    def drop_connections(self) -> None:
        """Abort every live connection (fault injection)."""
        for link in self.out.values():
            link.drop_connection()
        for w in list(self._inbound):
            w.transport.abort()

    # -- receiving side ---------------------------------------------------

    async def _serve(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        self._inbound.add(writer)
        peer = None
        try:
            ftype, body = await read_frame(reader)
            if ftype != HELLO or len(body) != 4:
                raise FrameError("expected HELLO")
            (peer,) = _U32.unpack(body)
            writer.write(frame(ACK, _U64.pack(self.delivered.get(peer, 0))))
            while True:
                ftype, body = await read_frame(reader)
                if ftype != DATA or len(body) < 8:
                    raise FrameError("unexpected frame on receiving side")
                (seq,) = _U64.unpack_from(body)
                have = self.delivered.get(peer, 0)
                if seq <= have:
                    self.duplicates += 1
                elif seq != have + 1:
                    raise FrameError(f"sequence gap from {peer}: {seq} after {have}")
                else:
                    try:
                        env = decode(body[8:])
                    except WireError as exc:
                        self.rejected += 1
                        raise FrameError(f"undecodable envelope: {exc}") from exc
                    self.delivered[peer] = seq
                    self.on_message(peer, env)
                self._schedule_ack(peer, writer)
        except (OSError, ConnectionError) as exc:
            log.debug("inbound link from %s dropped: %s", peer, exc)
        finally:
            self._inbound.discard(writer)
            writer.transport.abort()

    def _schedule_ack(self, peer: int, writer: asyncio.StreamWriter) -> None:
        # One cumulative ACK per burst of frames rather than per frame.
        due = self._ack_due.get(peer)
        if due is None:
            self._ack_due[peer] = {writer}
            asyncio.get_running_loop().call_soon(self._send_ack, peer)
        else:
            due.add(writer)

    def _send_ack(self, peer: int) -> None:
        body = frame(ACK, _U64.pack(self.delivered.get(peer, 0)))
        for w in self._ack_due.pop(peer, ()):
            if not w.is_closing():
                w.write(body)
