"""Replica and client processes on top of the TCP transport.

A cluster file (TOML or JSON) describes the whole deployment::

    n = 4
    key_seed = "00000000000000000000000000000001"   # hex
    scheme = "bls12-381"
    replicas = ["127.0.0.1:7100", "127.0.0.1:7101", ...]
    [config]      # replica overrides, same keys as simulator scenarios
    batch_size = 64
    [client]      # defaults for the client command
    requests = 1000
    rate = 500
    size = 256
    strategy = "leader-predicted"

Keys are dealt from ``key_seed`` by every process (a trusted-dealer setup
suited to desk-scale runs). Client ``c`` uses node id ``n + c`` on the
wire and client ids ``c * 65536 + k``.
"""
from __future__ import annotations

import asyncio
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from .. import tcrypto
from ..clients import client_plan
from ..configfile import read_config
from ..replica import Replica, config_from_dict
from .transport import Address, Transport
from .wire import Kind, MessageEnvelope

log = logging.getLogger(__name__)

CLIENT_ID_STRIDE = 65536


@dataclass
class Cluster:
    n: int
    replicas: list[Address]
    key_seed: bytes = b"\0" * 16
    scheme: str = tcrypto.BLS_SCHEME
    f: int | None = None
    config: dict = field(default_factory=dict)
    client: dict = field(default_factory=dict)

    @property
    def fault_threshold(self) -> int:
        return (self.n - 1) // 3 if self.f is None else self.f

    def keys(self) -> tcrypto.KeyBundle:
        return tcrypto.provision(self.n, self.fault_threshold, self.key_seed, self.scheme)

    def peers(self) -> dict[int, Address]:
        return dict(enumerate(self.replicas))

    def trace_header(self) -> dict:
        sc = {"n": self.n, "f": self.f, "faults": [], "scheduler": "net", "config": self.config}
        return {"ev": "header", "seed": 0, "scenario": sc}

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "f": self.f,
            "key_seed": self.key_seed.hex(),
            "scheme": self.scheme,
            "replicas": [f"{h}:{p}" for h, p in self.replicas],
            "config": self.config,
            "client": self.client,
        }


def parse_address(s: str) -> Address:
    host, _, port = s.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"bad address {s!r}, expected host:port")
    return host, int(port)


def cluster_from_dict(d: dict) -> Cluster:
    d = dict(d)
    replicas = [parse_address(a) for a in d.pop("replicas")]
    n = d.pop("n", len(replicas))
    if len(replicas) != n:
        raise ValueError(f"cluster lists {len(replicas)} replicas for n={n}")
    d = {k: v for k, v in d.items() if v is not None}
    cl = Cluster(n, replicas, bytes.fromhex(d.pop("key_seed", "00" * 16)), d.pop("scheme", tcrypto.BLS_SCHEME),
                 d.pop("f", None), d.pop("config", {}), d.pop("client", {}))
    d.pop("index", None)
    if d:
        raise ValueError(f"unknown cluster fields: {sorted(d)}")
    config_from_dict(n, 0, cl.config, cl.f)  # fail early on bad overrides
    return cl


def load_cluster(path: str | Path) -> tuple[Cluster, dict]:
    raw = read_config(path)
    return cluster_from_dict(raw), raw


class TraceWriter:
    """JSONL sink compatible with simulator traces."""

    def __init__(self, path: str | Path | None, header: dict):
        self.fh = open(path, "w") if path is not None else None
        self.records: list[dict] = []
        self.emit(header)

    def emit(self, rec: dict) -> None:
        if self.fh is None:
            self.records.append(rec)
        else:
            self.fh.write(json.dumps(rec, sort_keys=True, separators=(",", ":")))
            self.fh.write("\n")

    def flush(self) -> None:
        if self.fh is not None:
            self.fh.flush()

    def close(self, complete: bool) -> None:
        self.emit({"ev": "end", "complete": complete, "t": time.time_ns()})
        if self.fh is not None:
            self.fh.close()


class ReplicaNode:
    """Drives one :class:`Replica` from the transport and wall-clock timers.

    All protocol work runs on the event loop, so the core sees one input at
    a time.
    """

    def __init__(self, cluster: Cluster, index: int, *, listen: Address | None = None,
                 trace: TraceWriter | None = None, keys: tcrypto.KeyBundle | None = None,
                 on_record: Callable[[dict], None] | None = None):
        self.cluster = cluster
        self.n = cluster.n
        cfg = config_from_dict(cluster.n, index, cluster.config, cluster.f)
        self.replica = Replica(cfg, keys or cluster.keys())
        self.me = index
        self.trace = trace
        self.on_record = on_record
        self.delivered = 0
        self.errors = 0
        self.transport = Transport(index, cluster.peers(), self._on_message,
                                   listen=listen or cluster.replicas[index])
        self._flusher: asyncio.Task | None = None

    async def start(self) -> None:
        await self.transport.start()
        self._apply(self.replica.start(time.time_ns()))
        if self.trace is not None:
            self._flusher = asyncio.create_task(self._flush_loop())

    async def stop(self, complete: bool = True) -> None:
        if self._flusher is not None:
            self._flusher.cancel()
        await self.transport.close()
        if self.trace is not None:
            self.trace.close(complete)

    async def _flush_loop(self) -> None:
        while True:
            await asyncio.sleep(0.2)
            self.trace.flush()

    def _on_message(self, src: int, env: MessageEnvelope) -> None:
        # The peer map stands in for authenticated channels.
        if src < self.n and env.sender != src:
            return
        if src >= self.n and env.kind != Kind.CLIENTREQ:
            return
        self._step(lambda now: self.replica.receive(env, now))

    def _on_timer(self, key: tuple) -> None:
        self._step(lambda now: self.replica.on_timer(key, now))

    def _step(self, fn) -> None:
        try:
            fx = fn(time.time_ns())
        except Exception:
            self.errors += 1
            log.exception("replica %d failed to process an input", self.me)
            return
        self._apply(fx)

    def _apply(self, fx) -> None:
        loop = asyncio.get_running_loop()
        now = time.time_ns()
        for rec in fx.records:
            rec["t"] = now
            if rec["ev"] == "deliver":
                self.delivered += 1
            if self.trace is not None:
                self.trace.emit(rec)
            if self.on_record is not None:
                self.on_record(rec)
        for delay, key in fx.timers:
            loop.call_later(delay / 1e9, self._on_timer, key)
        for dst, env in fx.sends:
            self.transport.send(dst, env)


async def run_client(cluster: Cluster, index: int = 0, *, trace: TraceWriter | None = None,
                     flush_timeout: float | None = 60.0, **plan) -> int:
    """Submit an open-loop request stream and wait until every replica has
    acknowledged it at the transport level. Returns the number submitted."""
    opts = {"requests": 1000, "rate": 1000.0, "size": 256, "strategy": "leader-predicted",
            "clients": 1, "seed": 0}
    opts.update(cluster.client)
    opts.update({k: v for k, v in plan.items() if v is not None})
    n = cluster.n
    cfg = config_from_dict(n, 0, cluster.config, cluster.f)
    subs = client_plan(opts["strategy"], opts["rate"], opts["size"], n=n, f=cluster.fault_threshold,
                       requests=opts["requests"], clients=opts["clients"], seed=opts["seed"],
                       leader_fn=cfg.leader)
    tp = Transport(n + index, cluster.peers(), lambda src, env: None)
    await tp.start()
    base = CLIENT_ID_STRIDE * index
    t0 = time.monotonic_ns()
    for sub in subs:
        wait = (t0 + sub.t_ns - time.monotonic_ns()) / 1e9
        if wait > 0.001:
            await asyncio.sleep(wait)
        req = sub.request
        cid = base + req.client
        if trace is not None:
            trace.emit({"ev": "submit", "client": cid, "seq": req.seq, "targets": list(sub.targets),
                        "t": time.time_ns()})
        env = MessageEnvelope(Kind.CLIENTREQ, n + index, cid, req.seq, 0, req.payload)
        for tgt in sub.targets:
            tp.send(tgt, env)
    try:
        await tp.flush(flush_timeout)
    finally:
        await tp.close()
        if trace is not None:
            trace.close(True)
    return len(subs)


def merge_traces(paths) -> list[dict]:
    """Concatenate per-process JSONL traces into one record list with a
    single header and an ``end`` record that is complete only if every
    input was."""
    header = None
    body: list[dict] = []
    complete = True
    end_t = 0
    for p in paths:
        with open(p) as fh:
            recs = [json.loads(line) for line in fh if line.strip()]
        if not recs or recs[0].get("ev") != "header":
            raise ValueError(f"{p}: missing trace header")
        header = header or recs[0]
        tail = recs[1:]
        if tail and tail[-1].get("ev") == "end":
            complete &= bool(tail[-1]["complete"])
            end_t = max(end_t, tail[-1]["t"])
            tail = tail[:-1]
        else:
            complete = False
        body.extend(tail)
    if header is None:
        raise ValueError("no traces given")
    return [header, *body, {"ev": "end", "complete": complete, "t": end_t}]
