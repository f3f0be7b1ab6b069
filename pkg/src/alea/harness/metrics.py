"""Throughput, latency, σ and message accounting for a trace.

CSV columns, in order:

``seed, n, f, scheduler, complete, submitted, delivered_requests,
delivered_batches, duration_s, throughput_rps, latency_mean_ms,
latency_median_ms, latency_p99_ms, sigma_mean, sigma_alt_mean,
undelivered_slots, msgs_per_batch, msgs_per_batch_broadcast,
msgs_per_batch_agreement, msgs_per_batch_recovery, bytes_per_batch``
followed by ``msgs_per_batch_<KIND>`` for each message kind.
"""
from __future__ import annotations

import csv
import io
import statistics
from collections import defaultdict
from dataclasses import dataclass, field

from ..net.wire import Kind, stage_of
from .checker import view
from .oracles import compute_sigma

STAGES = ("broadcast", "agreement", "recovery")


@dataclass
class MetricsReport:
    seed: int
    n: int
    f: int
    scheduler: str
    complete: bool
    submitted: int
    delivered_requests: int
    delivered_batches: int
    duration_s: float
    throughput_rps: float
    latency_ms: list[float] = field(default_factory=list)
    sigma: dict = field(default_factory=dict)
    sigma_mean: float | None = None
    sigma_alt_mean: float | None = None
    undelivered_slots: int = 0
    count_by_kind: dict[str, int] = field(default_factory=dict)
    count_by_stage: dict[str, int] = field(default_factory=dict)
    total_bytes: int = 0

    def per_batch(self, count: int) -> float | None:
        return count / self.delivered_batches if self.delivered_batches else None

    def latency_stats(self) -> tuple[float | None, float | None, float | None]:
        lat = sorted(self.latency_ms)
        if not lat:
            return None, None, None
        p99 = lat[min(len(lat) - 1, int(0.99 * len(lat)))]
        return statistics.fmean(lat), statistics.median(lat), p99

    def row(self) -> dict:
        mean, med, p99 = self.latency_stats()
        row = {
            "seed": self.seed,
            "n": self.n,
            "f": self.f,
            "scheduler": self.scheduler,
            "complete": int(self.complete),
            "submitted": self.submitted,
            "delivered_requests": self.delivered_requests,
            "delivered_batches": self.delivered_batches,
            "duration_s": round(self.duration_s, 6),
            "throughput_rps": round(self.throughput_rps, 3),
            "latency_mean_ms": _r(mean),
            "latency_median_ms": _r(med),
            "latency_p99_ms": _r(p99),
            "sigma_mean": _r(self.sigma_mean),
            "sigma_alt_mean": _r(self.sigma_alt_mean),
            "undelivered_slots": self.undelivered_slots,
            "msgs_per_batch": _r(self.per_batch(sum(self.count_by_kind.values()))),
        }
        for st in STAGES:
            row[f"msgs_per_batch_{st}"] = _r(self.per_batch(self.count_by_stage.get(st, 0)))
        row["bytes_per_batch"] = _r(self.per_batch(self.total_bytes))
        for k in Kind:
            row[f"msgs_per_batch_{k.name}"] = _r(self.per_batch(self.count_by_kind.get(k.name, 0)))
        return row


def _r(x):
    return None if x is None else round(x, 4)


def compute_metrics(trace) -> MetricsReport:
    v = view(trace)
    sc = trace.scenario
    correct = set(v.correct)
    need = v.n - v.f
    submit_t: dict = {}
    deliveries = defaultdict(list)
    batches = set()
    summary = {}
    for rec in trace.records:
        ev = rec["ev"]
        if ev == "submit":
            submit_t[(rec["client"], rec["seq"])] = rec["t"]
        elif ev == "deliver" and rec["rep"] in correct:
            deliveries[(rec["client"], rec["seq"])].append(rec["t"])
        elif ev == "ac_deliver" and rec["rep"] in correct:
            batches.add((rec["round"], rec["origin"], rec["prio"]))
        elif ev == "summary":
            summary = rec
    lat = []
    done = []
    for rid, ts in deliveries.items():
        if len(ts) >= need:
            t = sorted(ts)[need - 1]
            done.append(t)
            if rid in submit_t:
                lat.append((t - submit_t[rid]) / 1e6)
    start = min(submit_t.values()) if submit_t else 0
    span = (max(done) - start) / 1e9 if done else 0.0
    sig = compute_sigma(trace)
    counts = summary.get("count", {})
    stages: dict[str, int] = defaultdict(int)
    for name, c in counts.items():
        stages[stage_of(Kind[name])] += c
    return MetricsReport(
        seed=trace.seed,
        n=v.n,
        f=v.f,
        scheduler=sc.get("scheduler", ""),
        complete=v.complete,
        submitted=len(submit_t),
        delivered_requests=len(done),
        delivered_batches=len(batches),
        duration_s=span,
        throughput_rps=len(done) / span if span > 0 else 0.0,
        latency_ms=lat,
        sigma={f"{q}:{s}": x for (q, s), x in sig.per_slot.items()},
        sigma_mean=sig.mean,
        sigma_alt_mean=sig.mean_alt,
        undelivered_slots=sig.undelivered,
        count_by_kind=dict(counts),
        count_by_stage=dict(stages),
        total_bytes=sum(summary.get("bytes", {}).values()),
    )


def to_csv(reports: list[MetricsReport]) -> str:
    rows = [r.row() for r in reports]
    buf = io.StringIO()
    if rows:
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return buf.getvalue()
