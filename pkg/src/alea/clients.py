"""Open-loop client submission plans."""
from __future__ import annotations

import random
from typing import Callable, NamedTuple

from .batch import Request

SECOND = 1_000_000_000
STRATEGIES = ("single", "leader-predicted", "f+1-broadcast")


class Submission(NamedTuple):
    t_ns: int
    request: Request
    targets: tuple[int, ...]


def client_plan(strategy: str, rate: float, size: int, duration_s: float | None = None, *,
                n: int, f: int | None = None, requests: int | None = None, clients: int = 1,
                seed: int = 0, start_s: float = 0.0,
                leader_fn: Callable[[int], int] | None = None) -> list[Submission]:
    """Deterministic open-loop schedule at a fixed rate.

    ``single`` pins client ``c`` to replica ``c mod n``; ``leader-predicted``
    targets the leader of the k-th upcoming round for the k-th request;
    ``f+1-broadcast`` sends each request to f+1 consecutive replicas from a
    random start.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    if rate <= 0 or clients < 1:
        raise ValueError("rate and client count must be positive")
    f = (n - 1) // 3 if f is None else f
    leader_fn = leader_fn or (lambda r: r % n)
    if requests is None:
        if duration_s is None:
            raise ValueError("need a request count or a duration")
        requests = int(rate * duration_s)
    rng = random.Random(seed ^ 0xC11E_4700)
    step = SECOND / rate
    t0 = int(start_s * SECOND)
    seqs = [0] * clients
    plan = []
    for k in range(requests):
        c = k % clients
        if strategy == "single":
            targets = (c % n,)
        elif strategy == "leader-predicted":
            targets = (leader_fn(k),)
        else:
            start = rng.randrange(n)
            targets = tuple((start + j) % n for j in range(f + 1))
        plan.append(Submission(t0 + int(k * step), Request(c, seqs[c], rng.randbytes(size)), targets))
        seqs[c] += 1
    return plan
