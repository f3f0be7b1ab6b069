"""Stand-alone simulation of one binary agreement instance.

Used by the ABA property suite, where thousands of schedules must run
quickly. ``fair`` delivers each message after a uniform random delay;
``random`` picks the next message uniformly among all in flight, which
explores arbitrary reorderings.
"""
from __future__ import annotations

import heapq
import random
from dataclasses import dataclass, field

from .. import tcrypto
from ..aba import Aba

_KEYS: dict = {}


@dataclass
class AbaOutcome:
    decisions: dict[int, int] = field(default_factory=dict)
    rounds: dict[int, int] = field(default_factory=dict)
    via: dict[int, str] = field(default_factory=dict)
    finished: dict[int, bool] = field(default_factory=dict)
    coin_releases: int = 0
    # coin shares released system-wide when each replica decided
    coins_at_decision: dict[int, int] = field(default_factory=dict)
    messages: int = 0

    @property
    def coin_free(self) -> bool:
        return bool(self.coins_at_decision) and not any(self.coins_at_decision.values())

    @property
    def agreement(self) -> bool:
        return len(set(self.decisions.values())) <= 1

    def all_decided(self, correct) -> bool:
        return all(i in self.decisions for i in correct)


def _coin_keys(n: int, f: int, scheme: str):
    key = (n, f, scheme)
    if key not in _KEYS:
        _KEYS[key] = tcrypto.keygen(n, tcrypto.coin_threshold(n, f), b"aba-suite-%d" % n, scheme)
    return _KEYS[key]


def run_aba(n: int, inputs: list[int], seed: int, scheduler: str = "fair", silent=(),
            unanimity: bool = True, f: int | None = None, agreement_round: int = 0,
            delay_ms: tuple[float, float] = (1.0, 10.0), scheme: str = tcrypto.TEST_SCHEME) -> AbaOutcome:
    f = (n - 1) // 3 if f is None else f
    params, shares = _coin_keys(n, f, scheme)
    rng = random.Random(seed)
    silent = set(silent)
    insts = [Aba(agreement_round + seed, n, f, i, params, shares[i], unanimity) for i in range(n)]
    out = AbaOutcome()
    pending: list = []
    seq = 0
    released = 0

    def emit(src, sends, now):
        nonlocal seq, released
        if src in silent:
            return
        a = insts[src]
        released += a.coin_releases - counted[src]
        counted[src] = a.coin_releases
        if a.decided is not None and src not in out.coins_at_decision:
            out.coins_at_decision[src] = released
        for dst, env in sends:
            seq += 1
            out.messages += 1
            if scheduler == "random":
                pending.append((dst, env))
            else:
                d = 0.0 if dst == src else rng.uniform(*delay_ms)
                heapq.heappush(pending, (now + d, seq, dst, env))

    counted = [0] * n
    for i in range(n):
        if i not in silent:
            emit(i, insts[i].propose(inputs[i]), 0.0)
    while pending:
        if scheduler == "random":
            k = rng.randrange(len(pending))
            pending[k], pending[-1] = pending[-1], pending[k]
            dst, env = pending.pop()
            now = 0.0
        else:
            now, _, dst, env = heapq.heappop(pending)
        if dst in silent:
            continue
        emit(dst, insts[dst].handle(env), now)

    for i, a in enumerate(insts):
        if i in silent:
            continue
        out.coin_releases += a.coin_releases
        out.finished[i] = a.finished
        if a.decided is not None:
            out.decisions[i] = a.decided
            out.rounds[i] = a.decided_round + 1
            out.via[i] = a.decided_via
    return out
