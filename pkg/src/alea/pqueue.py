"""Slot-addressed priority queue with single-use slots.

A slot accepts at most one value over its lifetime: once the value is
removed the slot is permanently used. ``head`` is the lowest slot that has
not been used; ``peek`` returns the value stored there, or ``None`` while
that slot is still empty.
"""
from __future__ import annotations

from typing import Hashable, Iterator


class PriorityQueue:
    def __init__(self, qid: int):
        self.id = qid
        self._slots: dict[int, Hashable] = {}
        self._where: dict[Hashable, set[int]] = {}
        # Used slots are {s < watermark} plus the sparse set above it.
        self._watermark = 0
        self._used: set[int] = set()
        self.ignored = 0

    @property
    def head(self) -> int:
        return self._watermark

    def is_used(self, s: int) -> bool:
        return s < self._watermark or s in self._used

    def enqueue(self, s: int, v: Hashable) -> bool:
        if s < 0:
            raise ValueError("priority must be non-negative")
        if self.is_used(s) or s in self._slots:
            self.ignored += 1
            return False
        self._slots[s] = v
        self._where.setdefault(v, set()).add(s)
        return True

    def dequeue(self, v: Hashable) -> list[int]:
        """Remove every slot holding ``v``; returns the slots cleared."""
        hit = sorted(self._where.get(v, ()))
        for s in hit:
            self._mark_used(s)
        return hit

    def remove_if(self, pred, slots=None) -> list[int]:
        """Remove values matching ``pred``, optionally only among ``slots``."""
        if slots is None:
            hit = [s for s, x in self._slots.items() if pred(x)]
        else:
            hit = [s for s in slots if s in self._slots and pred(self._slots[s])]
        for s in hit:
            self._mark_used(s)
        return hit

    def _mark_used(self, s: int) -> None:
        v = self._slots.pop(s)
        where = self._where[v]
        where.discard(s)
        if not where:
            del self._where[v]
        self._used.add(s)
        while self._watermark in self._used:
            self._used.discard(self._watermark)
            self._watermark += 1

    def peek(self):
        return self._slots.get(self._watermark)

    def items(self) -> Iterator[tuple[int, Hashable]]:
        return iter(sorted(self._slots.items()))

    def __len__(self) -> int:
        return len(self._slots)

    def __repr__(self) -> str:
        return f"PriorityQueue(id={self.id}, head={self.head}, slots={sorted(self._slots)})"
