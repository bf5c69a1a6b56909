"""Bounded single-producer/single-consumer ring carrying completed series.

Push never blocks: a full ring rejects the element and the caller counts it
as a drop (the packet path must not stall waiting for analytics). Under
CPython the producer and consumer may live on different threads; the GIL
makes the head/tail cursor updates safe in that arrangement. Any other
sharing is outside the contract.
"""
from __future__ import annotations

from typing import Callable, List, Optional, TypeVar

T = TypeVar("T")

DEFAULT_CAPACITY = 4096


class CRing:
    __slots__ = ("_slots", "_mask", "_capacity", "_head", "_tail", "drops")

    def __init__(self, capacity: int = DEFAULT_CAPACITY):
        if capacity <= 0 or capacity & (capacity - 1):
            raise ValueError("capacity must be a positive power of two")
        self._capacity = capacity
        self._mask = capacity - 1
        self._slots: List[Optional[T]] = [None] * capacity
        self._head = 0  # next index to consume (free-running)
        self._tail = 0  # next index to produce (free-running)
        self.drops = 0  # rejected pushes

    @property
    def capacity(self) -> int:
        return self._capacity

    def __len__(self) -> int:
        return self._tail - self._head

    def push(self, item: T) -> bool:
        """Producer side. False (and a counted drop) when the ring is full."""
        tail = self._tail
        if tail - self._head == self._capacity:
            self.drops += 1
            return False
        self._slots[tail & self._mask] = item
        self._tail = tail + 1
        return True

    def drain_up_to(self, n: int) -> List[T]:
        """Consumer side: remove and return the min(n, len) oldest elements."""
        head = self._head
        avail = self._tail - head
        take = n if n < avail else avail
        if take <= 0:
            return []
        slots = self._slots
        mask = self._mask
        out = []
        for i in range(head, head + take):
            j = i & mask
            out.append(slots[j])
            slots[j] = None
        self._head = head + take
        return out

    def drain_matching(self, pred: Callable[[T], bool]) -> List[T]:
        """Consumer side: remove every element matching pred, oldest first.

        Non-matching elements keep their FIFO order. Only the slot range
        visible to the consumer at entry is touched, so a concurrent
        producer appending past the snapshot is unaffected.
        """
        head = self._head
        tail = self._tail  # snapshot; producer may advance past it
        if tail == head:
            return []
        slots = self._slots
        mask = self._mask
        kept: List[T] = []
        out: List[T] = []
        for i in range(head, tail):
            item = slots[i & mask]
            if pred(item):
                out.append(item)
            else:
                kept.append(item)
        if not out:
            return out
        new_head = tail - len(kept)
        for i in range(head, new_head):
            slots[i & mask] = None
        j = new_head
        for item in kept:
            slots[j & mask] = item
            j += 1
        self._head = new_head
        return out
