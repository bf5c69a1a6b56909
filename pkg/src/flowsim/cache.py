"""Approximate LRU cache keyed on series prefixes.

The cache sits in front of batch composition: at every planning cycle each
waiting series is looked up under its truncated key and hits are pulled out
of the ring with the cached label. Results of real inference are inserted
back under the same truncation, so one labeled series can answer for every
later series sharing its first delta features.

A hit is "good" when the full-series oracle would have produced the cached
label anyway and an "error" otherwise; grading happens against the oracle,
never against traffic ground truth, because the cache can only ever be as
right as the model it is short-circuiting.
"""
from __future__ import annotations

import enum
from collections import OrderedDict
from typing import Callable, List, Optional, Tuple

from .batching import is_padding
from .model import Label, Prefix, Series
from .ring import CRing


def q_delta(s: Series, delta: int) -> Prefix:
    """First delta features of a series, order preserved."""
    if not 1 <= delta <= s.k:
        raise ValueError(f"delta must be in 1..{s.k}")
    return s.features[:delta]


def q_postfix(s: Series, delta: int) -> Prefix:
    """Last delta features; alternate key giving weight to recent packets."""
    if not 1 <= delta <= s.k:
        raise ValueError(f"delta must be in 1..{s.k}")
    return s.features[-delta:]


class HitGrade(enum.Enum):
    GOOD = "good"
    ERROR = "error"


def grade_hit(
    series: Series, cached_label: Label, oracle: Callable[[Series], Label]
) -> HitGrade:
    return HitGrade.GOOD if oracle(series) == cached_label else HitGrade.ERROR


KEY_MODES = ("prefix", "postfix", "exact")


class PrefixCache:
    """LRU map from truncated series keys to labels.

    key_mode selects the truncation: "prefix" (first delta features),
    "postfix" (last delta), or "exact" (the whole series, a regular cache).
    Lookups refresh recency whether or not they hit; misses never insert --
    entries only appear when inference results come back, so duplicate
    prefixes in flight can each reach the accelerator (counted as
    duplicate work).
    """

    def __init__(self, capacity: int, delta: int = 6, key_mode: str = "prefix"):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        if key_mode not in KEY_MODES:
            raise ValueError(f"key_mode must be one of {KEY_MODES}")
        self.capacity = capacity
        self.delta = delta
        self.key_mode = key_mode
        self._store: OrderedDict[Prefix, Label] = OrderedDict()
        self.hits = 0
        self.misses = 0
        self.evictions = 0
        self.duplicate_inserts = 0

    def __len__(self) -> int:
        return len(self._store)

    def key_for(self, s: Series) -> Prefix:
        if self.key_mode == "prefix":
            return s.features[: self.delta]
        if self.key_mode == "postfix":
            return s.features[-self.delta :]
        return s.features

    def lookup(self, s: Series) -> Optional[Label]:
        """Label for a cached key, refreshing its recency; None on miss."""
        key = self.key_for(s)
        label = self._store.get(key)
        if label is None:
            self.misses += 1
            return None
        self._store.move_to_end(key)
        self.hits += 1
        return label

    def insert(self, s: Series, label: Label) -> bool:
        """Store key -> label; True when the key is new to the cache."""
        key = self.key_for(s)
        store = self._store
        if key in store:
            store[key] = label
            store.move_to_end(key)
            self.duplicate_inserts += 1
            return False
        if len(store) >= self.capacity:
            store.popitem(last=False)
            self.evictions += 1
        store[key] = label
        return True

    def filter_ring(self, ring: CRing) -> List[Tuple[Series, Label]]:
        """Remove every waiting series whose key is cached.

        Returns (series, label) pairs oldest first; misses keep their FIFO
        order in the ring. Each element is looked up exactly once per call.
        """
        hits: List[Tuple[Series, Label]] = []

        def check(s: Series) -> bool:
            label = self.lookup(s)
            if label is None:
                return False
            hits.append((s, label))
            return True

        ring.drain_matching(check)
        return hits

    def insert_results(self, batch: List[Series], labels: List[Label]) -> int:
        """Insert inference results; padding slots are skipped.

        labels align positionally with the non-padding slots of batch.
        Returns the number of keys newly added.
        """
        added = 0
        it = iter(labels)
        for s in batch:
            if is_padding(s):
                continue
            if self.insert(s, next(it)):
                added += 1
        return added

    def stats(self) -> dict:
        return {
            "entries": len(self._store),
            "capacity": self.capacity,
            "delta": self.delta,
            "key_mode": self.key_mode,
            "hits": self.hits,
            "misses": self.misses,
            "evictions": self.evictions,
            "duplicate_inserts": self.duplicate_inserts,
        }
