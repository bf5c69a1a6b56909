"""Per-pipeline flow-state store: bucketed hash table over a data array.

Layout follows the hardware-oriented design it models: each bucket is one
logical cache line holding an occupancy bitmap and eight (tag, timestamp,
index) entries, where the 1-byte tag is a quick filter taken from the hash,
the 2-byte coarse timestamp (seconds, wrapping) drives lazy staleness
eviction, and the 4-byte index points into a flat data array of flow
records. Free data-array slots are recycled through a ring of indexes, and
overflow chains come from a dynamic pool of identically shaped buckets.

The table has one exclusive owner (the flow manager worker). The label
field of a record is the only externally written state: the analytics side
may set it once, and packet processing only ever reads it.
"""
from __future__ import annotations

from collections import deque
from typing import Dict, List, Optional, Tuple

from .model import (
    FiveTuple,
    Label,
    PacketRecord,
    Series,
    SimTime,
    canonicalize,
    reverse,
    rss_hash,
)

DEFAULT_CAPACITY = 1 << 19
DEFAULT_BUCKETS = 1 << 17
DEFAULT_STALE_TIMEOUT_S = 30
DEFAULT_SERIES_LENGTH = 10

ENTRIES_PER_BUCKET = 8
_TS_MASK = 0xFFFF  # 2-byte coarse timestamp wraps every 65536 s


def flow_hash(rss: int, t: FiveTuple) -> int:
    """32-bit flow hash: the symmetric RSS value XORed with both addresses.

    Symmetric in flow direction because XOR commutes. The bucket index is
    drawn from the three low bytes and the tag from the high byte, so the
    tag filter and the index use disjoint hash bits.
    """
    return (rss ^ t.src_ip ^ t.dst_ip) & 0xFFFFFFFF


def hash_tag(h: int) -> int:
    return (h >> 24) & 0xFF


class Bucket:
    __slots__ = ("bitmap", "tags", "stamps", "indexes", "next")

    def __init__(self):
        self.bitmap = 0
        self.tags = [0] * ENTRIES_PER_BUCKET
        self.stamps = [0] * ENTRIES_PER_BUCKET
        self.indexes = [0] * ENTRIES_PER_BUCKET
        self.next: Optional[Bucket] = None


class FlowRecord:
    __slots__ = ("key", "label", "features", "pkt_count", "first_src")

    def __init__(self, key: FiveTuple, first_src: Tuple[int, int]):
        self.key = key              # canonical orientation
        self.label: Optional[Label] = None
        self.features: List[int] = []
        self.pkt_count = 0
        self.first_src = first_src  # (ip, port) of the initiating endpoint


# on_packet outcomes ---------------------------------------------------------


class TagAndForward:
    __slots__ = ("label",)

    def __init__(self, label: Label):
        self.label = label

    def __repr__(self):
        return f"TagAndForward({self.label})"


class SeriesReady:
    __slots__ = ("series",)

    def __init__(self, series: Series):
        self.series = series

    def __repr__(self):
        return f"SeriesReady({self.series})"


class _Marker:
    __slots__ = ("_name",)

    def __init__(self, name: str):
        self._name = name

    def __repr__(self):
        return self._name


FORWARD_UNTAGGED = _Marker("ForwardUntagged")
DROPPED_NO_CAPACITY = _Marker("DroppedNoCapacity")


class FlowTable:
    def __init__(
        self,
        capacity: int = DEFAULT_CAPACITY,
        buckets: int = DEFAULT_BUCKETS,
        stale_timeout_s: int = DEFAULT_STALE_TIMEOUT_S,
        series_length: int = DEFAULT_SERIES_LENGTH,
    ):
        if buckets <= 0 or buckets & (buckets - 1):
            raise ValueError("bucket count must be a power of two")
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.series_length = series_length
        self.stale_timeout_s = stale_timeout_s
        self._bucket_mask = buckets - 1
        self._buckets = [Bucket() for _ in range(buckets)]
        self._data: List[Optional[FlowRecord]] = [None] * capacity
        self._free = deque(range(capacity))
        self._chain_pool: List[Bucket] = []
        self.occupied = 0
        self.reclaimed_total = 0

    # -- bookkeeping --------------------------------------------------------

    @property
    def load_factor(self) -> float:
        return self.occupied / self.capacity

    @property
    def free_count(self) -> int:
        return len(self._free)

    def stats(self) -> dict:
        chain_hist: Dict[int, int] = {}
        for b in self._buckets:
            n = 0
            cur = b.next
            while cur is not None:
                n += 1
                cur = cur.next
            chain_hist[n] = chain_hist.get(n, 0) + 1
        return {
            "capacity": self.capacity,
            "buckets": len(self._buckets),
            "occupied": self.occupied,
            "free": len(self._free),
            "load_factor": self.load_factor,
            "stale_timeout_s": self.stale_timeout_s,
            "reclaimed_total": self.reclaimed_total,
            "chain_length_histogram": {str(k): v for k, v in sorted(chain_hist.items())},
        }

    # -- core operations ----------------------------------------------------

    def _find(self, bucket: Bucket, tag: int, ckey: FiveTuple):
        """Walk a bucket chain; return (bucket, slot, record) or None.

        A tag mismatch skips the key comparison entirely; equal keys always
        have equal tags, so the filter can never hide a true match. Only
        occupied slots are visited (bit iteration over the bitmap).
        """
        data = self._data
        cur = bucket
        while cur is not None:
            bits = cur.bitmap
            if bits:
                tags = cur.tags
                indexes = cur.indexes
                while bits:
                    low = bits & -bits
                    slot = low.bit_length() - 1
                    if tags[slot] == tag:
                        rec = data[indexes[slot]]
                        if rec is not None and rec.key == ckey:
                            return cur, slot, rec
                    bits ^= low
            cur = cur.next
        return None

    def _stale(self, stamp: int, now_s: int) -> bool:
        return ((now_s - stamp) & _TS_MASK) > self.stale_timeout_s

    def reclaim_stale(self, bucket: Bucket, now: SimTime) -> int:
        """Free every stale entry in one bucket chain (lazy eviction).

        Called during insertion when the bucket chain or the free-index
        ring is exhausted; never runs as a background sweep. Emptied chain
        buckets are unlinked and returned to the pool.
        """
        now_s = (now // 1_000_000) & _TS_MASK
        reclaimed = 0
        cur: Optional[Bucket] = bucket
        while cur is not None:
            bitmap = cur.bitmap
            slot_bit = 1
            for slot in range(ENTRIES_PER_BUCKET):
                if bitmap & slot_bit and self._stale(cur.stamps[slot], now_s):
                    idx = cur.indexes[slot]
                    self._data[idx] = None
                    self._free.append(idx)
                    bitmap &= ~slot_bit
                    reclaimed += 1
                slot_bit <<= 1
            cur.bitmap = bitmap
            cur = cur.next
        # unlink and recycle empty chain buckets (head stays in place)
        cur = bucket
        while cur.next is not None:
            nxt = cur.next
            if nxt.bitmap == 0:
                cur.next = nxt.next
                nxt.next = None
                self._chain_pool.append(nxt)
            else:
                cur = nxt
        self.occupied -= reclaimed
        self.reclaimed_total += reclaimed
        return reclaimed

    def _free_slot(self, bucket: Bucket):
        cur = bucket
        while True:
            if cur.bitmap != 0xFF:
                for slot in range(ENTRIES_PER_BUCKET):
                    if not cur.bitmap & (1 << slot):
                        return cur, slot
            if cur.next is None:
                return None
            cur = cur.next

    def _extend_chain(self, bucket: Bucket) -> Tuple[Bucket, int]:
        cur = bucket
        while cur.next is not None:
            cur = cur.next
        fresh = self._chain_pool.pop() if self._chain_pool else Bucket()
        cur.next = fresh
        return fresh, 0

    def on_packet(self, pkt: PacketRecord, now: SimTime, rss: Optional[int] = None):
        """Route one packet through the flow state machine.

        Returns exactly one of: TagAndForward(label) for labeled flows,
        SeriesReady(series) when this packet completes the K-feature
        series, FORWARD_UNTAGGED otherwise, or DROPPED_NO_CAPACITY when a
        new flow cannot be inserted even after reclaiming stale entries in
        its bucket. Direction is derived from the recorded initiator, not
        from the packet's direction annotation. Callers that already hold
        the NIC's symmetric hash pass it as rss to skip recomputation.
        """
        t = pkt.flow
        sip = t[0]
        dip = t[1]
        spt = t[2]
        if sip < dip or (sip == dip and spt <= t[3]):
            ckey = t
        else:
            ckey = FiveTuple(dip, sip, t[3], spt, t[4])
        if rss is None:
            rss = rss_hash(ckey)
        h = (rss ^ sip ^ dip) & 0xFFFFFFFF
        bucket = self._buckets[(h & 0xFFFFFF) & self._bucket_mask]
        tag = h >> 24
        now_s = (now // 1_000_000) & _TS_MASK

        found = self._find(bucket, tag, ckey)
        if found is not None:
            fb, slot, rec = found
            fb.stamps[slot] = now_s
            count = rec.pkt_count + 1
            rec.pkt_count = count
            if rec.label is not None:
                return TagAndForward(rec.label)
            if count <= self.series_length:
                sign = 1 if (sip, spt) == rec.first_src else -1
                rec.features.append(pkt[2] * sign)
                if count == self.series_length:
                    return SeriesReady(self._make_series(rec, now))
            return FORWARD_UNTAGGED

        # new flow: need a data-array index and a bucket slot
        placed = self._free_slot(bucket)
        if placed is None or not self._free:
            self.reclaim_stale(bucket, now)
            if not self._free:
                return DROPPED_NO_CAPACITY
            placed = self._free_slot(bucket)
            if placed is None:
                placed = self._extend_chain(bucket)
        tb, slot = placed

        idx = self._free.popleft()
        rec = FlowRecord(ckey, (sip, spt))
        rec.pkt_count = 1
        rec.features.append(pkt[2])  # first packet defines forward
        self._data[idx] = rec
        tb.tags[slot] = tag
        tb.stamps[slot] = now_s
        tb.indexes[slot] = idx
        tb.bitmap |= 1 << slot
        self.occupied += 1
        if self.series_length == 1:
            return SeriesReady(self._make_series(rec, now))
        return FORWARD_UNTAGGED

    def _make_series(self, rec: FlowRecord, now: SimTime) -> Series:
        key = rec.key
        if (key.src_ip, key.src_port) != rec.first_src:
            key = reverse(key)
        return Series(key=key, features=tuple(rec.features), completed_at=now)

    def apply_label(self, key: FiveTuple, label: Label) -> bool:
        """Deliver an analytics result; False if the flow is already gone.

        First writer wins: a label, once stored, is never replaced. The
        single assignment is the only cross-thread write this table admits.
        """
        ckey, _ = canonicalize(key)
        h = flow_hash(rss_hash(ckey), ckey)
        bucket = self._buckets[(h & 0xFFFFFF) & self._bucket_mask]
        found = self._find(bucket, (h >> 24) & 0xFF, ckey)
        if found is None:
            return False
        rec = found[2]
        if rec.label is None:
            rec.label = label
        return True

    def lookup(self, key: FiveTuple) -> Optional[FlowRecord]:
        ckey, _ = canonicalize(key)
        h = flow_hash(rss_hash(ckey), ckey)
        bucket = self._buckets[(h & 0xFFFFFF) & self._bucket_mask]
        found = self._find(bucket, (h >> 24) & 0xFF, ckey)
        return None if found is None else found[2]
