"""Shared domain types: flows, packets, series, and the symmetric flow hash.

All times are integer microseconds since simulation start. IPv4 addresses
and ports are plain ints; a flow is identified by its 5-tuple in either
direction. The value types are NamedTuples: immutable, hashable, and cheap
enough to create in per-packet loops.
"""
from __future__ import annotations

from typing import NamedTuple, Optional, Tuple

import numpy as np

SERIES_LENGTH = 10          # packets per series (K)
NUM_CLASSES = 200           # label space of the reference classifier
MAX_PACKET_LEN = 65535

SimTime = int               # microseconds
Label = int                 # 0 .. NUM_CLASSES-1
Prefix = Tuple[int, ...]    # first delta features of a series


class FiveTuple(NamedTuple):
    src_ip: int
    dst_ip: int
    src_port: int
    dst_port: int
    proto: int

    def __str__(self) -> str:
        return (
            f"{_ip_str(self.src_ip)}:{self.src_port}->"
            f"{_ip_str(self.dst_ip)}:{self.dst_port}/{self.proto}"
        )


def _ip_str(ip: int) -> str:
    return ".".join(str((ip >> s) & 0xFF) for s in (24, 16, 8, 0))


def parse_ip(text: str) -> int:
    parts = text.split(".")
    if len(parts) != 4:
        raise ValueError(f"bad IPv4 address: {text!r}")
    ip = 0
    for p in parts:
        ip = (ip << 8) | (int(p) & 0xFF)
    return ip


def reverse(t: FiveTuple) -> FiveTuple:
    return FiveTuple(t.dst_ip, t.src_ip, t.dst_port, t.src_port, t.proto)


def canonicalize(t: FiveTuple) -> Tuple[FiveTuple, int]:
    """Return the direction-independent form of a 5-tuple.

    The endpoint with the lexicographically smaller (ip, port) pair becomes
    the source. Returns (canonical tuple, +1) when t is already canonical,
    (reversed tuple, -1) otherwise, so both directions of one flow map to
    the same canonical tuple with opposite signs.
    """
    if t.src_ip < t.dst_ip:
        return t, 1
    if t.src_ip > t.dst_ip:
        return reverse(t), -1
    if t.src_port <= t.dst_port:
        return t, 1
    return reverse(t), -1


class PacketRecord(NamedTuple):
    """One packet event: the wire 5-tuple, arrival time, size, direction.

    direction is +1 when the packet travels from the flow initiator to the
    responder, -1 on the way back. The wire tuple of a -1 packet has the
    responder as its source.
    """

    flow: FiveTuple
    ts: SimTime
    length: int
    direction: int


class Series(NamedTuple):
    """The feature vector extracted from a flow's first K packets.

    Each feature is the packet length signed by direction (positive =
    initiator to responder). `key` is the flow tuple oriented as first
    observed; workload modes that never touch a flow table leave it None.
    `completed_at` is the arrival time of the Kth packet.
    """

    key: Optional[FiveTuple]
    features: Tuple[int, ...]
    completed_at: SimTime

    @property
    def k(self) -> int:
        return len(self.features)


def series_from_packets(key: FiveTuple, packets: list) -> Series:
    feats = tuple(p.length * p.direction for p in packets)
    return Series(key, feats, packets[-1].ts)


# --- symmetric flow hash -------------------------------------------------
#
# Stand-in for the NIC's symmetric RSS hash: a 64-bit avalanche mix over the
# canonically ordered endpoints, truncated to 32 bits. Symmetric by
# construction (endpoints are sorted before mixing) and cheap to evaluate
# both per-packet and vectorized over numpy arrays.

_M1 = 0xFF51AFD7ED558CCD
_M2 = 0xC4CEB9FE1A85EC53
_MASK64 = (1 << 64) - 1


def _mix64(x: int) -> int:
    x ^= x >> 33
    x = (x * _M1) & _MASK64
    x ^= x >> 33
    x = (x * _M2) & _MASK64
    x ^= x >> 33
    return x


def rss_hash(t: FiveTuple) -> int:
    """32-bit symmetric hash of a 5-tuple (same value for both directions)."""
    a = (t.src_ip << 16) | t.src_port
    b = (t.dst_ip << 16) | t.dst_port
    if a > b:
        a, b = b, a
    x = (a * 0x9E3779B97F4A7C15 + b * 0xC2B2AE3D27D4EB4F + t.proto) & _MASK64
    return _mix64(x) & 0xFFFFFFFF


def rss_hash_arrays(src_ip, dst_ip, src_port, dst_port, proto) -> np.ndarray:
    """Vectorized rss_hash over parallel numpy arrays (uint32 result)."""
    a = (src_ip.astype(np.uint64) << np.uint64(16)) | src_port.astype(np.uint64)
    b = (dst_ip.astype(np.uint64) << np.uint64(16)) | dst_port.astype(np.uint64)
    lo = np.minimum(a, b)
    hi = np.maximum(a, b)
    x = (
        lo * np.uint64(0x9E3779B97F4A7C15)
        + hi * np.uint64(0xC2B2AE3D27D4EB4F)
        + proto.astype(np.uint64)
    )
    x ^= x >> np.uint64(33)
    x *= np.uint64(_M1)
    x ^= x >> np.uint64(33)
    x *= np.uint64(_M2)
    x ^= x >> np.uint64(33)
    return (x & np.uint64(0xFFFFFFFF)).astype(np.uint32)
