"""Synthetic workloads: Poisson flow arrivals over a catalog of flow shapes.

A catalog entry fixes everything about one flow except its start time and
identity: per-packet inter-arrival gaps, sizes, and directions (and
optionally a ground-truth label). A generated trace draws flow start times
from a Poisson process (piecewise-constant rate supported) and assigns each
flow a catalog shape plus a unique 5-tuple.

The same generated flow set can be consumed two ways:

 - `to_packets()` materializes the full time-sorted packet stream for the
   packet-level pipeline (including the flow table);
 - `series_events()` reduces each flow to its series-completion instant
   plus enough shape metadata (death time, post-series packet offsets) to
   account for post-mortem labels and untagged packets analytically. This
   is what keeps full-scale scenario runs tractable; the two views are
   equivalence-tested against each other.

The default synthetic catalog is a stand-in for unavailable production
datasets: heavy-tailed packet counts so both short-lived and long-lived
flows exist, uniform sizes, exponential gaps. Every knob is overridable.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .model import (
    SERIES_LENGTH,
    FiveTuple,
    PacketRecord,
    canonicalize,
    parse_ip,
    rss_hash,
    rss_hash_arrays,
    _ip_str,
)

LONG_LIVED_MIN_PKTS = 35  # flows with fewer total packets count as short-lived


class FlowShape:
    """Relative packet schedule of one flow: (gap, length, direction) rows."""

    __slots__ = ("gaps_us", "lengths", "dirs", "label", "offsets_us")

    def __init__(
        self,
        gaps_us: Sequence[int],
        lengths: Sequence[int],
        dirs: Sequence[int],
        label: Optional[int] = None,
    ):
        if not gaps_us or len(gaps_us) != len(lengths) or len(dirs) != len(lengths):
            raise ValueError("gaps, lengths, dirs must be equal-length and non-empty")
        if gaps_us[0] != 0:
            raise ValueError("first inter-arrival gap must be 0")
        if any(g < 0 for g in gaps_us):
            raise ValueError("gaps must be >= 0")
        if any(l < 1 for l in lengths):
            raise ValueError("lengths must be >= 1")
        if any(d not in (1, -1) for d in dirs):
            raise ValueError("directions must be +1/-1")
        if dirs[0] != 1:
            raise ValueError("first packet defines the forward direction")
        self.gaps_us = tuple(gaps_us)
        self.lengths = tuple(lengths)
        self.dirs = tuple(dirs)
        self.label = label
        self.offsets_us = tuple(np.cumsum(np.asarray(gaps_us, dtype=np.int64)).tolist())

    @property
    def n(self) -> int:
        return len(self.lengths)

    def features(self, k: int = SERIES_LENGTH) -> Tuple[int, ...]:
        return tuple(l * d for l, d in zip(self.lengths[:k], self.dirs[:k]))

    def series_offset_us(self, k: int = SERIES_LENGTH) -> int:
        return self.offsets_us[k - 1]

    @property
    def duration_us(self) -> int:
        return self.offsets_us[-1]

    @property
    def volume_bytes(self) -> int:
        return sum(self.lengths)


@dataclass
class Catalog:
    shapes: List[FlowShape]

    def __post_init__(self):
        if not self.shapes:
            raise ValueError("catalog must be non-empty")

    def __len__(self) -> int:
        return len(self.shapes)

    @property
    def has_labels(self) -> bool:
        return all(s.label is not None for s in self.shapes)

    def to_csv(self, path: str) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["label", "packets"])
            for s in self.shapes:
                pkts = "|".join(
                    f"{g}:{l}:{d}" for g, l, d in zip(s.gaps_us, s.lengths, s.dirs)
                )
                w.writerow(["" if s.label is None else s.label, pkts])

    @classmethod
    def from_csv(cls, path: str) -> "Catalog":
        shapes = []
        with open(path, newline="") as f:
            r = csv.reader(f)
            header = next(r)
            if header[:2] != ["label", "packets"]:
                raise ValueError(f"{path}: expected catalog header 'label,packets'")
            for lineno, row in enumerate(r, start=2):
                try:
                    label = int(row[0]) if row[0] else None
                    triples = [p.split(":") for p in row[1].split("|")]
                    gaps = [int(t[0]) for t in triples]
                    lengths = [int(t[1]) for t in triples]
                    dirs = [int(t[2]) for t in triples]
                    shapes.append(FlowShape(gaps, lengths, dirs, label))
                except (ValueError, IndexError) as e:
                    raise ValueError(f"{path}:{lineno}: bad catalog row ({e})") from None
        return cls(shapes)


def synthetic_catalog(
    seed: int,
    size: int = 1000,
    short_pkts: Tuple[int, int] = (2, 34),
    long_pkts: Tuple[int, int] = (35, 3000),
    long_fraction: float = 0.2,
    gap_mean_us: float = 5000.0,
    length_range: Tuple[int, int] = (40, 1500),
    with_labels: bool = False,
    num_classes: int = 200,
) -> Catalog:
    """Stand-in flow catalog with both short-lived and long-lived flows."""
    rng = np.random.default_rng(seed)
    shapes = []
    for _ in range(size):
        if rng.random() < long_fraction:
            n = int(rng.integers(long_pkts[0], long_pkts[1] + 1))
        else:
            n = int(rng.integers(short_pkts[0], short_pkts[1] + 1))
        if gap_mean_us > 0:
            gaps = rng.exponential(gap_mean_us, n).astype(np.int64)
        else:
            gaps = np.zeros(n, dtype=np.int64)
        gaps[0] = 0
        lengths = rng.integers(length_range[0], length_range[1] + 1, n)
        dirs = np.where(rng.random(n) < 0.5, 1, -1)
        dirs[0] = 1
        label = int(rng.integers(0, num_classes)) if with_labels else None
        shapes.append(FlowShape(gaps.tolist(), lengths.tolist(), dirs.tolist(), label))
    return Catalog(shapes)


# --- generated flow sets ----------------------------------------------------


@dataclass
class FlowSet:
    """Flows drawn from a catalog with Poisson start times; arrays per flow."""

    catalog: Catalog
    starts_us: np.ndarray  # int64, non-decreasing
    shape_ids: np.ndarray  # int32
    src_ip: np.ndarray     # uint32, unique per flow
    dst_ip: np.ndarray
    src_port: np.ndarray   # uint16-valued
    dst_port: np.ndarray
    proto: np.ndarray
    duration_us: int

    @property
    def n_flows(self) -> int:
        return len(self.starts_us)

    def flow_tuple(self, i: int) -> FiveTuple:
        return FiveTuple(
            int(self.src_ip[i]),
            int(self.dst_ip[i]),
            int(self.src_port[i]),
            int(self.dst_port[i]),
            int(self.proto[i]),
        )

    def rss_values(self) -> np.ndarray:
        return rss_hash_arrays(
            self.src_ip, self.dst_ip, self.src_port, self.dst_port, self.proto
        )

    # -- per-shape lookup tables (built lazily, shared across flows) --------

    def _shape_tables(self, k: int):
        cat = self.catalog.shapes
        n_pkts = np.array([s.n for s in cat], dtype=np.int64)
        tk_off = np.array(
            [s.series_offset_us(k) if s.n >= k else -1 for s in cat], dtype=np.int64
        )
        death_off = np.array([s.duration_us for s in cat], dtype=np.int64)
        return n_pkts, tk_off, death_off

    def series_events(self, k: int = SERIES_LENGTH) -> "SeriesEvents":
        """One event per flow that reaches K packets, sorted by completion."""
        n_pkts, tk_off, death_off = self._shape_tables(k)
        sh = self.shape_ids
        mask = n_pkts[sh] >= k
        idx = np.nonzero(mask)[0]
        t_series = self.starts_us[idx] + tk_off[sh[idx]]
        order = np.argsort(t_series, kind="stable")
        idx = idx[order]
        feats = [s.features(k) if s.n >= k else None for s in self.catalog.shapes]
        post = [
            np.asarray(s.offsets_us[k:], dtype=np.int64) if s.n >= k else None
            for s in self.catalog.shapes
        ]
        trace_end = int((self.starts_us + death_off[sh]).max()) if self.n_flows else 0
        return SeriesEvents(
            t_series=t_series[order],
            flow_ids=idx,
            shape_ids=sh[idx],
            starts_us=self.starts_us[idx],
            death_us=self.starts_us[idx] + death_off[sh[idx]],
            total_pkts=n_pkts[sh[idx]],
            rss=self.rss_values()[idx],
            features_by_shape=feats,
            post_offsets_by_shape=post,
            labels_by_shape=[s.label for s in self.catalog.shapes],
            k=k,
            trace_end_us=trace_end,
        )

    def to_packets(self) -> "PacketTrace":
        """Materialize the full packet stream (small/medium traces only)."""
        sh = self.shape_ids
        if self.n_flows == 0:
            empty32 = np.empty(0, dtype=np.uint32)
            return PacketTrace(
                ts=np.empty(0, dtype=np.int64),
                src_ip=empty32, dst_ip=empty32, src_port=empty32,
                dst_port=empty32, proto=empty32,
                length=np.empty(0, dtype=np.int32),
                direction=np.empty(0, dtype=np.int8),
                flow_id=np.empty(0, dtype=np.int64),
                labels=None, n_flows=0,
                death_us=np.empty(0, dtype=np.int64),
                total_pkts=np.empty(0, dtype=np.int64),
            )
        counts = np.array([s.n for s in self.catalog.shapes], dtype=np.int64)[sh]
        total = int(counts.sum())
        flow_id = np.repeat(np.arange(self.n_flows, dtype=np.int64), counts)
        off = np.concatenate(
            [np.asarray(self.catalog.shapes[s].offsets_us, dtype=np.int64) for s in sh]
        )
        ts = self.starts_us[flow_id] + off
        dirs = np.concatenate(
            [np.asarray(self.catalog.shapes[s].dirs, dtype=np.int8) for s in sh]
        )
        lengths = np.concatenate(
            [np.asarray(self.catalog.shapes[s].lengths, dtype=np.int32) for s in sh]
        )
        fwd = dirs > 0
        src_ip = np.where(fwd, self.src_ip[flow_id], self.dst_ip[flow_id])
        dst_ip = np.where(fwd, self.dst_ip[flow_id], self.src_ip[flow_id])
        sport = np.where(fwd, self.src_port[flow_id], self.dst_port[flow_id])
        dport = np.where(fwd, self.dst_port[flow_id], self.src_port[flow_id])
        order = np.argsort(ts, kind="stable")
        labels = None
        if self.catalog.has_labels:
            lab = np.array([s.label for s in self.catalog.shapes], dtype=np.int32)
            labels = lab[sh][flow_id][order]
        death = np.zeros(self.n_flows, dtype=np.int64)
        np.maximum.at(death, flow_id, ts)
        return PacketTrace(
            ts=ts[order],
            src_ip=src_ip[order].astype(np.uint32),
            dst_ip=dst_ip[order].astype(np.uint32),
            src_port=sport[order].astype(np.uint32),
            dst_port=dport[order].astype(np.uint32),
            proto=self.proto[flow_id][order].astype(np.uint32),
            length=lengths[order],
            direction=dirs[order],
            flow_id=flow_id[order],
            labels=labels,
            n_flows=self.n_flows,
            death_us=death,
            total_pkts=counts,
        )

    def stats(self, k: int = SERIES_LENGTH, link_load_bps: float = 100e9) -> "TraceStats":
        n_pkts, _, death_off = self._shape_tables(k)
        sh = self.shape_ids
        vol = np.array([s.volume_bytes for s in self.catalog.shapes], dtype=np.int64)
        end = int((self.starts_us + death_off[sh]).max()) if self.n_flows else 0
        return stats_from_counts(
            volume_bytes=int(vol[sh].sum()),
            packets=int(n_pkts[sh].sum()),
            flows=self.n_flows,
            series=int((n_pkts[sh] >= k).sum()),
            duration_s=end / 1e6,
            link_load_bps=link_load_bps,
        )


@dataclass
class SeriesEvents:
    """Flow-event view of a trace: one record per completed series."""

    t_series: np.ndarray       # int64, sorted (stable by flow order on ties)
    flow_ids: np.ndarray
    shape_ids: np.ndarray
    starts_us: np.ndarray
    death_us: np.ndarray
    total_pkts: np.ndarray
    rss: np.ndarray            # symmetric hash per flow (dispatch key)
    features_by_shape: list
    post_offsets_by_shape: list
    labels_by_shape: list
    k: int
    trace_end_us: int = 0  # last packet instant over all flows (series or not)

    def __len__(self) -> int:
        return len(self.t_series)


@dataclass
class PacketTrace:
    """Time-sorted packet arrays plus omniscient per-flow metadata."""

    ts: np.ndarray
    src_ip: np.ndarray
    dst_ip: np.ndarray
    src_port: np.ndarray
    dst_port: np.ndarray
    proto: np.ndarray
    length: np.ndarray
    direction: np.ndarray
    flow_id: np.ndarray
    n_flows: int
    death_us: np.ndarray   # per flow
    total_pkts: np.ndarray  # per flow
    labels: Optional[np.ndarray] = None  # per packet ground truth, optional

    def __len__(self) -> int:
        return len(self.ts)

    def packet(self, i: int) -> PacketRecord:
        return PacketRecord(
            flow=FiveTuple(
                int(self.src_ip[i]),
                int(self.dst_ip[i]),
                int(self.src_port[i]),
                int(self.dst_port[i]),
                int(self.proto[i]),
            ),
            ts=int(self.ts[i]),
            length=int(self.length[i]),
            direction=int(self.direction[i]),
        )

    def stats(self, k: int = SERIES_LENGTH, link_load_bps: float = 100e9) -> "TraceStats":
        return stats_from_counts(
            volume_bytes=int(self.length.sum()),
            packets=len(self.ts),
            flows=self.n_flows,
            series=int((self.total_pkts >= k).sum()),
            duration_s=float(self.ts[-1]) / 1e6 if len(self.ts) else 0.0,
            link_load_bps=link_load_bps,
        )

    def write_csv(self, path: str) -> None:
        with_labels = self.labels is not None
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            for i in range(len(self.ts)):
                row = [
                    int(self.ts[i]),
                    _ip_str(int(self.src_ip[i])),
                    _ip_str(int(self.dst_ip[i])),
                    int(self.src_port[i]),
                    int(self.dst_port[i]),
                    int(self.proto[i]),
                    int(self.length[i]),
                    int(self.direction[i]),
                ]
                if with_labels:
                    row.append(int(self.labels[i]))
                w.writerow(row)

    def write_npz(self, path: str) -> None:
        arrays = dict(
            ts=self.ts,
            src_ip=self.src_ip,
            dst_ip=self.dst_ip,
            src_port=self.src_port,
            dst_port=self.dst_port,
            proto=self.proto,
            length=self.length,
            direction=self.direction,
        )
        if self.labels is not None:
            arrays["labels"] = self.labels
        np.savez_compressed(path, **arrays)


def _assemble_trace(ts, src_ip, dst_ip, sport, dport, proto, length, direction, labels):
    """Group raw packet arrays into flows by canonical tuple."""
    n = len(ts)
    flow_of: dict = {}
    flow_id = np.empty(n, dtype=np.int64)
    for i in range(n):
        t = FiveTuple(int(src_ip[i]), int(dst_ip[i]), int(sport[i]), int(dport[i]), int(proto[i]))
        ckey, _ = canonicalize(t)
        fid = flow_of.get(ckey)
        if fid is None:
            fid = len(flow_of)
            flow_of[ckey] = fid
        flow_id[i] = fid
    n_flows = len(flow_of)
    death = np.zeros(n_flows, dtype=np.int64)
    totals = np.zeros(n_flows, dtype=np.int64)
    np.maximum.at(death, flow_id, ts)
    np.add.at(totals, flow_id, 1)
    return PacketTrace(
        ts=ts,
        src_ip=src_ip,
        dst_ip=dst_ip,
        src_port=sport,
        dst_port=dport,
        proto=proto,
        length=length,
        direction=direction,
        flow_id=flow_id,
        n_flows=n_flows,
        death_us=death,
        total_pkts=totals,
        labels=labels,
    )


def read_trace_csv(path: str) -> PacketTrace:
    ts = []
    src = []
    dst = []
    sport = []
    dport = []
    proto = []
    length = []
    direction = []
    labels = []
    with open(path, newline="") as f:
        for lineno, row in enumerate(csv.reader(f), start=1):
            if not row:
                continue
            try:
                ts.append(int(row[0]))
                src.append(parse_ip(row[1]))
                dst.append(parse_ip(row[2]))
                sport.append(int(row[3]))
                dport.append(int(row[4]))
                proto.append(int(row[5]))
                length.append(int(row[6]))
                direction.append(int(row[7]))
                if len(row) > 8:
                    labels.append(int(row[8]))
            except (ValueError, IndexError) as e:
                raise ValueError(f"{path}:{lineno}: bad trace row ({e})") from None
    lab = np.asarray(labels, dtype=np.int32) if len(labels) == len(ts) and labels else None
    return _assemble_trace(
        np.asarray(ts, dtype=np.int64),
        np.asarray(src, dtype=np.uint32),
        np.asarray(dst, dtype=np.uint32),
        np.asarray(sport, dtype=np.uint32),
        np.asarray(dport, dtype=np.uint32),
        np.asarray(proto, dtype=np.uint32),
        np.asarray(length, dtype=np.int32),
        np.asarray(direction, dtype=np.int8),
        lab,
    )


def read_trace_npz(path: str) -> PacketTrace:
    data = np.load(path)
    return _assemble_trace(
        data["ts"],
        data["src_ip"],
        data["dst_ip"],
        data["src_port"],
        data["dst_port"],
        data["proto"],
        data["length"],
        data["direction"],
        data["labels"] if "labels" in data else None,
    )


# --- generation --------------------------------------------------------------


def generate_flows(
    lam_per_s: float,
    duration_s: float,
    catalog: Catalog,
    seed: int,
) -> FlowSet:
    """Poisson flow arrivals at a constant rate over [0, duration)."""
    return piecewise_flows([(lam_per_s, duration_s)], catalog, seed)


def piecewise_flows(
    schedule: Sequence[Tuple[float, float]],
    catalog: Catalog,
    seed: int,
) -> FlowSet:
    """Concatenated Poisson segments of (rate flows/s, duration s)."""
    rng = np.random.default_rng(seed)
    starts = []
    t0 = 0.0
    for lam, dur in schedule:
        if lam < 0 or dur < 0:
            raise ValueError("schedule rates and durations must be >= 0")
        n = rng.poisson(lam * dur) if lam * dur > 0 else 0
        seg = np.sort(rng.uniform(0.0, dur, n)) + t0
        starts.append(seg)
        t0 += dur
    starts_s = np.concatenate(starts) if starts else np.empty(0)
    n = len(starts_s)
    if n >= 1 << 24:
        raise ValueError("flow identity space supports < 2^24 flows per trace")
    idx = np.arange(n, dtype=np.uint32)
    return FlowSet(
        catalog=catalog,
        starts_us=(starts_s * 1e6).astype(np.int64),
        shape_ids=rng.integers(0, len(catalog), n, dtype=np.int32),
        src_ip=(np.uint32(0x0A000000) | idx),
        dst_ip=np.full(n, 0xC0A80001, dtype=np.uint32),
        src_port=rng.integers(1024, 65536, n, dtype=np.uint32),
        dst_port=rng.choice(np.array([80, 443, 8080, 53], dtype=np.uint32), n),
        proto=rng.choice(np.array([6, 6, 6, 17], dtype=np.uint32), n),
        duration_us=int(t0 * 1e6),
    )


def dispatch(t: FiveTuple, n_pipelines: int) -> int:
    """RSS-style dispatch: both directions of a flow land on one pipeline."""
    return rss_hash(t) % n_pipelines


# --- dataset statistics -------------------------------------------------------


@dataclass(frozen=True)
class TraceStats:
    volume_bytes: int
    packets: int
    flows: int
    series: int
    duration_s: float
    link_load_bps: float
    mpps: float
    kflows_per_s: float
    kclass_per_s: float

    def as_dict(self) -> dict:
        return {
            "volume_gb": self.volume_bytes / 1e9,
            "packets": self.packets,
            "flows": self.flows,
            "series": self.series,
            "duration_s": self.duration_s,
            "link_load_gbps": self.link_load_bps / 1e9,
            "mpps_at_load": self.mpps,
            "kflows_per_s_at_load": self.kflows_per_s,
            "kclass_per_s_at_load": self.kclass_per_s,
        }


def stats_from_counts(
    volume_bytes: int,
    packets: int,
    flows: int,
    series: int,
    duration_s: float,
    link_load_bps: float = 100e9,
) -> TraceStats:
    """Scale dataset totals to the rates a full link would carry.

    At full load the whole volume drains in volume*8/link seconds, so each
    count divided by that span gives the per-second rate the link implies.
    """
    span = (volume_bytes * 8.0) / link_load_bps if volume_bytes else 0.0
    return TraceStats(
        volume_bytes=volume_bytes,
        packets=packets,
        flows=flows,
        series=series,
        duration_s=duration_s,
        link_load_bps=link_load_bps,
        mpps=packets / span / 1e6 if span else 0.0,
        kflows_per_s=flows / span / 1e3 if span else 0.0,
        kclass_per_s=series / span / 1e3 if span else 0.0,
    )
