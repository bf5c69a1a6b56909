"""Deterministic discrete-event engine wiring the pipeline stages together.

Topologies (per pipeline): "1:1:1" is one flow manager, one analytics
manager, one chip; "2:1:1" feeds one analytics manager from two flow
managers (two rings, drained round-robin); "1:1:2" gives one analytics
manager two chips. A flow is dispatched by its symmetric hash, so both
directions and every series of one flow stay on one manager pair.

Two workload granularities drive the same analytics machinery:

 - packet mode (`run_packets`) pushes every packet through a FlowTable and
   feeds completed series into the rings; full fidelity, used for small
   and medium traces and for oracle comparisons.
 - series mode (`run_series`) consumes the flow-event view of a trace (one
   event per completed series, with flow death times and post-series
   packet offsets carried as metadata). Packet forwarding effects
   (untagged counts, post-mortem) are computed analytically from the
   metadata, which keeps full-scale scenario sweeps tractable. The two
   modes are equivalence-tested on traces where no capacity pressure
   exists (table drops cannot be modeled without packets).

Event ordering is total and fixed: at equal timestamps, packet/series
arrivals precede inference completions, which precede planning deadlines;
remaining ties break by insertion sequence. Planning deadlines are
periodic with period T aligned to phase 0. A timeout of zero and the
no-timeout mode are both realized as immediate planning: compose whenever
a chip is idle and series are waiting; in that mode the cache is consulted
once per series on arrival instead of per deadline sweep.
"""
from __future__ import annotations

import heapq
import json
import threading
import time
from dataclasses import dataclass
from typing import Callable, Dict, List, NamedTuple, Optional, Tuple

import numpy as np

from .accelerator import AcceleratorProfile, HashLabelOracle, TableLabelOracle
from .batching import BatchMode, PolicyConfig, plan as make_plan
from .cache import PrefixCache
from .flowtable import (
    FORWARD_UNTAGGED,
    FlowTable,
    SeriesReady,
    TagAndForward,
)
from .model import (
    NUM_CLASSES,
    SERIES_LENGTH,
    FiveTuple,
    PacketRecord,
    rss_hash,
    rss_hash_arrays,
)
from .ring import DEFAULT_CAPACITY as RING_DEFAULT_CAPACITY, CRing
from .traffic import LONG_LIVED_MIN_PKTS, PacketTrace, SeriesEvents

_RANK_COMPLETE = 1
_RANK_DEADLINE = 2

TOPOLOGIES = ("1:1:1", "2:1:1", "1:1:2")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class CacheConfig:
    capacity: int
    delta: int = 6
    key_mode: str = "prefix"


@dataclass(frozen=True)
class TableConfig:
    capacity: int = 1 << 19
    buckets: int = 1 << 17
    stale_timeout_s: int = 30


@dataclass(frozen=True)
class Deployment:
    topology: str = "1:1:1"
    pipelines: int = 1

    def __post_init__(self):
        if self.topology not in TOPOLOGIES:
            raise ConfigError(f"topology must be one of {TOPOLOGIES}")
        if self.pipelines < 1:
            raise ConfigError("pipelines must be >= 1")

    @property
    def flow_managers_per_pipeline(self) -> int:
        return 2 if self.topology == "2:1:1" else 1

    @property
    def chips_per_manager(self) -> int:
        return 2 if self.topology == "1:1:2" else 1


class _Item(NamedTuple):
    """Ring element: a completed series plus the engine's flow reference."""

    key: Optional[FiveTuple]
    features: Tuple[int, ...]
    completed_at: int
    ref: int  # flow index (packet mode) or event index (series mode)

    @property
    def k(self) -> int:
        return len(self.features)


class _Chip:
    __slots__ = ("busy",)

    def __init__(self):
        self.busy = False


class _Manager:
    __slots__ = ("rings", "chips", "cache", "rr", "deadline_at")

    def __init__(self, n_rings: int, n_chips: int, ring_capacity: int,
                 cache: Optional[PrefixCache]):
        self.rings = [CRing(ring_capacity) for _ in range(n_rings)]
        self.chips = [_Chip() for _ in range(n_chips)]
        self.cache = cache
        self.rr = 0
        self.deadline_at = -1  # scheduled deadline time, -1 when none

    def waiting(self) -> int:
        return sum(len(r) for r in self.rings)

    def idle_chip(self) -> Optional[_Chip]:
        for c in self.chips:
            if not c.busy:
                return c
        return None


@dataclass
class MetricsReport:
    """Everything one run measures, JSON-ready via to_dict()."""

    config: dict
    counters: dict
    delay_us: dict
    padding_ratio: dict
    post_mortem_ratio: float
    untagged_long_lived: int
    usage: dict
    avg_batch_size: float
    cache: Optional[dict]
    windows: List[dict]

    def to_dict(self) -> dict:
        return {
            "schema": "flowsim-report-v1",
            "config": self.config,
            "counters": self.counters,
            "delay_us": self.delay_us,
            "padding_ratio": self.padding_ratio,
            "post_mortem_ratio": self.post_mortem_ratio,
            "untagged_long_lived": self.untagged_long_lived,
            "usage": self.usage,
            "avg_batch_size": self.avg_batch_size,
            "cache": self.cache,
            "windows": self.windows,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


WINDOWS_CSV_COLUMNS = (
    "window_s",
    "series_arrived",
    "batches",
    "avg_batch_size",
    "busy_us",
    "padding_busy_us",
    "usage",
    "labels",
    "cache_hits",
)
WINDOWS_CSV_VERSION = "flowsim-windows-v1"


def write_windows_csv(report: MetricsReport, path: str) -> None:
    """Per-second time series for plotting; column names are versioned."""
    with open(path, "w") as f:
        f.write(f"# {WINDOWS_CSV_VERSION}\n")
        f.write(",".join(WINDOWS_CSV_COLUMNS) + "\n")
        for w in report.windows:
            f.write(",".join(str(w[c]) for c in WINDOWS_CSV_COLUMNS) + "\n")


PERCENTILES = (1, 25, 50, 75, 99)


def _percentile_summary(values: np.ndarray) -> dict:
    if len(values) == 0:
        return {"count": 0, "mean": None,
                **{f"p{p}": None for p in PERCENTILES}}
    pct = np.percentile(values, PERCENTILES)
    out = {"count": int(len(values)), "mean": float(values.mean())}
    for p, v in zip(PERCENTILES, pct):
        out[f"p{p}"] = float(v)
    return out


class _Engine:
    def __init__(
        self,
        deployment: Deployment,
        policy: PolicyConfig,
        cache_cfg: Optional[CacheConfig],
        profile: AcceleratorProfile,
        oracle: Callable,
        ring_capacity: int = RING_DEFAULT_CAPACITY,
        k: int = SERIES_LENGTH,
    ):
        if profile.chips < deployment.chips_per_manager:
            raise ConfigError(
                f"topology {deployment.topology} needs {deployment.chips_per_manager} "
                f"chips but profile {profile.name!r} has {profile.chips}"
            )
        self.deployment = deployment
        self.policy = policy
        self.profile = profile
        self.oracle = oracle
        self.k = k
        self.sizes = profile.batch_sizes
        self.immediate = policy.mode is BatchMode.NO_TIMEOUT or policy.timeout_us == 0
        self.period = policy.timeout_us
        self.fms_per_mgr = deployment.flow_managers_per_pipeline
        self.n_fms = deployment.pipelines * self.fms_per_mgr
        self.managers = [
            _Manager(
                self.fms_per_mgr,
                deployment.chips_per_manager,
                ring_capacity,
                PrefixCache(cache_cfg.capacity, cache_cfg.delta, cache_cfg.key_mode)
                if cache_cfg
                else None,
            )
            for _ in range(deployment.pipelines)
        ]

        self.heap: list = []
        self.seq = 0
        self.packet_mode = False

        # outcome arrays are bound by the runner (one slot per flow/event)
        self.label_us: np.ndarray = np.empty(0)
        self.t_series: np.ndarray = np.empty(0)
        self.hit_flag: np.ndarray = np.empty(0)

        self.produced = 0
        self.ring_dropped = 0
        self.inferred = 0
        self.hits_good = 0
        self.hits_error = 0
        self.batches = 0
        self.batch_size_sum = 0
        self.padding_slots = 0
        self.busy_us = 0
        self.padding_busy_us = 0.0
        self.last_completion_us = 0
        self.padding_ratios: List[float] = []

        self.win_busy: Dict[int, int] = {}
        self.win_pad_busy: Dict[int, float] = {}
        self.win_batches: Dict[int, int] = {}
        self.win_bsum: Dict[int, int] = {}
        self.win_labels: Dict[int, int] = {}
        self.win_hits: Dict[int, int] = {}

    # -- event helpers -------------------------------------------------------

    def _push_event(self, t: int, rank: int, payload) -> None:
        self.seq += 1
        heapq.heappush(self.heap, (t, rank, self.seq, payload))

    def _schedule_deadline(self, mgr: _Manager, now: int) -> None:
        if self.immediate or mgr.deadline_at >= 0:
            return
        t = (now // self.period + 1) * self.period
        mgr.deadline_at = t
        self._push_event(t, _RANK_DEADLINE, mgr)

    # -- series intake ---------------------------------------------------------

    def _accept(self, mgr: _Manager, ring_idx: int, item: _Item, now: int) -> None:
        """A completed series reaches the analytics side."""
        self.produced += 1
        cache = mgr.cache
        if self.immediate and cache is not None:
            label = cache.lookup(item)
            if label is not None:
                self._deliver(item, label, now, from_cache=True)
                return
        if not mgr.rings[ring_idx].push(item):
            self.ring_dropped += 1
            return
        if self.immediate:
            self._plan_loop(mgr, now)
        else:
            self._schedule_deadline(mgr, now)

    # -- planning / inference --------------------------------------------------

    def _drain(self, mgr: _Manager, take: int) -> List[_Item]:
        rings = mgr.rings
        if len(rings) == 1:
            return rings[0].drain_up_to(take)
        out: List[_Item] = []
        cur = mgr.rr
        n = len(rings)
        while take > 0:
            picked = False
            for off in range(n):
                r = rings[(cur + off) % n]
                if len(r):
                    out.extend(r.drain_up_to(1))
                    cur = (cur + off + 1) % n
                    take -= 1
                    picked = True
                    break
            if not picked:
                break
        mgr.rr = cur
        return out

    def _plan_loop(self, mgr: _Manager, now: int) -> None:
        """Compose and submit batches while series wait and a chip is idle.

        Equivalent to padding the batch and running infer(), but skips
        materializing sentinel slots: labels come from the real items, the
        latency from the model size.
        """
        oracle = self.oracle
        while True:
            r = mgr.waiting()
            if r == 0:
                return
            chip = mgr.idle_chip()
            if chip is None:
                return
            plan = make_plan(r, self.sizes, self.policy)
            items = self._drain(mgr, plan.take)
            labels = [oracle(it) for it in items]
            latency = self.profile.latency_us(plan.model_size)
            completion = now + latency
            chip.busy = True
            self.batches += 1
            self.batch_size_sum += plan.model_size
            self.padding_slots += plan.padding
            self.padding_ratios.append(plan.padding_ratio)
            self.busy_us += latency
            pad_share = latency * plan.padding / plan.model_size
            self.padding_busy_us += pad_share
            w = now // 1_000_000
            self.win_busy[w] = self.win_busy.get(w, 0) + latency
            self.win_pad_busy[w] = self.win_pad_busy.get(w, 0.0) + pad_share
            self.win_batches[w] = self.win_batches.get(w, 0) + 1
            self.win_bsum[w] = self.win_bsum.get(w, 0) + plan.model_size
            self._push_event(completion, _RANK_COMPLETE, (mgr, chip, items, labels))

    def _fire_deadline(self, mgr: _Manager, now: int) -> None:
        mgr.deadline_at = -1
        cache = mgr.cache
        if cache is not None:
            for ring in mgr.rings:
                for item, label in cache.filter_ring(ring):
                    self._deliver(item, label, now, from_cache=True)
        self._plan_loop(mgr, now)
        if mgr.waiting():
            self._schedule_deadline(mgr, now)

    def _complete(self, mgr: _Manager, chip: _Chip, items: List[_Item],
                  labels: List[int], now: int) -> None:
        chip.busy = False
        self.last_completion_us = now
        self.inferred += len(items)
        label_us = self.label_us
        for item in items:
            label_us[item.ref] = now
        if self.packet_mode:
            apply_label = self._apply_label
            for item, label in zip(items, labels):
                apply_label(item, label, now)
        w = now // 1_000_000
        self.win_labels[w] = self.win_labels.get(w, 0) + len(items)
        if mgr.cache is not None:
            mgr.cache.insert_results(items, labels)
        if self.immediate:
            self._plan_loop(mgr, now)

    def _deliver(self, item: _Item, label: int, now: int, from_cache: bool) -> None:
        i = item.ref
        self.label_us[i] = now
        if from_cache:
            self.hit_flag[i] = True
            if self.oracle(item) == label:
                self.hits_good += 1
            else:
                self.hits_error += 1
            w = now // 1_000_000
            self.win_hits[w] = self.win_hits.get(w, 0) + 1
        w = now // 1_000_000
        self.win_labels[w] = self.win_labels.get(w, 0) + 1
        if self.packet_mode:
            self._apply_label(item, label, now)

    def _apply_label(self, item: _Item, label: int, now: int) -> None:
        """Replaced in packet mode to write the label into the flow table."""

    # -- report ---------------------------------------------------------------

    def _report(
        self,
        config: dict,
        duration_us: int,
        mask: np.ndarray,
        death_us: np.ndarray,
        untagged_long: int,
        arrival_bins: np.ndarray,
        extra_counters: dict,
    ) -> MetricsReport:
        label = self.label_us[mask]
        t0 = self.t_series[mask]
        labeled = label >= 0
        delays = (label[labeled] - t0[labeled]).astype(np.int64)
        death = death_us[mask]
        post_mortem = (~labeled) | (label >= death)
        n_series_flows = int(mask.sum())

        wall = max(duration_us, self.last_completion_us, 1)
        chips_total = self.deployment.pipelines * self.deployment.chips_per_manager
        usage_total = self.busy_us / wall / chips_total
        usage_padding = self.padding_busy_us / wall / chips_total

        cache_stats = None
        hits_total = self.hits_good + self.hits_error
        if self.managers[0].cache is not None:
            cache_stats = {"per_manager": [m.cache.stats() for m in self.managers]}
            resolved = hits_total + self.inferred
            cache_stats["series_hit_ratio"] = hits_total / resolved if resolved else 0.0

        last_w = max(wall // 1_000_000, 0)
        windows = []
        for w in range(int(last_w) + 1):
            batches = self.win_batches.get(w, 0)
            windows.append(
                {
                    "window_s": w,
                    "series_arrived": int(arrival_bins[w]) if w < len(arrival_bins) else 0,
                    "batches": batches,
                    "avg_batch_size": (self.win_bsum.get(w, 0) / batches) if batches else 0.0,
                    "busy_us": self.win_busy.get(w, 0),
                    "padding_busy_us": round(self.win_pad_busy.get(w, 0.0), 6),
                    "usage": self.win_busy.get(w, 0) / 1e6 / chips_total,
                    "labels": self.win_labels.get(w, 0),
                    "cache_hits": self.win_hits.get(w, 0),
                }
            )

        counters = {
            "series_flows": n_series_flows,
            "series_produced": self.produced,
            "ring_dropped": self.ring_dropped,
            "inferred": self.inferred,
            "cache_hits_good": self.hits_good,
            "cache_hits_error": self.hits_error,
            "labels_delivered": int(labeled.sum()),
            "batches": self.batches,
            "padding_slots": self.padding_slots,
        }
        counters.update(extra_counters)

        return MetricsReport(
            config=config,
            counters=counters,
            delay_us=_percentile_summary(delays),
            padding_ratio=_percentile_summary(np.asarray(self.padding_ratios)),
            post_mortem_ratio=float(post_mortem.mean()) if n_series_flows else 0.0,
            untagged_long_lived=int(untagged_long),
            usage={
                "busy_us": int(self.busy_us),
                "padding_busy_us": round(float(self.padding_busy_us), 6),
                "wall_us": int(wall),
                "total": usage_total,
                "padding": usage_padding,
                "padding_share_of_busy": (
                    self.padding_busy_us / self.busy_us if self.busy_us else 0.0
                ),
            },
            avg_batch_size=(self.batch_size_sum / self.batches) if self.batches else 0.0,
            cache=cache_stats,
            windows=windows,
        )


# --- series (flow-event) mode -------------------------------------------------


def run_series(
    events: SeriesEvents,
    deployment: Deployment,
    policy: PolicyConfig,
    cache_cfg: Optional[CacheConfig],
    profile: AcceleratorProfile,
    duration_us: Optional[int] = None,
    seed: int = 0,
    ring_capacity: int = RING_DEFAULT_CAPACITY,
    num_classes: int = NUM_CLASSES,
    use_ground_truth: bool = False,
    config_echo: Optional[dict] = None,
) -> MetricsReport:
    oracle = _build_oracle(events, num_classes, use_ground_truth)
    if duration_us is None:
        duration_us = events.trace_end_us
    eng = _Engine(deployment, policy, cache_cfg, profile, oracle,
                  ring_capacity, events.k)
    n = len(events)
    eng.label_us = np.full(n, -1, dtype=np.int64)
    eng.t_series = events.t_series
    eng.hit_flag = np.zeros(n, dtype=bool)

    fm_idx = (events.rss % np.uint32(eng.n_fms)).astype(np.int64)
    mgr_idx = fm_idx // eng.fms_per_mgr
    feats = events.features_by_shape
    shapes = events.shape_ids
    ts = events.t_series
    managers = eng.managers
    rings_flat = [
        mgr.rings[r] for mgr in managers for r in range(eng.fms_per_mgr)
    ]
    caches = [mgr.cache for mgr in managers]
    immediate = eng.immediate
    heap = eng.heap
    heappop = heapq.heappop

    # the arrival fast path runs once per series; arrays convert to plain
    # lists a chunk at a time (scalar numpy indexing would dominate runtime)
    produced = 0
    dropped = 0
    CHUNK = 1 << 16
    i = 0
    while i < n:
        hi = min(n, i + CHUNK)
        ts_c = ts[i:hi].tolist()
        sh_c = shapes[i:hi].tolist()
        fm_c = fm_idx[i:hi].tolist()
        mgr_c = mgr_idx[i:hi].tolist()
        j = 0
        m = hi - i
        base = i
        while j < m:
            now = ts_c[j]
            # arrivals outrank same-time completions/deadlines
            if heap and heap[0][0] < now:
                t, rank, _, payload = heappop(heap)
                if rank == _RANK_COMPLETE:
                    mgr, chip, items, labels = payload
                    eng._complete(mgr, chip, items, labels, t)
                else:
                    eng._fire_deadline(payload, t)
                continue
            item = _Item(None, feats[sh_c[j]], now, base + j)
            produced += 1
            mgr = managers[mgr_c[j]]
            if immediate:
                cache = caches[mgr_c[j]]
                if cache is not None:
                    label = cache.lookup(item)
                    if label is not None:
                        eng._deliver(item, label, now, from_cache=True)
                        j += 1
                        continue
                if not rings_flat[fm_c[j]].push(item):
                    dropped += 1
                else:
                    eng._plan_loop(mgr, now)
            else:
                if not rings_flat[fm_c[j]].push(item):
                    dropped += 1
                elif mgr.deadline_at < 0:
                    eng._schedule_deadline(mgr, now)
            j += 1
        i = hi
    eng.produced = produced
    eng.ring_dropped = dropped
    while heap:
        t, rank, _, payload = heappop(heap)
        if rank == _RANK_COMPLETE:
            mgr, chip, items, labels = payload
            eng._complete(mgr, chip, items, labels, t)
        else:
            eng._fire_deadline(payload, t)

    untagged_long = _untagged_long_lived_series(events, eng.label_us)
    dur_windows = max(duration_us, eng.last_completion_us) // 1_000_000 + 1
    arrival_bins = np.bincount(
        (events.t_series // 1_000_000).astype(np.int64), minlength=int(dur_windows)
    )
    return eng._report(
        config=config_echo or {},
        duration_us=duration_us,
        mask=np.ones(n, dtype=bool),
        death_us=events.death_us,
        untagged_long=untagged_long,
        arrival_bins=arrival_bins,
        extra_counters={"workload": "series-events"},
    )


def _untagged_long_lived_series(events: SeriesEvents, label_us: np.ndarray) -> int:
    """Packets a long-lived flow received after its Kth and before its label."""
    long_mask = events.total_pkts >= LONG_LIVED_MIN_PKTS
    if not long_mask.any():
        return 0
    total = 0
    shapes = events.shape_ids
    for sid in np.unique(shapes[long_mask]):
        post = events.post_offsets_by_shape[sid]
        sel = long_mask & (shapes == sid)
        label = label_us[sel]
        start = events.starts_us[sel]
        labeled = label >= 0
        # unlabeled flows never get a tag: every post-series packet counts
        total += int((~labeled).sum()) * len(post)
        if labeled.any():
            rel = label[labeled] - start[labeled]
            total += int(np.searchsorted(post, rel, side="right").sum())
    return total


def _build_oracle(events: Optional[SeriesEvents], num_classes: int,
                  use_ground_truth: bool):
    if use_ground_truth and events is not None:
        table = {}
        for feats, label in zip(events.features_by_shape, events.labels_by_shape):
            if feats is not None and label is not None:
                table[tuple(feats)] = label
        if table:
            return TableLabelOracle(table, num_classes)
    return HashLabelOracle(num_classes)


# --- packet mode ---------------------------------------------------------------


def run_packets(
    trace: PacketTrace,
    deployment: Deployment,
    policy: PolicyConfig,
    cache_cfg: Optional[CacheConfig],
    profile: AcceleratorProfile,
    table_cfg: TableConfig = TableConfig(),
    seed: int = 0,
    ring_capacity: int = RING_DEFAULT_CAPACITY,
    num_classes: int = NUM_CLASSES,
    k: int = SERIES_LENGTH,
    config_echo: Optional[dict] = None,
) -> MetricsReport:
    oracle = HashLabelOracle(num_classes)
    eng = _Engine(deployment, policy, cache_cfg, profile, oracle, ring_capacity, k)

    n_flows = trace.n_flows
    eng.label_us = np.full(n_flows, -1, dtype=np.int64)
    eng.t_series = np.full(n_flows, -1, dtype=np.int64)
    eng.hit_flag = np.zeros(n_flows, dtype=bool)
    untagged_after_k = np.zeros(n_flows, dtype=np.int64)

    tables = [
        FlowTable(table_cfg.capacity, table_cfg.buckets, table_cfg.stale_timeout_s, k)
        for _ in range(eng.n_fms)
    ]

    def apply_label(item: _Item, label: int, now: int,
                    _rss=rss_hash, _n=eng.n_fms, _tables=tables) -> None:
        _tables[_rss(item.key) % _n].apply_label(item.key, label)

    eng.packet_mode = True
    eng._apply_label = apply_label  # type: ignore[method-assign]

    rss = trace_rss(trace)
    ts_a = trace.ts
    src_a = trace.src_ip
    dst_a = trace.dst_ip
    sp_a = trace.src_port
    dp_a = trace.dst_port
    pr_a = trace.proto
    len_a = trace.length
    dir_a = trace.direction
    fid_a = trace.flow_id
    n_pkts = len(ts_a)

    tagged = 0
    untagged = 0
    table_dropped = 0
    heap = eng.heap
    managers = eng.managers
    fms_per = eng.fms_per_mgr
    t_series = eng.t_series

    i = 0
    while i < n_pkts or heap:
        if i < n_pkts:
            t_arr = int(ts_a[i])
            if not heap or t_arr <= heap[0][0]:
                pkt = PacketRecord(
                    FiveTuple(int(src_a[i]), int(dst_a[i]), int(sp_a[i]),
                              int(dp_a[i]), int(pr_a[i])),
                    t_arr,
                    int(len_a[i]),
                    int(dir_a[i]),
                )
                h = int(rss[i])
                fm = h % eng.n_fms
                action = tables[fm].on_packet(pkt, t_arr, h)
                if action is FORWARD_UNTAGGED:
                    untagged += 1
                    fid = fid_a[i]
                    if t_series[fid] >= 0:
                        untagged_after_k[fid] += 1
                elif isinstance(action, TagAndForward):
                    tagged += 1
                elif isinstance(action, SeriesReady):
                    fid = int(fid_a[i])
                    t_series[fid] = t_arr
                    s = action.series
                    item = _Item(s.key, s.features, t_arr, fid)
                    eng._accept(managers[fm // fms_per], fm % fms_per, item, t_arr)
                else:  # dropped: no capacity for a new flow
                    table_dropped += 1
                i += 1
                continue
        t, rank, _, payload = heapq.heappop(heap)
        if rank == _RANK_COMPLETE:
            mgr, chip, items, labels = payload
            eng._complete(mgr, chip, items, labels, int(t))
        else:
            eng._fire_deadline(payload, int(t))

    series_mask = trace.total_pkts >= k
    long_mask = series_mask & (trace.total_pkts >= LONG_LIVED_MIN_PKTS)
    untagged_long = int(untagged_after_k[long_mask].sum())

    duration_us = int(ts_a[-1]) if n_pkts else 0
    dur_windows = max(duration_us, eng.last_completion_us) // 1_000_000 + 1
    got_series = eng.t_series >= 0
    arrival_bins = np.bincount(
        (eng.t_series[got_series] // 1_000_000).astype(np.int64),
        minlength=int(dur_windows),
    )
    table_stats = [t.stats() for t in tables]
    return eng._report(
        config=config_echo or {},
        duration_us=duration_us,
        mask=series_mask,
        death_us=trace.death_us,
        untagged_long=untagged_long,
        arrival_bins=arrival_bins,
        extra_counters={
            "workload": "packets",
            "packets": int(n_pkts),
            "tagged_packets": tagged,
            "untagged_packets": untagged,
            "table_dropped_flows": table_dropped,
            "flows": int(n_flows),
            "table_load_factor_end": [round(s["load_factor"], 6) for s in table_stats],
        },
    )


def trace_rss(trace: PacketTrace) -> np.ndarray:
    return rss_hash_arrays(
        trace.src_ip, trace.dst_ip, trace.src_port, trace.dst_port, trace.proto
    ).astype(np.int64)


# --- live (threaded) mode -------------------------------------------------------


@dataclass
class LiveResult:
    produced: int
    accepted: int
    dropped: int
    hits: int
    inferred: int
    duplicates: int

    @property
    def conserved(self) -> bool:
        return (
            self.produced == self.accepted + self.dropped
            and self.accepted == self.hits + self.inferred
            and self.duplicates == 0
        )

    def as_dict(self) -> dict:
        return {
            "produced": self.produced,
            "accepted": self.accepted,
            "dropped": self.dropped,
            "hits": self.hits,
            "inferred": self.inferred,
            "duplicates": self.duplicates,
            "conserved": self.conserved,
        }


def live_run(
    events: SeriesEvents,
    policy: PolicyConfig,
    cache_cfg: Optional[CacheConfig],
    profile: AcceleratorProfile,
    duration_s: float = 10.0,
    pipelines: int = 1,
    ring_capacity: int = RING_DEFAULT_CAPACITY,
    num_classes: int = NUM_CLASSES,
    latency_scale: float = 1.0,
) -> LiveResult:
    """Threaded stress mode: one producer and one consumer thread per ring.

    The producer replays series as fast as it can for duration_s; the
    consumer polls its ring, filters the cache, plans per the policy and
    "infers" by sleeping the scaled device latency. No determinism is
    promised; the conservation invariant (every produced series is hit,
    inferred, or dropped, exactly once) is the contract.
    """
    oracle = HashLabelOracle(num_classes)
    feats = events.features_by_shape
    shape_ids = events.shape_ids
    n = len(events)
    rings = [CRing(ring_capacity) for _ in range(pipelines)]
    caches = [
        PrefixCache(cache_cfg.capacity, cache_cfg.delta, cache_cfg.key_mode)
        if cache_cfg
        else None
        for _ in range(pipelines)
    ]
    produced = [0] * pipelines
    hits = [0] * pipelines
    inferred = [0] * pipelines
    seen: List[set] = [set() for _ in range(pipelines)]
    dup = [0] * pipelines
    stop = threading.Event()
    producer_done = [threading.Event() for _ in range(pipelines)]

    def producer(p: int) -> None:
        ring = rings[p]
        count = 0
        i = p
        while not stop.is_set():
            item = _Item(None, feats[shape_ids[i % n]], 0, count * pipelines + p)
            ring.push(item)
            count += 1
            i += pipelines
        produced[p] = count
        producer_done[p].set()

    def consumer(p: int) -> None:
        ring = rings[p]
        cache = caches[p]
        sizes = profile.batch_sizes
        while True:
            if cache is not None:
                for item, label in cache.filter_ring(ring):
                    if item.ref in seen[p]:
                        dup[p] += 1
                    seen[p].add(item.ref)
                    hits[p] += 1
            r = len(ring)
            if r == 0:
                # drain everything the producer managed to push before exiting
                if producer_done[p].is_set() and len(ring) == 0:
                    return
                time.sleep(0)
                continue
            plan = make_plan(r, sizes, policy)
            items = ring.drain_up_to(plan.take)
            labels = [oracle(s) for s in items]
            if latency_scale > 0:
                time.sleep(profile.latency_us(plan.model_size) * 1e-6 * latency_scale)
            for item in items:
                if item.ref in seen[p]:
                    dup[p] += 1
                seen[p].add(item.ref)
            inferred[p] += len(items)
            if cache is not None:
                cache.insert_results(items, labels)

    producers = [threading.Thread(target=producer, args=(p,)) for p in range(pipelines)]
    consumers = [threading.Thread(target=consumer, args=(p,)) for p in range(pipelines)]
    for t in producers + consumers:
        t.start()
    time.sleep(duration_s)
    stop.set()
    for t in producers:
        t.join()
    for t in consumers:
        t.join()

    total_produced = sum(produced)
    total_drops = sum(r.drops for r in rings)
    total_hits = sum(hits)
    total_inferred = sum(inferred)
    return LiveResult(
        produced=total_produced,
        accepted=total_produced - total_drops,
        dropped=total_drops,
        hits=total_hits,
        inferred=total_inferred,
        duplicates=sum(dup),
    )
