"""Naive re-implementation of the packet pipeline, used as a test oracle.

Everything here is deliberately simple and list-based: the flow table is a
dict, rings are lists, the LRU is a recency list, planning is a linear
scan over the size set, and the event queue is an unsorted list searched
for its minimum. It re-derives the pipeline rules from their definitions
instead of sharing code with the engine, and must produce a bit-identical
MetricsReport on any small trace.

Limits: packet workloads only, and no staleness eviction or bucket-level
capacity pressure (a full table simply rejects new flows), so equivalence
holds on traces that fit comfortably in the table.
"""
from __future__ import annotations

from typing import Dict, List, Optional, Tuple

import numpy as np

from .accelerator import AcceleratorProfile, HashLabelOracle
from .batching import BatchMode, PolicyConfig
from .model import NUM_CLASSES, SERIES_LENGTH, FiveTuple, canonicalize, rss_hash
from .sim import (
    CacheConfig,
    Deployment,
    MetricsReport,
    TableConfig,
    _percentile_summary,
)
from .traffic import LONG_LIVED_MIN_PKTS, PacketTrace

_COMPLETE, _DEADLINE = 1, 2


class _NaiveLRU:
    """Recency list: index 0 is least recent, the tail most recent."""

    def __init__(self, capacity: int, delta: int, key_mode: str):
        self.capacity = capacity
        self.delta = delta
        self.key_mode = key_mode
        self.entries: List[Tuple[tuple, int]] = []
        self.hits = 0
        self.misses = 0
        self.evictions = 0
        self.duplicate_inserts = 0

    def _key(self, features: tuple) -> tuple:
        if self.key_mode == "prefix":
            return features[: self.delta]
        if self.key_mode == "postfix":
            return features[-self.delta :]
        return features

    def lookup(self, features: tuple) -> Optional[int]:
        key = self._key(features)
        for i, (k, label) in enumerate(self.entries):
            if k == key:
                self.entries.append(self.entries.pop(i))
                self.hits += 1
                return label
        self.misses += 1
        return None

    def insert(self, features: tuple, label: int) -> None:
        key = self._key(features)
        for i, (k, _) in enumerate(self.entries):
            if k == key:
                self.entries.pop(i)
                self.entries.append((key, label))
                self.duplicate_inserts += 1
                return
        if len(self.entries) >= self.capacity:
            self.entries.pop(0)
            self.evictions += 1
        self.entries.append((key, label))

    def stats(self) -> dict:
        return {
            "entries": len(self.entries),
            "capacity": self.capacity,
            "delta": self.delta,
            "key_mode": self.key_mode,
            "hits": self.hits,
            "misses": self.misses,
            "evictions": self.evictions,
            "duplicate_inserts": self.duplicate_inserts,
        }


def _pick_size(r: int, sizes: tuple, policy: PolicyConfig) -> Tuple[int, int, int]:
    """(model size, take, padding) per the planning rules, linear scans only."""
    biggest = sizes[-1]
    if r >= biggest:
        return biggest, biggest, 0
    b = None
    for s in sizes:
        if s >= r:
            b = s
            break
    padding = b - r
    if policy.mode is BatchMode.CARRY_OVER and padding / b > policy.phi:
        smaller = None
        for s in sizes:
            if s <= r:
                smaller = s
        if smaller is not None:
            return smaller, smaller, 0
    return b, r, padding


def reference_run(
    trace: PacketTrace,
    deployment: Deployment,
    policy: PolicyConfig,
    cache_cfg: Optional[CacheConfig],
    profile: AcceleratorProfile,
    table_cfg: TableConfig = TableConfig(),
    seed: int = 0,
    ring_capacity: int = 4096,
    num_classes: int = NUM_CLASSES,
    k: int = SERIES_LENGTH,
    config_echo: Optional[dict] = None,
) -> MetricsReport:
    if len(trace) > 100_000:
        raise ValueError("reference_run is an oracle for small traces only")
    oracle = HashLabelOracle(num_classes)
    sizes = profile.batch_sizes
    immediate = policy.mode is BatchMode.NO_TIMEOUT or policy.timeout_us == 0
    period = policy.timeout_us

    fms_per = deployment.flow_managers_per_pipeline
    chips_per = deployment.chips_per_manager
    if profile.chips < chips_per:
        raise ValueError("profile has too few chips for this topology")
    n_mgrs = deployment.pipelines
    n_fms = n_mgrs * fms_per

    tables: List[dict] = [dict() for _ in range(n_fms)]
    rings: List[List[list]] = [[[] for _ in range(fms_per)] for _ in range(n_mgrs)]
    caches = [
        _NaiveLRU(cache_cfg.capacity, cache_cfg.delta, cache_cfg.key_mode)
        if cache_cfg
        else None
        for _ in range(n_mgrs)
    ]
    chips_busy = [[False] * chips_per for _ in range(n_mgrs)]
    rr = [0] * n_mgrs
    deadline_at = [-1] * n_mgrs

    n_flows = trace.n_flows
    label_us = [-1] * n_flows
    t_series = [-1] * n_flows
    untagged_after_k = [0] * n_flows

    produced = dropped = inferred = hits_good = hits_error = 0
    tagged = untagged = table_dropped = 0
    batches = batch_size_sum = padding_slots = 0
    busy_us = 0
    padding_busy_us = 0.0
    last_completion = 0
    padding_ratios: List[float] = []
    win: Dict[str, Dict[int, float]] = {
        "busy": {}, "pad": {}, "batches": {}, "bsum": {}, "labels": {}, "hits": {}
    }

    pending: List[list] = []  # [t, rank, seq, payload]
    seq = [0]

    def push_event(t: int, rank: int, payload) -> None:
        seq[0] += 1
        pending.append([t, rank, seq[0], payload])

    def pop_next() -> list:
        best = 0
        for i in range(1, len(pending)):
            if pending[i][:3] < pending[best][:3]:
                best = i
        return pending.pop(best)

    def bump(name: str, w: int, amount) -> None:
        win[name][w] = win[name].get(w, 0) + amount

    def deliver(fid: int, features: tuple, key, label: int, now: int,
                from_cache: bool) -> None:
        nonlocal hits_good, hits_error
        label_us[fid] = now
        if from_cache:
            if oracle_features(features) == label:
                hits_good += 1
            else:
                hits_error += 1
            bump("hits", now // 1_000_000, 1)
        bump("labels", now // 1_000_000, 1)
        rec = tables[rss_hash(key) % n_fms].get(canonicalize(key)[0])
        if rec is not None and rec["label"] is None:
            rec["label"] = label

    def oracle_features(features: tuple) -> int:
        class _S:
            pass

        s = _S()
        s.features = features
        return oracle(s)

    def submit(m: int, chip: int, now: int) -> bool:
        nonlocal produced, inferred, batches, batch_size_sum, padding_slots
        nonlocal busy_us, padding_busy_us
        r = sum(len(q) for q in rings[m])
        if r == 0:
            return False
        size, take, padding = _pick_size(r, sizes, policy)
        items = []
        cur = rr[m]
        while len(items) < take:
            for off in range(fms_per):
                q = rings[m][(cur + off) % fms_per]
                if q:
                    items.append(q.pop(0))
                    cur = (cur + off + 1) % fms_per
                    break
            else:
                break
        rr[m] = cur
        labels = [oracle_features(f) for (_fid, f, _key) in items]
        latency = profile.latency_us(size)
        chips_busy[m][chip] = True
        batches += 1
        batch_size_sum += size
        padding_slots += padding
        padding_ratios.append(padding / size)
        busy_us += latency
        pad_share = latency * padding / size
        padding_busy_us += pad_share
        w = now // 1_000_000
        bump("busy", w, latency)
        bump("pad", w, pad_share)
        bump("batches", w, 1)
        bump("bsum", w, size)
        push_event(now + latency, _COMPLETE, (m, chip, items, labels))
        return True

    def plan_all(m: int, now: int) -> None:
        while True:
            free = None
            for c in range(chips_per):
                if not chips_busy[m][c]:
                    free = c
                    break
            if free is None or not submit(m, free, now):
                return

    def schedule_deadline(m: int, now: int) -> None:
        if immediate or deadline_at[m] >= 0:
            return
        t = (now // period + 1) * period
        deadline_at[m] = t
        push_event(t, _DEADLINE, m)

    def fire_deadline(m: int, now: int) -> None:
        deadline_at[m] = -1
        cache = caches[m]
        if cache is not None:
            for q in rings[m]:
                remaining = []
                for fid, features, key in q:
                    label = cache.lookup(features)
                    if label is None:
                        remaining.append((fid, features, key))
                    else:
                        deliver(fid, features, key, label, now, True)
                q[:] = remaining
        plan_all(m, now)
        if sum(len(q) for q in rings[m]):
            schedule_deadline(m, now)

    # chronological scan: arrivals interleaved with pending events
    rssv = trace_rss_list(trace)
    i = 0
    n_pkts = len(trace)
    while i < n_pkts or pending:
        if i < n_pkts and (not pending or int(trace.ts[i]) <= min(p[0] for p in pending)):
            now = int(trace.ts[i])
            src = int(trace.src_ip[i])
            sport = int(trace.src_port[i])
            tup = FiveTuple(src, int(trace.dst_ip[i]), sport,
                            int(trace.dst_port[i]), int(trace.proto[i]))
            ckey, _ = canonicalize(tup)
            fm = rssv[i] % n_fms
            table = tables[fm]
            fid = int(trace.flow_id[i])
            rec = table.get(ckey)
            if rec is None:
                if len(table) >= table_cfg.capacity:
                    table_dropped += 1
                    i += 1
                    continue
                rec = {"label": None, "count": 0, "features": [],
                       "first": (src, sport)}
                table[ckey] = rec
            rec["count"] += 1
            if rec["label"] is not None:
                tagged += 1
            elif rec["count"] <= k:
                sign = 1 if (src, sport) == rec["first"] else -1
                rec["features"].append(int(trace.length[i]) * sign)
                if rec["count"] == k:
                    t_series[fid] = now
                    produced += 1
                    features = tuple(rec["features"])
                    m = fm // fms_per
                    ring = fm % fms_per
                    handled = False
                    if immediate and caches[m] is not None:
                        label = caches[m].lookup(features)
                        if label is not None:
                            deliver(fid, features, tup, label, now, True)
                            handled = True
                    if not handled:
                        if len(rings[m][ring]) >= ring_capacity:
                            dropped += 1
                        else:
                            rings[m][ring].append((fid, features, tup))
                            if immediate:
                                plan_all(m, now)
                            else:
                                schedule_deadline(m, now)
                else:
                    untagged += 1
                    if t_series[fid] >= 0:
                        untagged_after_k[fid] += 1
            else:
                untagged += 1
                if t_series[fid] >= 0:
                    untagged_after_k[fid] += 1
            i += 1
            continue
        t_ev, rank, _, payload = pop_next()
        if rank == _COMPLETE:
            m, chip, items, labels = payload
            chips_busy[m][chip] = False
            last_completion = t_ev
            inferred += len(items)
            for (fid, features, key), label in zip(items, labels):
                deliver(fid, features, key, label, t_ev, False)
            if caches[m] is not None:
                for (fid, features, key), label in zip(items, labels):
                    caches[m].insert(features, label)
            if immediate:
                plan_all(m, t_ev)
        else:
            fire_deadline(payload, t_ev)

    # assemble the report with the same conventions as the engine
    series_mask = trace.total_pkts >= k
    label_arr = np.asarray(label_us, dtype=np.int64)[series_mask]
    t0 = np.asarray(t_series, dtype=np.int64)[series_mask]
    labeled = label_arr >= 0
    delays = (label_arr[labeled] - t0[labeled]).astype(np.int64)
    death = trace.death_us[series_mask]
    post_mortem = (~labeled) | (label_arr >= death)

    long_mask = series_mask & (trace.total_pkts >= LONG_LIVED_MIN_PKTS)
    untagged_long = int(np.asarray(untagged_after_k, dtype=np.int64)[long_mask].sum())

    duration_us = int(trace.ts[-1]) if n_pkts else 0
    wall = max(duration_us, last_completion, 1)
    chips_total = n_mgrs * chips_per

    hits_total = hits_good + hits_error
    cache_stats = None
    if cache_cfg is not None:
        resolved = hits_total + inferred
        cache_stats = {
            "per_manager": [caches[m].stats() for m in range(n_mgrs)],
            "series_hit_ratio": hits_total / resolved if resolved else 0.0,
        }

    windows = []
    for w in range(int(wall // 1_000_000) + 1):
        nb = int(win["batches"].get(w, 0))
        t_arr_all = np.asarray(t_series, dtype=np.int64)
        arrived = int(((t_arr_all >= 0) & (t_arr_all // 1_000_000 == w)).sum())
        windows.append(
            {
                "window_s": w,
                "series_arrived": arrived,
                "batches": nb,
                "avg_batch_size": (win["bsum"].get(w, 0) / nb) if nb else 0.0,
                "busy_us": int(win["busy"].get(w, 0)),
                "padding_busy_us": round(win["pad"].get(w, 0.0), 6),
                "usage": win["busy"].get(w, 0) / 1e6 / chips_total,
                "labels": int(win["labels"].get(w, 0)),
                "cache_hits": int(win["hits"].get(w, 0)),
            }
        )

    counters = {
        "series_flows": int(series_mask.sum()),
        "series_produced": produced,
        "ring_dropped": dropped,
        "inferred": inferred,
        "cache_hits_good": hits_good,
        "cache_hits_error": hits_error,
        "labels_delivered": int(labeled.sum()),
        "batches": batches,
        "padding_slots": padding_slots,
        "workload": "packets",
        "packets": int(n_pkts),
        "tagged_packets": tagged,
        "untagged_packets": untagged,
        "table_dropped_flows": table_dropped,
        "flows": int(n_flows),
        "table_load_factor_end": [
            round(len(tables[f]) / table_cfg.capacity, 6) for f in range(n_fms)
        ],
    }

    return MetricsReport(
        config=config_echo or {},
        counters=counters,
        delay_us=_percentile_summary(delays),
        padding_ratio=_percentile_summary(np.asarray(padding_ratios)),
        post_mortem_ratio=float(post_mortem.mean()) if series_mask.sum() else 0.0,
        untagged_long_lived=untagged_long,
        usage={
            "busy_us": int(busy_us),
            "padding_busy_us": round(float(padding_busy_us), 6),
            "wall_us": int(wall),
            "total": busy_us / wall / chips_total,
            "padding": padding_busy_us / wall / chips_total,
            "padding_share_of_busy": padding_busy_us / busy_us if busy_us else 0.0,
        },
        avg_batch_size=(batch_size_sum / batches) if batches else 0.0,
        cache=cache_stats,
        windows=windows,
    )


def trace_rss_list(trace: PacketTrace) -> List[int]:
    out = []
    for i in range(len(trace)):
        out.append(
            rss_hash(
                FiveTuple(
                    int(trace.src_ip[i]),
                    int(trace.dst_ip[i]),
                    int(trace.src_port[i]),
                    int(trace.dst_port[i]),
                    int(trace.proto[i]),
                )
            )
        )
    return out
