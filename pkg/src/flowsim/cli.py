"""Command-line entry point: trace generation, simulation, analysis, bench.

All outputs are machine-first (JSON and CSV); plotting is left to external
tools. Every random choice derives from the --seed / config seed, so any
invocation is reproducible from its arguments alone.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path
from typing import Optional

import numpy as np

from .accelerator import AcceleratorProfile, get_profile
from .batching import BatchMode, PolicyConfig
from .flowtable import FlowTable
from .model import SERIES_LENGTH, FiveTuple, PacketRecord
from .prefixlab import DEFAULT_BETA, SeriesCorpus, typology_report
from .sim import (
    CacheConfig,
    ConfigError,
    Deployment,
    TableConfig,
    live_run,
    run_packets,
    run_series,
    write_windows_csv,
)
from .traffic import (
    Catalog,
    piecewise_flows,
    read_trace_csv,
    read_trace_npz,
    synthetic_catalog,
)


def main(argv: Optional[list] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="flowsim",
        description="Trace-driven simulator for in-network traffic-analytics pipelines",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-trace", help="generate a synthetic packet trace")
    g.add_argument("--lambda", dest="lam", type=float, help="flow arrivals per second")
    g.add_argument("--duration", type=float, help="trace duration in seconds")
    g.add_argument(
        "--schedule",
        help="piecewise rate: lam:dur,lam:dur,... (overrides --lambda/--duration)",
    )
    g.add_argument("--seed", type=int, default=1)
    g.add_argument("--catalog", help="catalog CSV path (default: synthetic)")
    g.add_argument("--catalog-size", type=int, default=1000)
    g.add_argument("--out", required=True, help="output trace path (.csv or .npz)")
    g.add_argument("--k", type=int, default=SERIES_LENGTH)
    g.add_argument("--link-gbps", type=float, default=100.0)
    g.set_defaults(func=cmd_gen_trace)

    s = sub.add_parser("simulate", help="run a scenario from a config file")
    s.add_argument("--config", required=True, help="scenario config (.json or .toml)")
    s.add_argument("--out-dir", help="directory for outputs (overrides config paths)")
    s.add_argument("--live", action="store_true", help="threaded live mode")
    s.set_defaults(func=cmd_simulate)

    a = sub.add_parser("analyze-prefixes", help="prefix typology over a labeled corpus")
    a.add_argument("--corpus", required=True, help="series corpus CSV")
    a.add_argument("--deltas", default=None, help="range a:b or list a,b,c (default 1..K-1)")
    a.add_argument("--beta", type=float, default=DEFAULT_BETA)
    a.add_argument("--weighting", choices=["bySeries", "byFlows"], default="byFlows")
    a.add_argument("--out", help="report JSON path (default: stdout)")
    a.add_argument("--csv", help="also write per-delta rows as CSV")
    a.set_defaults(func=cmd_analyze_prefixes)

    b = sub.add_parser("bench", help="flow-table micro-benchmark")
    b.add_argument("--capacity", type=int, default=1 << 19)
    b.add_argument("--buckets", type=int, default=1 << 17)
    b.add_argument("--loads", default="0,0.25,0.5,0.75,1")
    b.add_argument("--ops", type=int, default=1_000_000)
    b.add_argument("--seed", type=int, default=1)
    b.add_argument("--out", help="report JSON path (default: stdout)")
    b.set_defaults(func=cmd_bench)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError, OSError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


# --- gen-trace ----------------------------------------------------------------


def _parse_schedule(text: str) -> list:
    out = []
    for part in text.split(","):
        lam, dur = part.split(":")
        out.append((float(lam), float(dur)))
    return out


def cmd_gen_trace(args) -> int:
    if args.schedule:
        schedule = _parse_schedule(args.schedule)
    else:
        if args.lam is None or args.duration is None:
            print("error: --lambda and --duration (or --schedule) are required",
                  file=sys.stderr)
            return 2
        schedule = [(args.lam, args.duration)]
    if args.catalog:
        catalog = Catalog.from_csv(args.catalog)
    else:
        catalog = synthetic_catalog(seed=args.seed, size=args.catalog_size)
    flows = piecewise_flows(schedule, catalog, args.seed)
    trace = flows.to_packets()
    out = Path(args.out)
    if out.suffix == ".npz":
        trace.write_npz(str(out))
    else:
        trace.write_csv(str(out))
    stats = trace.stats(args.k, args.link_gbps * 1e9)
    print(json.dumps(stats.as_dict(), indent=2, sort_keys=True))
    return 0


# --- simulate -------------------------------------------------------------------


def load_config(path: str) -> dict:
    p = Path(path)
    if p.suffix == ".toml":
        try:
            import tomllib  # py3.11+
        except ModuleNotFoundError:
            import tomli as tomllib
        with open(p, "rb") as f:
            return tomllib.load(f)
    with open(p) as f:
        return json.load(f)


def _policy_from_config(cfg: dict) -> PolicyConfig:
    mode = BatchMode(cfg.get("mode", "timeout"))
    timeout_ms = cfg.get("timeout_ms", 10.0)
    return PolicyConfig(mode, int(round(timeout_ms * 1000)), cfg.get("phi", 0.2))


def _profile_from_config(cfg) -> AcceleratorProfile:
    if isinstance(cfg, str):
        return get_profile(cfg)
    return AcceleratorProfile(
        name=cfg.get("name", "custom"),
        c0_ms=cfg["c0_ms"],
        c1_ms=cfg["c1_ms"],
        power_watts=cfg.get("power_watts", 0.0),
        chips=cfg.get("chips", 1),
        batch_sizes=tuple(cfg.get("batch_sizes", (8, 16, 32, 64, 128, 256, 512, 1024))),
        latency_table_ms=(
            {int(k): v for k, v in cfg["latency_table_ms"].items()}
            if "latency_table_ms" in cfg
            else None
        ),
    )


def _catalog_from_config(cfg: dict, seed: int) -> Catalog:
    if "path" in cfg:
        return Catalog.from_csv(cfg["path"])
    syn = dict(cfg.get("synthetic", {}))
    syn.setdefault("seed", seed)
    return synthetic_catalog(**syn)


def build_workload(cfg: dict, seed: int):
    """Resolve the trace section into (kind, payload) for the runner."""
    trace_cfg = cfg["trace"]
    workload = cfg.get("workload", "flows")
    if "path" in trace_cfg:
        path = Path(trace_cfg["path"])
        trace = read_trace_npz(str(path)) if path.suffix == ".npz" else read_trace_csv(str(path))
        return "packets", trace
    catalog = _catalog_from_config(trace_cfg.get("catalog", {}), seed)
    if "schedule" in trace_cfg:
        schedule = [tuple(seg) for seg in trace_cfg["schedule"]]
    else:
        schedule = [(trace_cfg["lambda_per_s"], trace_cfg["duration_s"])]
    flows = piecewise_flows(schedule, catalog, seed)
    if workload == "packets":
        return "packets", flows.to_packets()
    return "flows", flows.series_events(cfg.get("k", SERIES_LENGTH))


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    seed = cfg.get("seed", 1)
    deployment = Deployment(cfg.get("topology", "1:1:1"), cfg.get("pipelines", 1))
    policy = _policy_from_config(cfg.get("policy", {}))
    cache_cfg = None
    if cfg.get("cache"):
        c = cfg["cache"]
        cache_cfg = CacheConfig(c["capacity"], c.get("delta", 6),
                                c.get("key_mode", "prefix"))
    profile = _profile_from_config(cfg.get("profile", "tpu1"))
    table_cfg = TableConfig(**cfg.get("table", {}))
    ring_capacity = cfg.get("ring_capacity", 4096)

    out_cfg = cfg.get("output", {})
    out_dir = Path(args.out_dir) if args.out_dir else Path(".")
    report_path = out_dir / out_cfg.get("report", "report.json")
    windows_path = out_dir / out_cfg.get("windows", "windows.csv")

    kind, payload = build_workload(cfg, seed)

    if args.live:
        if kind != "flows":
            raise ConfigError("--live requires a generated (non-path) trace")
        live_cfg = cfg.get("live", {})
        result = live_run(
            payload,
            policy,
            cache_cfg,
            profile,
            duration_s=live_cfg.get("duration_s", 10.0),
            pipelines=cfg.get("pipelines", 1),
            ring_capacity=ring_capacity,
            latency_scale=live_cfg.get("latency_scale", 1.0),
        )
        report_path.parent.mkdir(parents=True, exist_ok=True)
        report_path.write_text(json.dumps(result.as_dict(), indent=2, sort_keys=True))
        print(json.dumps(result.as_dict(), indent=2, sort_keys=True))
        return 0

    echo = {"config_file": str(args.config), "seed": seed, "resolved": cfg}
    if kind == "packets":
        report = run_packets(
            payload, deployment, policy, cache_cfg, profile, table_cfg,
            seed=seed, ring_capacity=ring_capacity, config_echo=echo,
        )
    else:
        report = run_series(
            payload, deployment, policy, cache_cfg, profile,
            seed=seed, ring_capacity=ring_capacity,
            use_ground_truth=cfg.get("use_ground_truth", False), config_echo=echo,
        )
    report_path.parent.mkdir(parents=True, exist_ok=True)
    report_path.write_text(report.to_json())
    write_windows_csv(report, str(windows_path))
    counters = report.counters
    print(
        f"series={counters['series_produced']} inferred={counters['inferred']} "
        f"hits={counters['cache_hits_good'] + counters['cache_hits_error']} "
        f"dropped={counters['ring_dropped']} "
        f"delay_p50_us={report.delay_us['p50']} usage={report.usage['total']:.4f}",
        file=sys.stderr,
    )
    return 0


# --- analyze-prefixes -------------------------------------------------------------


def _parse_deltas(text: Optional[str], k: int) -> list:
    if not text:
        return list(range(1, k))
    if ":" in text:
        a, b = text.split(":")
        return list(range(int(a), int(b) + 1))
    return [int(v) for v in text.split(",")]


def cmd_analyze_prefixes(args) -> int:
    corpus = SeriesCorpus.from_csv(args.corpus)
    deltas = _parse_deltas(args.deltas, corpus.k)
    report = typology_report(corpus, deltas, args.beta, args.weighting)
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text)
    if args.csv:
        with open(args.csv, "w") as f:
            f.write("delta,non_profitable,safe,dangerous,toxic\n")
            for delta in deltas:
                row = report["per_delta"][delta]
                f.write(
                    f"{delta},{row['non_profitable']},{row['safe']},"
                    f"{row['dangerous']},{row['toxic']}\n"
                )
    return 0


# --- bench ---------------------------------------------------------------------


def cmd_bench(args) -> int:
    loads = [float(v) for v in args.loads.split(",")]
    rng = np.random.default_rng(args.seed)
    results = []
    for load in loads:
        table = FlowTable(args.capacity, args.buckets)
        n_flows = max(1, int(load * args.capacity))
        if load == 0:
            n_flows = 1  # single-flow run probes the hot-cache fast path
        tuples = [
            FiveTuple(0x0A000000 + i, 0xC0A80001, 1024 + (i * 7919) % 60000, 443, 6)
            for i in range(n_flows)
        ]
        for t in tuples:
            table.on_packet(PacketRecord(t, 0, 100, 1), 0)
        picks = rng.integers(0, n_flows, args.ops)
        pkts = [PacketRecord(tuples[i], 1, 100, 1) for i in picks]
        t0 = time.perf_counter()
        on_packet = table.on_packet
        for pkt in pkts:
            on_packet(pkt, 1)
        elapsed = time.perf_counter() - t0
        stats = table.stats()
        results.append(
            {
                "load": load,
                "flows": n_flows,
                "ops": args.ops,
                "ops_per_s": args.ops / elapsed,
                "elapsed_s": elapsed,
                "table": stats,
            }
        )
        print(f"load={load}: {args.ops / elapsed / 1e6:.2f} Mops/s", file=sys.stderr)
    payload = json.dumps({"bench": results}, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(payload)
    else:
        print(payload)
    return 0


if __name__ == "__main__":
    sys.exit(main())
