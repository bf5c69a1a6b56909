"""Trace-driven simulator for in-network DL traffic-analytics pipelines."""

from .accelerator import (
    AcceleratorProfile,
    BatchSizeUnsupported,
    HashLabelOracle,
    PROFILES,
    Quadrant,
    QuadrantPoint,
    TableLabelOracle,
    get_profile,
    quadrant,
)
from .batching import (
    BatchMode,
    BatchPlan,
    DEFAULT_BATCH_SIZES,
    PolicyConfig,
    is_padding,
    pad,
    plan_carryover,
    plan_timeout,
)
from .cache import HitGrade, PrefixCache, grade_hit, q_delta, q_postfix
from .flowtable import (
    DROPPED_NO_CAPACITY,
    FORWARD_UNTAGGED,
    FlowTable,
    SeriesReady,
    TagAndForward,
    flow_hash,
)
from .model import (
    FiveTuple,
    NUM_CLASSES,
    PacketRecord,
    SERIES_LENGTH,
    Series,
    canonicalize,
    reverse,
    rss_hash,
)
from .prefixlab import (
    CorpusIndex,
    PrefixClass,
    PrefixKind,
    SeriesCorpus,
    brute_force_recount,
    classify_prefix,
    typology_report,
)
from .reference import reference_run
from .ring import CRing
from .sim import (
    CacheConfig,
    ConfigError,
    Deployment,
    MetricsReport,
    TableConfig,
    live_run,
    run_packets,
    run_series,
    write_windows_csv,
)
from .traffic import (
    Catalog,
    FlowSet,
    FlowShape,
    PacketTrace,
    SeriesEvents,
    TraceStats,
    dispatch,
    generate_flows,
    piecewise_flows,
    read_trace_csv,
    read_trace_npz,
    stats_from_counts,
    synthetic_catalog,
)

__version__ = "0.1.0"
