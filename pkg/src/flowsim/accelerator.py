"""Inference device models: batch latency, power draw, and the label oracle.

A profile is an affine latency curve latency(B) = c0 + c1*B milliseconds
over a set of supported batch sizes, optionally overridden per size by a
measured (B -> ms) table, plus a constant active power and a chip count.
The built-in profiles are calibration-free stand-ins tuned only to
reproduce the qualitative device ordering: the TPU-like profile is faster
on small batches, the GPU-like profile wins on large ones, and only the
single-chip TPU lands in the desirable power/rate quadrant.

The label oracle replaces the trained classifier: any deterministic pure
function from a series to a label preserves every system-level behavior
this simulator measures.
"""
from __future__ import annotations

import enum
import struct
import zlib
from dataclasses import dataclass
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

from .batching import DEFAULT_BATCH_SIZES, is_padding, validate_batch_sizes
from .model import NUM_CLASSES, Label, Series, SimTime

POWER_TARGET_WATTS = 30.0
RATE_TARGET_PER_S = 50_000.0


class BatchSizeUnsupported(ValueError):
    pass


@dataclass(frozen=True)
class AcceleratorProfile:
    name: str
    c0_ms: float
    c1_ms: float
    power_watts: float
    chips: int = 1
    batch_sizes: Tuple[int, ...] = DEFAULT_BATCH_SIZES
    latency_table_ms: Optional[Mapping[int, float]] = None

    def __post_init__(self):
        validate_batch_sizes(self.batch_sizes)
        if self.c0_ms < 0 or self.c1_ms < 0:
            raise ValueError("latency coefficients must be >= 0")
        if self.latency_ms(self.batch_sizes[0]) <= 0:
            raise ValueError("latency must be strictly positive")
        if self.chips < 1:
            raise ValueError("chips must be >= 1")

    def latency_ms(self, batch_size: int) -> float:
        if self.latency_table_ms is not None:
            ms = self.latency_table_ms.get(batch_size)
            if ms is not None:
                return ms
        return self.c0_ms + self.c1_ms * batch_size

    def latency_us(self, batch_size: int) -> int:
        return max(1, round(self.latency_ms(batch_size) * 1000))

    def rate_per_s(self, batch_size: int) -> float:
        """Series classified per second per chip at a fixed batch size."""
        if batch_size not in self.batch_sizes:
            raise BatchSizeUnsupported(f"{batch_size} not in {self.batch_sizes}")
        return batch_size / self.latency_ms(batch_size) * 1000.0

    def infer(
        self,
        batch: Sequence[Series],
        oracle: Callable[[Series], Label],
        submit_us: SimTime,
    ) -> Tuple[List[Label], SimTime]:
        """Labels for the real slots of a padded batch, plus completion time.

        The batch length must be a supported model size; padding slots
        produce no label. Chip occupancy is the caller's business (the
        simulator runs one in-flight batch per chip).
        """
        size = len(batch)
        if size not in self.batch_sizes:
            raise BatchSizeUnsupported(f"{size} not in {self.batch_sizes}")
        labels = [oracle(s) for s in batch if not is_padding(s)]
        return labels, submit_us + self.latency_us(size)


class Quadrant(enum.Enum):
    DESIRABLE = "desirable"            # power <= target, rate >= target
    POWER_HUNGRY = "power_hungry"      # meets rate at too much power
    UNDERPOWERED = "underpowered"      # frugal but below the rate target
    AVOID = "avoid"                    # fails both targets


@dataclass(frozen=True, slots=True)
class QuadrantPoint:
    power_ratio: float
    rate_ratio: float
    quadrant: Quadrant

    @property
    def desirable(self) -> bool:
        return self.quadrant is Quadrant.DESIRABLE


def quadrant(profile: AcceleratorProfile, batch_size: int) -> QuadrantPoint:
    """Position of (profile, B) against the 30 W / 50 kclass/s targets.

    Rate aggregates all chips; power is the device's total active draw.
    """
    power_ratio = profile.power_watts / POWER_TARGET_WATTS
    rate_ratio = profile.chips * profile.rate_per_s(batch_size) / RATE_TARGET_PER_S
    if rate_ratio >= 1.0:
        q = Quadrant.DESIRABLE if power_ratio <= 1.0 else Quadrant.POWER_HUNGRY
    else:
        q = Quadrant.UNDERPOWERED if power_ratio <= 1.0 else Quadrant.AVOID
    return QuadrantPoint(power_ratio, rate_ratio, q)


# --- label oracles --------------------------------------------------------


class HashLabelOracle:
    """Deterministic stand-in classifier: stable hash of the features mod L.

    Results are memoized per feature vector; catalog-driven workloads reuse
    a bounded set of vectors, so the memo stays small and the per-series
    cost drops to one dict probe.
    """

    def __init__(self, num_classes: int = NUM_CLASSES):
        self.num_classes = num_classes
        self._memo: Dict[Tuple[int, ...], Label] = {}

    def __call__(self, s: Series) -> Label:
        feats = s.features
        label = self._memo.get(feats)
        if label is None:
            raw = struct.pack(f"<{len(feats)}i", *feats)
            label = zlib.crc32(raw) % self.num_classes
            self._memo[feats] = label
        return label


class TableLabelOracle:
    """Ground-truth oracle for traces that carry labels, hash fallback."""

    def __init__(self, table: Dict[Tuple[int, ...], Label], num_classes: int = NUM_CLASSES):
        self.table = table
        self._fallback = HashLabelOracle(num_classes)

    def __call__(self, s: Series) -> Label:
        label = self.table.get(s.features)
        return label if label is not None else self._fallback(s)


# --- built-in device profiles ---------------------------------------------

PROFILES: Dict[str, AcceleratorProfile] = {
    p.name: p
    for p in (
        AcceleratorProfile("tpu1", c0_ms=0.5, c1_ms=0.008, power_watts=12.8, chips=1),
        AcceleratorProfile("tpu4", c0_ms=0.5, c1_ms=0.008, power_watts=51.2, chips=4),
        AcceleratorProfile("gpu", c0_ms=2.5, c1_ms=0.0015, power_watts=70.0, chips=1),
        AcceleratorProfile("cpu1", c0_ms=1.0, c1_ms=0.4, power_watts=90.0, chips=1),
        AcceleratorProfile("cpu52", c0_ms=3.0, c1_ms=0.012, power_watts=200.0, chips=1),
    )
}


def get_profile(name: str) -> AcceleratorProfile:
    try:
        return PROFILES[name]
    except KeyError:
        raise KeyError(f"unknown profile {name!r}; built-ins: {sorted(PROFILES)}")
