"""Dynamic batching policies over a fixed set of supported model batch sizes.

Two planners share the same shape: given r waiting series, pick a model
batch size B from the supported set, decide how many series to consume now
and how many padding slots to add.

 - Timeout planning picks the smallest B >= r and pads the difference.
 - Carry-over planning starts from the timeout plan; when the padding
   fraction would exceed the threshold phi it scales back to the largest
   supported size <= r, taking a full batch with zero padding and leaving
   the newest series in the ring for the next cycle.

Edge rules (the planner must always make progress):
 - r greater than the largest size: clamp to the largest and carry the rest.
 - r below the smallest size under carry-over: fall back to the padded
   smallest batch instead of waiting forever.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import List, Sequence, Tuple

from .model import Series

DEFAULT_BATCH_SIZES: Tuple[int, ...] = (8, 16, 32, 64, 128, 256, 512, 1024)


def validate_batch_sizes(sizes: Sequence[int]) -> Tuple[int, ...]:
    out = tuple(sizes)
    if not out:
        raise ValueError("batch size set must be non-empty")
    if any(b <= 0 for b in out) or any(a >= b for a, b in zip(out, out[1:])):
        raise ValueError("batch sizes must be strictly increasing positives")
    return out


class BatchMode(enum.Enum):
    TIMEOUT = "timeout"
    CARRY_OVER = "carry_over"
    NO_TIMEOUT = "no_timeout"


@dataclass(frozen=True, slots=True)
class PolicyConfig:
    mode: BatchMode = BatchMode.TIMEOUT
    timeout_us: int = 10_000
    phi: float = 0.2

    def __post_init__(self):
        if not 0.0 <= self.phi <= 0.5:
            raise ValueError("phi must lie in [0, 0.5]")
        if self.timeout_us < 0:
            raise ValueError("timeout must be >= 0")


@dataclass(frozen=True, slots=True)
class BatchPlan:
    model_size: int    # B, drawn from the supported set
    take: int          # series consumed from the ring now
    padding: int       # sentinel slots appended (model_size - take)
    carried_over: int  # series intentionally left in the ring

    @property
    def padding_ratio(self) -> float:
        return self.padding / self.model_size


def plan_timeout(r: int, sizes: Sequence[int] = DEFAULT_BATCH_SIZES) -> BatchPlan:
    """Smallest supported batch >= r, padded; clamps to the largest size."""
    if r < 1:
        raise ValueError("planning requires at least one waiting series")
    largest = sizes[-1]
    if r >= largest:
        return BatchPlan(largest, largest, 0, r - largest)
    for b in sizes:
        if b >= r:
            return BatchPlan(b, r, b - r, 0)
    raise AssertionError("unreachable")


def plan_carryover(
    r: int, sizes: Sequence[int] = DEFAULT_BATCH_SIZES, phi: float = 0.2
) -> BatchPlan:
    """Timeout plan unless padding/B > phi; then the largest full batch <= r."""
    base = plan_timeout(r, sizes)
    if not base.padding / base.model_size > phi:
        return base
    smaller = None
    for b in sizes:
        if b <= r:
            smaller = b
        else:
            break
    if smaller is None:
        # r below the smallest size: accept the padded batch (progress)
        return base
    return BatchPlan(smaller, smaller, 0, r - smaller)


def plan(r: int, sizes: Sequence[int], config: PolicyConfig) -> BatchPlan:
    if config.mode is BatchMode.CARRY_OVER:
        return plan_carryover(r, sizes, config.phi)
    return plan_timeout(r, sizes)


# Padding sentinels: an all-zero feature vector can never come from real
# traffic (lengths are >= 1), so zeroed features mark a slot as padding.
_PADDING_CACHE: dict[int, Series] = {}


def padding_series(k: int) -> Series:
    s = _PADDING_CACHE.get(k)
    if s is None:
        s = Series(key=None, features=(0,) * k, completed_at=0)
        _PADDING_CACHE[k] = s
    return s


def is_padding(s: Series) -> bool:
    return not any(s.features)


def pad(batch: List[Series], padding: int, k: int = 10) -> List[Series]:
    """Append `padding` sentinel slots; labels for them are discarded."""
    if padding < 0:
        raise ValueError("padding must be >= 0")
    if padding == 0:
        return batch
    return batch + [padding_series(k)] * padding
