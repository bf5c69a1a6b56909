"""Offline prefix typology over a labeled series corpus.

For a prefix length delta, every distinct series falls into the group
D(sigma) of series sharing its first delta features. A prefix is
non-profitable when it identifies exactly one series (caching it can never
produce an approximate hit), safe when several series share it but all
carry one label (hits are always good), and dangerous otherwise. A
dangerous prefix is additionally toxic when the most popular label among
the flows behind its series holds less than a threshold beta of that flow
mass; hits on toxic prefixes are errors more often than not.

The report weighs class membership two ways: bySeries counts each distinct
series once, byFlows weighs it by its flow popularity. `brute_force_recount`
recomputes the same numbers by sorting and scanning instead of indexing and
serves as the oracle for `typology_report`.
"""
from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

DEFAULT_BETA = 0.7


class PrefixKind(enum.Enum):
    NON_PROFITABLE = "non_profitable"
    SAFE = "safe"
    DANGEROUS = "dangerous"


@dataclass(frozen=True, slots=True)
class PrefixClass:
    kind: PrefixKind
    toxic: bool = False

    def __post_init__(self):
        if self.toxic and self.kind is not PrefixKind.DANGEROUS:
            raise ValueError("only dangerous prefixes can be toxic")


@dataclass
class SeriesCorpus:
    """Distinct labeled series with flow popularity counts."""

    features: List[Tuple[int, ...]]
    labels: List[int]
    flow_counts: List[int]

    def __post_init__(self):
        if not (len(self.features) == len(self.labels) == len(self.flow_counts)):
            raise ValueError("corpus columns must align")

    def __len__(self) -> int:
        return len(self.features)

    @property
    def k(self) -> int:
        return len(self.features[0]) if self.features else 0

    @classmethod
    def from_rows(
        cls, rows: Sequence[Tuple[Tuple[int, ...], int, int]]
    ) -> "SeriesCorpus":
        """Aggregate raw (features, label, flow_count) rows.

        Duplicate feature vectors merge their flow counts; their labels must
        agree (a deterministic model cannot label one series two ways).
        """
        merged: Dict[Tuple[int, ...], List[int]] = {}
        for feats, label, count in rows:
            cur = merged.get(feats)
            if cur is None:
                merged[feats] = [label, count]
            else:
                if cur[0] != label:
                    raise ValueError(
                        f"series {feats} carries two labels ({cur[0]} and {label})"
                    )
                cur[1] += count
        feats_list = list(merged)
        return cls(
            features=feats_list,
            labels=[merged[f][0] for f in feats_list],
            flow_counts=[merged[f][1] for f in feats_list],
        )

    @classmethod
    def from_csv(cls, path: str) -> "SeriesCorpus":
        rows = []
        with open(path, newline="") as f:
            reader = csv.reader(f)
            header = next(reader, None)
            if not header or header[-2:] != ["label", "flow_count"]:
                raise ValueError(
                    f"{path}:1: expected header feature_1..feature_K,label,flow_count"
                )
            k = len(header) - 2
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                try:
                    feats = tuple(int(v) for v in row[:k])
                    rows.append((feats, int(row[k]), int(row[k + 1])))
                except (ValueError, IndexError) as e:
                    raise ValueError(f"{path}:{lineno}: bad corpus row ({e})") from None
        return cls.from_rows(rows)

    def to_csv(self, path: str) -> None:
        k = self.k
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow([f"feature_{i + 1}" for i in range(k)] + ["label", "flow_count"])
            for feats, label, count in zip(self.features, self.labels, self.flow_counts):
                w.writerow(list(feats) + [label, count])


@dataclass
class CorpusIndex:
    """Groups of distinct series sharing each delta-prefix."""

    corpus: SeriesCorpus
    delta: int
    groups: Dict[Tuple[int, ...], List[int]]

    @classmethod
    def build(cls, corpus: SeriesCorpus, delta: int) -> "CorpusIndex":
        groups: Dict[Tuple[int, ...], List[int]] = {}
        for i, feats in enumerate(corpus.features):
            groups.setdefault(feats[:delta], []).append(i)
        return cls(corpus=corpus, delta=delta, groups=groups)


def classify_prefix(
    sigma: Tuple[int, ...], index: CorpusIndex, beta: float = DEFAULT_BETA
) -> PrefixClass:
    members = index.groups.get(sigma)
    if not members:
        raise KeyError(f"prefix {sigma} not present at delta={index.delta}")
    if len(members) == 1:
        return PrefixClass(PrefixKind.NON_PROFITABLE)
    labels = index.corpus.labels
    first = labels[members[0]]
    if all(labels[i] == first for i in members[1:]):
        return PrefixClass(PrefixKind.SAFE)
    flow_counts = index.corpus.flow_counts
    per_label: Dict[int, int] = {}
    total = 0
    for i in members:
        per_label[labels[i]] = per_label.get(labels[i], 0) + flow_counts[i]
        total += flow_counts[i]
    share = max(per_label.values()) / total
    return PrefixClass(PrefixKind.DANGEROUS, toxic=share < beta)


def typology_report(
    corpus: SeriesCorpus,
    deltas: Sequence[int],
    beta: float = DEFAULT_BETA,
    weighting: str = "bySeries",
) -> dict:
    """Class mass fractions per prefix length; fractions sum to 1.

    Toxic is reported as the sub-share of total mass sitting in toxic
    (hence dangerous) prefixes.
    """
    if weighting not in ("bySeries", "byFlows"):
        raise ValueError("weighting must be bySeries or byFlows")
    per_delta = {}
    for delta in deltas:
        if not 1 <= delta <= corpus.k:
            raise ValueError(f"delta {delta} out of range 1..{corpus.k}")
        index = CorpusIndex.build(corpus, delta)
        mass = {kind: 0 for kind in PrefixKind}
        toxic_mass = 0
        prefix_counts = {kind: 0 for kind in PrefixKind}
        toxic_prefixes = 0
        total = 0
        for sigma, members in index.groups.items():
            cls = classify_prefix(sigma, index, beta)
            prefix_counts[cls.kind] += 1
            if cls.toxic:
                toxic_prefixes += 1
            if weighting == "bySeries":
                weight = len(members)
            else:
                weight = sum(corpus.flow_counts[i] for i in members)
            mass[cls.kind] += weight
            if cls.toxic:
                toxic_mass += weight
            total += weight
        per_delta[delta] = {
            "non_profitable": mass[PrefixKind.NON_PROFITABLE] / total if total else 0.0,
            "safe": mass[PrefixKind.SAFE] / total if total else 0.0,
            "dangerous": mass[PrefixKind.DANGEROUS] / total if total else 0.0,
            "toxic": toxic_mass / total if total else 0.0,
            "prefixes": {
                "non_profitable": prefix_counts[PrefixKind.NON_PROFITABLE],
                "safe": prefix_counts[PrefixKind.SAFE],
                "dangerous": prefix_counts[PrefixKind.DANGEROUS],
                "toxic": toxic_prefixes,
            },
        }
    return {"beta": beta, "weighting": weighting, "per_delta": per_delta}


def brute_force_recount(
    corpus: SeriesCorpus,
    delta: int,
    beta: float = DEFAULT_BETA,
    weighting: str = "bySeries",
) -> dict:
    """Independent recomputation for one delta: sort, scan, re-classify.

    Groups are formed by sorting the series by prefix and walking runs of
    equal prefixes; classification logic is re-derived from the
    definitions. Must equal typology_report(corpus, [delta], ...) exactly.
    """
    if len(corpus) > 100_000:
        raise ValueError("brute-force recount is intended for small corpora")
    order = sorted(range(len(corpus)), key=lambda i: corpus.features[i][:delta])
    mass = {"non_profitable": 0, "safe": 0, "dangerous": 0}
    toxic_mass = 0
    counts = {"non_profitable": 0, "safe": 0, "dangerous": 0}
    toxic_prefixes = 0
    total = 0

    run: List[int] = []

    def flush(run: List[int]) -> None:
        nonlocal toxic_mass, toxic_prefixes, total
        if not run:
            return
        if weighting == "bySeries":
            weight = len(run)
        else:
            weight = 0
            for i in run:
                weight += corpus.flow_counts[i]
        total += weight
        labels_here = [corpus.labels[i] for i in run]
        if len(run) == 1:
            kind = "non_profitable"
        elif len(set(labels_here)) == 1:
            kind = "safe"
        else:
            kind = "dangerous"
        counts[kind] += 1
        mass[kind] += weight
        if kind == "dangerous":
            flows_total = sum(corpus.flow_counts[i] for i in run)
            best = 0
            for lbl in set(labels_here):
                flows_lbl = sum(
                    corpus.flow_counts[i] for i in run if corpus.labels[i] == lbl
                )
                best = max(best, flows_lbl)
            if best / flows_total < beta:
                toxic_prefixes += 1
                toxic_mass += weight

    prev = None
    for i in order:
        sig = corpus.features[i][:delta]
        if sig != prev and run:
            flush(run)
            run = []
        run.append(i)
        prev = sig
    flush(run)

    return {
        "beta": beta,
        "weighting": weighting,
        "per_delta": {
            delta: {
                "non_profitable": mass["non_profitable"] / total if total else 0.0,
                "safe": mass["safe"] / total if total else 0.0,
                "dangerous": mass["dangerous"] / total if total else 0.0,
                "toxic": toxic_mass / total if total else 0.0,
                "prefixes": {
                    "non_profitable": counts["non_profitable"],
                    "safe": counts["safe"],
                    "dangerous": counts["dangerous"],
                    "toxic": toxic_prefixes,
                },
            }
        },
    }
