"""Core value types: class sets, distributions, transition matrices, and
reachability bookkeeping.

Reachable sets are bitmasks, which caps the number of classes at 16; that cap
is what keeps exhaustive subset enumeration (2^k per class) affordable
elsewhere in the package. All array-bearing types copy their input and mark
the copy read-only, so instances behave as values.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import (
    EmptyClassError,
    NegativeEntryError,
    SumNotOneError,
)

MAX_CLASSES = 16

DISTRIBUTION_ATOL = 1e-9
ROW_SUM_ATOL = 1e-7
ENTRY_ATOL = 1e-9


def _frozen_array(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ClassSet:
    """The finite label space Y."""

    k: int
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        if not 2 <= self.k <= MAX_CLASSES:
            raise ValueError(f"class count must be in [2, {MAX_CLASSES}], got {self.k}")
        labels = self.labels or tuple(f"c{i}" for i in range(self.k))
        if len(labels) != self.k or len(set(labels)) != self.k:
            raise ValueError("labels must be unique and match k")
        object.__setattr__(self, "labels", labels)


@dataclass(frozen=True, eq=False)
class ProbabilityVector:
    """A distribution over classes; entries in [0, 1], summing to 1."""

    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen_array(self.values))

    @property
    def k(self) -> int:
        return self.values.shape[0]

    def __len__(self) -> int:
        return self.k

    def __iter__(self) -> Iterator[float]:
        return iter(self.values.tolist())

    def to_json(self) -> str:
        return json.dumps(self.values.tolist())

    @classmethod
    def from_json(cls, text: str) -> "ProbabilityVector":
        return validate_distribution(json.loads(text))


def validate_distribution(raw: Sequence[float]) -> ProbabilityVector:
    """Check entries and total mass, returning the validated vector.

    Negativity is reported before the sum check: (-0.1, 1.1) sums to 1 but is
    still not a distribution.
    """
    arr = np.asarray(raw, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("distribution must be a non-empty 1-d sequence")
    if not np.all(np.isfinite(arr)):
        raise ValueError("distribution entries must be finite")
    if np.any(arr < 0):
        raise NegativeEntryError(f"negative entry in distribution: {arr.min()}")
    total = float(arr.sum())
    if abs(total - 1.0) > DISTRIBUTION_ATOL:
        raise SumNotOneError(f"distribution sums to {total}, expected 1 within {DISTRIBUTION_ATOL}")
    return ProbabilityVector(arr)


@dataclass(frozen=True, eq=False)
class TransitionMatrix:
    """Row-stochastic k x k matrix; row i is the target law given source i."""

    rows: np.ndarray

    def __post_init__(self):
        arr = np.array(self.rows, dtype=float)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise ValueError(f"transition matrix must be square, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("transition matrix entries must be finite")
        if np.any(arr < -ENTRY_ATOL) or np.any(arr > 1.0 + ENTRY_ATOL):
            raise NegativeEntryError("transition matrix entries must lie in [0, 1]")
        sums = arr.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > ROW_SUM_ATOL):
            worst = float(np.abs(sums - 1.0).max())
            raise SumNotOneError(f"row sums deviate from 1 by {worst}, tolerance {ROW_SUM_ATOL}")
        arr = np.clip(arr, 0.0, 1.0)
        arr.setflags(write=False)
        object.__setattr__(self, "rows", arr)

    @property
    def k(self) -> int:
        return self.rows.shape[0]

    def row(self, i: int) -> np.ndarray:
        return self.rows[i]

    def to_json(self) -> str:
        return json.dumps({"k": self.k, "rows": self.rows.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "TransitionMatrix":
        obj = json.loads(text)
        rows = np.asarray(obj["rows"], dtype=float)
        if rows.shape != (obj["k"], obj["k"]):
            raise ValueError(f"matrix shape {rows.shape} does not match declared k={obj['k']}")
        return cls(rows)


@dataclass(frozen=True, order=True)
class ReachableSet:
    """Subset of classes an input can be pushed into, as a bitmask.

    The source class is always a member: staying put needs no perturbation.
    """

    mask: int
    source: int
    k: int

    def __post_init__(self):
        if not 2 <= self.k <= MAX_CLASSES:
            raise ValueError(f"k must be in [2, {MAX_CLASSES}]")
        if not 0 <= self.source < self.k:
            raise ValueError(f"source class {self.source} out of range for k={self.k}")
        if not 0 < self.mask < (1 << self.k):
            raise ValueError(f"mask {self.mask:#x} out of range for k={self.k}")
        if not self.mask & (1 << self.source):
            raise ValueError("reachable set must contain its source class")

    @classmethod
    def from_classes(cls, classes: Iterable[int], source: int, k: int) -> "ReachableSet":
        mask = 0
        for j in classes:
            mask |= 1 << j
        mask |= 1 << source
        return cls(mask, source, k)

    def contains(self, j: int) -> bool:
        return bool(self.mask >> j & 1)

    @property
    def classes(self) -> tuple[int, ...]:
        return tuple(j for j in range(self.k) if self.mask >> j & 1)

    @property
    def size(self) -> int:
        return bin(self.mask).count("1")


@dataclass(frozen=True, eq=False)
class ReachabilityRecord:
    """One evaluated input: its true class and where attacks could send it."""

    id: str
    true_class: int
    reachable: ReachableSet
    per_target_distortion: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.reachable.source != self.true_class:
            raise ValueError("record true_class must match the reachable set's source")

    def to_obj(self) -> dict:
        obj = {
            "id": self.id,
            "true_class": self.true_class,
            "reachable": list(self.reachable.classes),
        }
        if self.per_target_distortion is not None:
            obj["per_target_distortion"] = list(self.per_target_distortion)
        return obj

    @classmethod
    def from_obj(cls, obj: dict, k: int) -> "ReachabilityRecord":
        distortion = obj.get("per_target_distortion")
        return cls(
            id=str(obj["id"]),
            true_class=int(obj["true_class"]),
            reachable=ReachableSet.from_classes(
                [int(j) for j in obj["reachable"]], int(obj["true_class"]), k
            ),
            per_target_distortion=None if distortion is None else tuple(float(d) for d in distortion),
        )


def records_to_jsonl(records: Iterable[ReachabilityRecord]) -> str:
    return "".join(json.dumps(r.to_obj(), separators=(",", ":")) + "\n" for r in records)


def records_from_jsonl(text: str, k: int) -> list[ReachabilityRecord]:
    records = []
    for line in text.splitlines():
        line = line.strip()
        if line:
            records.append(ReachabilityRecord.from_obj(json.loads(line), k))
    return records


@dataclass(frozen=True, eq=False)
class ReachabilityStats:
    """Aggregated reachability over a record batch.

    counts[i][j] is how many class-i records could reach class j, so the
    diagonal equals the per-class record count. subset_rows[i] lists the
    empirical law of the whole reachable set: (mask, probability) pairs in
    ascending mask order, summing to 1 for any class with records.
    """

    k: int
    counts: np.ndarray
    per_class_n: np.ndarray
    subset_rows: tuple[tuple[tuple[int, float], ...], ...]

    def __post_init__(self):
        counts = _frozen_array(self.counts, dtype=np.int64)
        n = _frozen_array(self.per_class_n, dtype=np.int64)
        if counts.shape != (self.k, self.k) or n.shape != (self.k,):
            raise ValueError("stats arrays have inconsistent shapes")
        if np.any(counts < 0) or np.any(n < 0):
            raise ValueError("counts must be non-negative")
        if np.any(np.diag(counts) != n):
            raise ValueError("diagonal counts must equal per-class record counts")
        rows = []
        for i, row in enumerate(self.subset_rows):
            row = tuple(sorted((int(m), float(p)) for m, p in row))
            for mask, p in row:
                if not mask >> i & 1:
                    raise ValueError(f"class {i} subset {mask:#x} omits its source")
                if p < 0:
                    raise ValueError("subset probabilities must be non-negative")
            if n[i] > 0:
                total = sum(p for _, p in row)
                if abs(total - 1.0) > DISTRIBUTION_ATOL:
                    raise SumNotOneError(f"class {i} subset row sums to {total}")
            elif row:
                raise ValueError(f"class {i} has no records but a non-empty subset row")
            rows.append(row)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "per_class_n", n)
        object.__setattr__(self, "subset_rows", tuple(rows))

    @property
    def empty_classes(self) -> tuple[int, ...]:
        return tuple(int(i) for i in np.flatnonzero(self.per_class_n == 0))

    def subset_row(self, i: int) -> dict[int, float]:
        return dict(self.subset_rows[i])


def stats_from_records(
    records: Sequence[ReachabilityRecord], classes: ClassSet | int
) -> ReachabilityStats:
    """Tally reachability counts and empirical subset frequencies."""
    k = classes.k if isinstance(classes, ClassSet) else int(classes)
    counts = np.zeros((k, k), dtype=np.int64)
    subset_counts: list[dict[int, int]] = [dict() for _ in range(k)]
    n = np.zeros(k, dtype=np.int64)
    for rec in records:
        if rec.reachable.k != k:
            raise ValueError(f"record {rec.id!r} has k={rec.reachable.k}, expected {k}")
        i = rec.true_class
        n[i] += 1
        for j in rec.reachable.classes:
            counts[i, j] += 1
        subset_counts[i][rec.reachable.mask] = subset_counts[i].get(rec.reachable.mask, 0) + 1
    rows = tuple(
        tuple((mask, c / n[i]) for mask, c in sorted(subset_counts[i].items()))
        for i in range(k)
    )
    return ReachabilityStats(k=k, counts=counts, per_class_n=n, subset_rows=rows)


def normalize_proportions(stats: ReachabilityStats) -> tuple[np.ndarray, np.ndarray]:
    """Return (R', R^): per-class proportions and row-normalized reach.

    R'[i][j] = counts[i][j] / n_i, the fraction of class-i records that could
    reach j (diagonal 1). R^ divides each count row by its own sum, giving a
    row-stochastic matrix. Undefined when any class has no records.
    """
    if stats.empty_classes:
        raise EmptyClassError(f"classes without records: {stats.empty_classes}")
    n = stats.per_class_n.astype(float)
    proportions = stats.counts / n[:, None]
    row_sums = stats.counts.sum(axis=1).astype(float)
    row_normalized = stats.counts / row_sums[:, None]
    return proportions, row_normalized
