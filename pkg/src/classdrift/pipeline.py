"""Guided targeted attack over a batch of inputs.

For each input: find which classes its attack can reach, renormalize the
relevant transition-matrix row onto that set, sample the target class by
inverse CDF from the input's own RNG stream, and emit the targeted
perturbation's outcome. Aggregated predictions form the empirical class
distribution the transition matrix was synthesized to induce.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .attacks import (
    ATTACK_NORMS,
    AdversarialExample,
    AffineClassifier,
    AttackBudget,
    SyntheticOracle,
    attack_targets,
)
from .core import ReachableSet, TransitionMatrix
from .errors import BackendFailureError
from .rng import stream

FALLBACKS = ("stay", "uniform")


@dataclass(frozen=True, eq=False)
class Sample:
    id: int
    true_class: int
    x: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class AttackOutcome:
    id: int
    true_class: int
    reachable: ReachableSet
    target: int
    predicted: int
    fooled: bool
    distortion: float | None

    def to_obj(self) -> dict:
        return {
            "id": self.id,
            "true_class": self.true_class,
            "reachable": list(self.reachable.classes),
            "target": self.target,
            "predicted": self.predicted,
            "fooled": self.fooled,
            "distortion": self.distortion,
        }

    @classmethod
    def from_obj(cls, obj: dict, k: int) -> "AttackOutcome":
        mask = 0
        for j in obj["reachable"]:
            mask |= 1 << int(j)
        return cls(
            id=int(obj["id"]),
            true_class=int(obj["true_class"]),
            reachable=ReachableSet(mask=mask, source=int(obj["true_class"]), k=k),
            target=int(obj["target"]),
            predicted=int(obj["predicted"]),
            fooled=bool(obj["fooled"]),
            distortion=None if obj["distortion"] is None else float(obj["distortion"]),
        )


def outcomes_to_jsonl(outcomes: Sequence[AttackOutcome]) -> str:
    return "".join(
        json.dumps(o.to_obj(), separators=(",", ":")) + "\n" for o in outcomes
    )


def renormalize_row(row, reachable: ReachableSet, fallback: str = "stay") -> np.ndarray:
    """Restrict a transition row to the reachable classes and rescale.

    When the reachable classes carry zero row mass the rescale divides by
    zero; the "stay" fallback pins everything on the source class (the input
    is left alone), "uniform" spreads evenly over the reachable set.
    """
    if fallback not in FALLBACKS:
        raise ValueError(f"fallback must be one of {FALLBACKS}, got {fallback!r}")
    row = np.asarray(row, dtype=float)
    k = row.shape[0]
    keep = np.zeros(k, dtype=bool)
    for j in reachable.classes:
        keep[j] = True
    out = np.where(keep, row, 0.0)
    total = out.sum()
    if total <= 0.0:
        out = np.zeros(k)
        if fallback == "stay":
            out[reachable.source] = 1.0
        else:
            out[keep] = 1.0 / reachable.size
        return out
    return out / total


class OracleBackend:
    """Reachability straight from a subset table; targeted attacks against a
    reachable class are assumed to succeed (that is what the table asserts)."""

    def __init__(self, oracle: SyntheticOracle):
        self.oracle = oracle
        self.k = oracle.k

    def prepare(self, sample: Sample, rng) -> tuple[ReachableSet, None]:
        return self.oracle.sample(sample.true_class, rng=rng), None

    def emit(self, sample: Sample, target: int, cache) -> tuple[int, float | None]:
        return target, None


class ClassifierBackend:
    """Runs the configured attack against every non-source class up front;
    the sampled target reuses its cached perturbation."""

    def __init__(self, classifier: AffineClassifier, attack: str,
                 budget: AttackBudget | None = None):
        self.classifier = classifier
        self.attack = attack
        self.budget = budget or AttackBudget(norm=ATTACK_NORMS[attack])
        self.k = classifier.k

    def prepare(self, sample: Sample, rng) -> tuple[ReachableSet, dict[int, AdversarialExample]]:
        if sample.x is None:
            raise ValueError(f"sample {sample.id} has no input vector")
        predicted = self.classifier.predict(sample.x)
        if predicted != sample.true_class:
            raise ValueError(
                f"sample {sample.id}: clean prediction {predicted} "
                f"differs from true class {sample.true_class}"
            )
        cache = attack_targets(self.classifier, sample.x, self.budget, self.attack)
        mask = 1 << sample.true_class
        for j, ex in cache.items():
            if ex.success:
                mask |= 1 << j
        reach = ReachableSet(mask=mask, source=sample.true_class, k=self.k)
        return reach, cache

    def emit(self, sample: Sample, target: int, cache) -> tuple[int, float]:
        if target == sample.true_class:
            return sample.true_class, 0.0
        ex = cache[target]
        predicted = self.classifier.predict(ex.x_adv)
        if not ex.success or predicted != target:
            raise BackendFailureError(
                f"sample {sample.id}: attack on class {target} was marked "
                f"reachable but re-emission predicts {predicted}"
            )
        return predicted, ex.distortion


@dataclass(frozen=True, eq=False)
class PipelineRun:
    matrix: TransitionMatrix
    backend: OracleBackend | ClassifierBackend
    seed: int = 0
    fallback: str = "stay"

    def __post_init__(self):
        backend = self.backend
        if isinstance(backend, SyntheticOracle):
            backend = OracleBackend(backend)
            object.__setattr__(self, "backend", backend)
        if self.matrix.k != backend.k:
            raise ValueError(
                f"matrix is {self.matrix.k}x{self.matrix.k} but backend has "
                f"{backend.k} classes"
            )
        if self.fallback not in FALLBACKS:
            raise ValueError(f"fallback must be one of {FALLBACKS}")


def _draw_target(row: np.ndarray, u: float) -> int:
    support = np.flatnonzero(row)
    cdf = np.cumsum(row[support])
    cdf[-1] = 1.0
    idx = int(np.searchsorted(cdf, u, side="right"))
    return int(support[min(idx, len(support) - 1)])


def attack_one(sample: Sample, run: PipelineRun, rng=None) -> AttackOutcome:
    """One pass of the guided attack; consumes the sample's own RNG stream
    (derived from the run seed and the sample id) so any execution order
    reproduces the same outcome."""
    if rng is None:
        rng = stream(run.seed, "sample", sample.id)
    reach, cache = run.backend.prepare(sample, rng)
    row = renormalize_row(run.matrix.rows[sample.true_class], reach, run.fallback)
    target = _draw_target(row, rng.random())
    if target == sample.true_class:
        predicted, dist = sample.true_class, (
            0.0 if isinstance(run.backend, ClassifierBackend) else None
        )
    else:
        predicted, dist = run.backend.emit(sample, target, cache)
    return AttackOutcome(
        id=sample.id,
        true_class=sample.true_class,
        reachable=reach,
        target=target,
        predicted=predicted,
        fooled=predicted != sample.true_class,
        distortion=dist,
    )


@dataclass(frozen=True, eq=False)
class BatchSummary:
    n: int
    p_hat: np.ndarray
    fooling_rate: float

    def to_obj(self) -> dict:
        return {
            "n": self.n,
            "p_hat": [float(v) for v in self.p_hat],
            "fooling_rate": self.fooling_rate,
        }


def run_batch(samples: Sequence[Sample], run: PipelineRun) -> tuple[list[AttackOutcome], BatchSummary]:
    if not samples:
        raise ValueError("batch is empty")
    outcomes = [attack_one(s, run) for s in samples]
    k = run.matrix.k
    counts = np.zeros(k)
    fooled = 0
    for o in outcomes:
        counts[o.predicted] += 1
        fooled += o.fooled
    n = len(outcomes)
    return outcomes, BatchSummary(n=n, p_hat=counts / n, fooling_rate=fooled / n)


def make_oracle_samples(k: int, n: int, seed: int) -> list[Sample]:
    """Synthetic batch with uniformly drawn true classes."""
    rng = stream(seed, "classes")
    classes = rng.integers(0, k, size=n)
    return [Sample(id=i, true_class=int(c)) for i, c in enumerate(classes)]


def make_classifier_samples(clf: AffineClassifier, n: int, seed: int) -> list[Sample]:
    """Uniform box inputs labeled by the classifier itself, so the clean
    prediction always matches the recorded true class."""
    rng = stream(seed, "inputs")
    out = []
    for i in range(n):
        x = rng.random(clf.dim)
        out.append(Sample(id=i, true_class=clf.predict(x), x=x))
    return out
