"""Metrics, the exact expectation oracle, and the experiment runner.

The runner reproduces the evaluation protocol: Dirichlet targets, per-class
reachability records split into folds, synthesis on one fold, evaluation on
the others, with per-cell derived RNG streams so results are identical at
any parallelism level.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .core import (
    MAX_CLASSES,
    ClassSet,
    ProbabilityVector,
    ReachabilityRecord,
    ReachabilityStats,
    ReachableSet,
    TransitionMatrix,
    stats_from_records,
    validate_distribution,
)
from .errors import (
    AllZeroSignalError,
    DegenerateRanksError,
    InvalidConfigError,
    SubsetOverflowError,
)
from .pipeline import _draw_target, renormalize_row
from .rng import stream
from .synthesis import SynthesisConfig, synthesize

KL_FLOOR = 1e-12

CSV_HEADER = (
    "method", "variant", "epsilon", "target_id", "repeat", "fold", "status",
    "kl", "spearman", "max_abs_diff", "mean_abs_diff", "fooling_rate",
    "max_fooling_rate", "lp_vars", "wall_ms",
)


def _vals(p) -> np.ndarray:
    if isinstance(p, ProbabilityVector):
        return np.asarray(p.values)
    return np.asarray(list(p), dtype=float)


def kl_divergence(p, q) -> tuple[float, bool]:
    """KL(p || q) in nats; zero q-mass under positive p-mass is floored at
    1e-12 and reported through the returned flag instead of yielding inf."""
    a, b = _vals(p), _vals(q)
    if a.shape != b.shape:
        raise ValueError(f"distribution sizes differ: {a.shape} vs {b.shape}")
    flagged = False
    total = 0.0
    for pi, qi in zip(a, b):
        if pi <= 0.0:
            continue
        if qi == 0.0:
            qi = KL_FLOOR
            flagged = True
        total += pi * np.log(pi / qi)
    return max(0.0, float(total)), flagged


def _average_ranks(v: np.ndarray) -> np.ndarray:
    order = np.argsort(v, kind="stable")
    ranks = np.empty(v.shape[0])
    i = 0
    while i < v.shape[0]:
        j = i
        while j + 1 < v.shape[0] and v[order[j + 1]] == v[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(p, q) -> float:
    """Pearson correlation of average ranks. All-tied input has no defined
    rank order, which is an error here rather than a silent NaN."""
    a, b = _vals(p), _vals(q)
    if a.shape != b.shape:
        raise ValueError(f"distribution sizes differ: {a.shape} vs {b.shape}")
    ra, rb = _average_ranks(a), _average_ranks(b)
    da, db = ra - ra.mean(), rb - rb.mean()
    # denominator as sqrt of the product keeps perfect (anti-)correlation
    # exactly +-1: rank deviations are half-integers, so both sums of
    # squares and their product are exact
    den2 = float(da @ da) * float(db @ db)
    if den2 <= 0.0:
        raise DegenerateRanksError("all entries tied; rank correlation undefined")
    return float(np.clip(da @ db / np.sqrt(den2), -1.0, 1.0))


def abs_diffs(p, q) -> tuple[float, float]:
    a, b = _vals(p), _vals(q)
    if a.shape != b.shape:
        raise ValueError(f"distribution sizes differ: {a.shape} vs {b.shape}")
    d = np.abs(a - b)
    return float(d.max()), float(d.mean())


def db_distortion(x, v) -> float:
    """Perturbation-to-signal level in decibels: 20 log10 max|v| minus
    20 log10 max|x|. Depends only on the amplitude ratio."""
    mx = float(np.max(np.abs(np.asarray(x, float)))) if np.size(x) else 0.0
    mv = float(np.max(np.abs(np.asarray(v, float)))) if np.size(v) else 0.0
    if mx == 0.0:
        raise AllZeroSignalError("signal is identically zero")
    if mv == 0.0:
        raise AllZeroSignalError("perturbation is identically zero")
    return 20.0 * np.log10(mv) - 20.0 * np.log10(mx)


def _law_rows(source, k: int) -> list[list[tuple[int, float]]]:
    if isinstance(source, ReachabilityStats):
        if source.k != k:
            raise ValueError(f"stats are for k={source.k}, expected {k}")
        return [list(source.subset_rows[i]) for i in range(k)]
    if hasattr(source, "table_rows"):
        return source.table_rows()
    return [list(dict(row).items()) for row in source]


def expected_distribution(
    matrix: TransitionMatrix, laws, p, fallback: str = "stay"
) -> ProbabilityVector:
    """Exact law of the pipeline's predicted class: enumerate each class's
    subset distribution and average the renormalized transition rows."""
    k = matrix.k
    if k > MAX_CLASSES:
        raise SubsetOverflowError(f"subset enumeration capped at k={MAX_CLASSES}")
    pv = _vals(p)
    if pv.shape[0] != k:
        raise ValueError(f"initial distribution has {pv.shape[0]} entries, matrix is {k}x{k}")
    rows = _law_rows(laws, k)
    out = np.zeros(k)
    for i in range(k):
        for mask, prob in rows[i]:
            if prob <= 0.0:
                continue
            reach = ReachableSet(mask=int(mask), source=i, k=k)
            out += pv[i] * prob * renormalize_row(matrix.rows[i], reach, fallback)
    return validate_distribution(out / out.sum())


def sample_dirichlet_targets(k: int, n: int, seed: int) -> list[ProbabilityVector]:
    """Uniform draws on the k-simplex (all Dirichlet parameters 1), built
    from normalized unit exponentials on the named target stream."""
    if k < 2:
        raise ValueError(f"need k >= 2, got {k}")
    rng = stream(seed, "targets")
    draws = rng.exponential(1.0, size=(n, k))
    return [validate_distribution(row / row.sum()) for row in draws]


@dataclass(frozen=True)
class MetricReport:
    kl: float
    kl_flagged: bool
    spearman: float | None
    max_abs_diff: float
    mean_abs_diff: float
    fooling_rate: float
    max_fooling_rate: float


def evaluate_records(
    matrix: TransitionMatrix,
    records: Sequence[ReachabilityRecord],
    target: ProbabilityVector,
    rng_of: Callable[[int], np.random.Generator],
) -> tuple[MetricReport, np.ndarray]:
    """Score a matrix on held-out reachability records under oracle
    semantics (the sampled target class is always hit)."""
    k = matrix.k
    counts = np.zeros(k)
    fooled = 0
    reach_beyond = 0
    for s_idx, rec in enumerate(records):
        row = renormalize_row(matrix.rows[rec.true_class], rec.reachable, "stay")
        tgt = _draw_target(row, rng_of(s_idx).random())
        counts[tgt] += 1
        fooled += tgt != rec.true_class
        reach_beyond += rec.reachable.size > 1
    n = len(records)
    p_hat = counts / n
    kl, flagged = kl_divergence(target, p_hat)
    try:
        rho = spearman(target, p_hat)
    except DegenerateRanksError:
        rho = None
    mx, mean = abs_diffs(target, p_hat)
    report = MetricReport(
        kl=kl,
        kl_flagged=flagged,
        spearman=rho,
        max_abs_diff=mx,
        mean_abs_diff=mean,
        fooling_rate=fooled / n,
        max_fooling_rate=reach_beyond / n,
    )
    return report, p_hat


# ------------------------------------------------------------ experiment


_VARIANTS = {
    1: ("default",),
    2: ("default", "strict"),
    3: ("default",),
    4: ("default", "no_laplace", "keep_singleton", "no_laplace+keep_singleton"),
}


@dataclass(frozen=True)
class MethodSpec:
    method: int
    variant: str = "default"

    def __post_init__(self):
        if self.method not in _VARIANTS:
            raise InvalidConfigError(f"unknown method {self.method}")
        if self.variant not in _VARIANTS[self.method]:
            raise InvalidConfigError(
                f"method {self.method} has no variant {self.variant!r}; "
                f"choose from {_VARIANTS[self.method]}"
            )

    @property
    def label(self) -> str:
        return f"{self.method}/{self.variant}"

    def config(self, xi: float) -> SynthesisConfig:
        parts = self.variant.split("+")
        return SynthesisConfig(
            xi=xi,
            relax_caps="strict" not in parts,
            laplace="no_laplace" not in parts,
            zero_singleton="keep_singleton" not in parts,
        )


@dataclass(frozen=True)
class ExperimentPlan:
    k: int
    epsilons: tuple[float, ...]
    n_targets: int
    n_repeats: int
    methods: tuple[MethodSpec, ...]
    folds: int = 2
    samples_per_class: tuple[int, ...] = (50,)
    seed: int = 0
    xi: float = 0.01
    reach_scale: float = 10.0

    def __post_init__(self):
        if not 2 <= self.k <= MAX_CLASSES:
            raise InvalidConfigError(f"k must be in [2, {MAX_CLASSES}], got {self.k}")
        if not self.epsilons:
            raise InvalidConfigError("at least one epsilon is required")
        for e in self.epsilons:
            if not (np.isfinite(e) and e >= 0.0):
                raise InvalidConfigError(f"epsilon must be finite and >= 0, got {e}")
        if self.n_targets < 1 or self.n_repeats < 1:
            raise InvalidConfigError("n_targets and n_repeats must be >= 1")
        if self.folds < 2:
            raise InvalidConfigError(f"folds must be >= 2, got {self.folds}")
        if not self.samples_per_class or any(n < 1 for n in self.samples_per_class):
            raise InvalidConfigError("samples_per_class entries must be >= 1")
        if not self.methods:
            raise InvalidConfigError("at least one method is required")

    @classmethod
    def from_json(cls, text: str) -> "ExperimentPlan":
        obj = json.loads(text)
        if not isinstance(obj, dict):
            raise InvalidConfigError("plan must be a JSON object")
        methods = tuple(
            MethodSpec(int(m["method"]), str(m.get("variant", "default")))
            if isinstance(m, dict)
            else MethodSpec(int(m))
            for m in obj.get("methods", [])
        )
        spc = obj.get("samples_per_class", 50)
        if isinstance(spc, (int, float)):
            spc = (int(spc),)
        else:
            spc = tuple(int(v) for v in spc)
        try:
            return cls(
                k=int(obj["k"]),
                epsilons=tuple(float(e) for e in obj["epsilons"]),
                n_targets=int(obj["n_targets"]),
                n_repeats=int(obj["n_repeats"]),
                methods=methods,
                folds=int(obj.get("folds", 2)),
                samples_per_class=spc,
                seed=int(obj.get("seed", 0)),
                xi=float(obj.get("xi", 0.01)),
                reach_scale=float(obj.get("reach_scale", 10.0)),
            )
        except KeyError as exc:
            raise InvalidConfigError(f"plan is missing required field {exc}") from exc

    def to_obj(self) -> dict:
        return {
            "k": self.k,
            "epsilons": list(self.epsilons),
            "n_targets": self.n_targets,
            "n_repeats": self.n_repeats,
            "methods": [{"method": m.method, "variant": m.variant} for m in self.methods],
            "folds": self.folds,
            "samples_per_class": list(self.samples_per_class),
            "seed": self.seed,
            "xi": self.xi,
            "reach_scale": self.reach_scale,
        }


class IndependentReachBackend:
    """Synthetic reachability with independent per-class inclusion: each
    non-source class is reachable with probability min(1, reach_scale * eps).
    One draw consumes exactly k uniforms, keeping streams alignable."""

    def __init__(self, k: int, reach_scale: float = 10.0):
        if not 2 <= k <= MAX_CLASSES:
            raise InvalidConfigError(f"k must be in [2, {MAX_CLASSES}], got {k}")
        self.k = k
        self.reach_scale = reach_scale

    def rho(self, epsilon: float) -> float:
        return min(1.0, self.reach_scale * epsilon)

    def draw_mask(self, class_i: int, epsilon: float, rng) -> int:
        u = rng.random(self.k)
        rho = self.rho(epsilon)
        mask = 1 << class_i
        for j in range(self.k):
            if j != class_i and u[j] < rho:
                mask |= 1 << j
        return mask


@dataclass(frozen=True, eq=False)
class NBlock:
    n_per_class: int
    rows: list
    aggregates: list


@dataclass(frozen=True, eq=False)
class ExperimentResult:
    plan: ExperimentPlan
    blocks: list
    summary: dict


def _draw_fold_records(plan, backend, n_idx, e_idx, r_idx):
    k = plan.k
    n_per = plan.samples_per_class[n_idx]
    eps = plan.epsilons[e_idx]
    total = n_per * plan.folds
    per_fold = [[] for _ in range(plan.folds)]
    for i in range(k):
        rng = stream(plan.seed, "reach", n_idx, e_idx, r_idx, i)
        masks = [backend.draw_mask(i, eps, rng) for _ in range(total)]
        perm = stream(plan.seed, "folds", n_idx, e_idx, r_idx, i).permutation(total)
        for f in range(plan.folds):
            for pos in perm[f * n_per : (f + 1) * n_per]:
                rec = ReachabilityRecord(
                    id=str(i * total + int(pos)),
                    true_class=i,
                    reachable=ReachableSet(mask=masks[int(pos)], source=i, k=k),
                )
                per_fold[f].append(rec)
    return per_fold


def _run_cell(plan, backend, targets, p_init, classes, cell, timings):
    n_idx, e_idx, t_idx, r_idx = cell
    eps = plan.epsilons[e_idx]
    target_vec = targets[t_idx]
    per_fold = _draw_fold_records(plan, backend, n_idx, e_idx, r_idx)
    stats = [stats_from_records(per_fold[f], classes) for f in range(plan.folds)]
    rows = []
    trials = []
    for m_idx, mspec in enumerate(plan.methods):
        cfg = mspec.config(plan.xi)
        reports = []
        statuses = []
        lp_vars = []
        for f in range(plan.folds):
            res = synthesize(mspec.method, p_init, target_vec, stats[f], cfg)
            statuses.append(res.status.value)
            lp_vars.append(res.n_variables)
            report = None
            if res.ok:
                eval_recs = [r for g in range(plan.folds) if g != f for r in per_fold[g]]
                rng_of = lambda s_idx, f=f, m_idx=m_idx: stream(
                    plan.seed, "eval", n_idx, e_idx, t_idx, r_idx, f, m_idx, s_idx
                )
                report, _ = evaluate_records(res.matrix, eval_recs, target_vec, rng_of)
            reports.append(report)
            rows.append(
                {
                    "method": mspec.method,
                    "variant": mspec.variant,
                    "epsilon": eps,
                    "target_id": t_idx,
                    "repeat": r_idx,
                    "fold": f,
                    "status": res.status.value,
                    "kl": report.kl if report else None,
                    "spearman": report.spearman if report else None,
                    "max_abs_diff": report.max_abs_diff if report else None,
                    "mean_abs_diff": report.mean_abs_diff if report else None,
                    "fooling_rate": report.fooling_rate if report else None,
                    "max_fooling_rate": report.max_fooling_rate if report else None,
                    "lp_vars": res.n_variables,
                    "wall_ms": res.wall_ms if timings else None,
                }
            )
        trials.append({"m_idx": m_idx, "reports": reports, "statuses": statuses,
                       "lp_vars": lp_vars})
    return rows, trials


_AGG_FIELDS = ("kl", "spearman", "max_abs_diff", "mean_abs_diff",
               "fooling_rate", "max_fooling_rate")


def _mean(values):
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


def _report_field(report, name):
    return getattr(report, name) if report is not None else None


def run_experiment(plan: ExperimentPlan, backend, jobs: int = 1,
                   timings: bool = False, progress=None) -> ExperimentResult:
    """Full sweep over (N, epsilon, target, repeat, method, fold).

    Cells are independent and draw every random number from streams named by
    their indices, so the result is identical at any job count; rows are
    assembled in nested index order regardless of completion order.
    """
    if getattr(backend, "k", plan.k) != plan.k:
        raise InvalidConfigError(f"backend has k={backend.k}, plan wants k={plan.k}")
    targets = sample_dirichlet_targets(plan.k, plan.n_targets, plan.seed)
    p_init = np.full(plan.k, 1.0 / plan.k)
    classes = ClassSet(plan.k)

    blocks = []
    summary_per_n = {}
    for n_idx, n_per in enumerate(plan.samples_per_class):
        cells = [
            (n_idx, e_idx, t_idx, r_idx)
            for e_idx in range(len(plan.epsilons))
            for t_idx in range(plan.n_targets)
            for r_idx in range(plan.n_repeats)
        ]
        worker = lambda cell: _run_cell(plan, backend, targets, p_init, classes, cell, timings)
        if jobs > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                cell_results = list(pool.map(worker, cells))
        else:
            cell_results = [worker(c) for c in cells]
        if progress is not None:
            progress(f"N={n_per}: {len(cells)} cells done")

        rows = []
        for cell_rows, _ in cell_results:
            rows.extend(cell_rows)

        # aggregate per (method, epsilon): per-trial discard for metric
        # means, plus per-fold means over every optimal fold for comparison
        aggregates = []
        methods_summary = {}
        for m_idx, mspec in enumerate(plan.methods):
            per_eps = {}
            for e_idx, eps in enumerate(plan.epsilons):
                trial_means = {name: [] for name in _AGG_FIELDS}
                fold_means = {name: [] for name in _AGG_FIELDS}
                lp_all = []
                n_trials = 0
                n_success = 0
                for (ci, cell) in enumerate(cells):
                    if cell[1] != e_idx:
                        continue
                    trial = cell_results[ci][1][m_idx]
                    n_trials += 1
                    ok = all(s == "optimal" for s in trial["statuses"])
                    lp_all.extend(trial["lp_vars"])
                    for rep in trial["reports"]:
                        if rep is not None:
                            for name in _AGG_FIELDS:
                                fold_means[name].append(_report_field(rep, name))
                    if ok:
                        n_success += 1
                        for name in _AGG_FIELDS:
                            trial_means[name].append(
                                _mean([_report_field(r, name) for r in trial["reports"]])
                            )
                agg = {name: _mean(trial_means[name]) for name in _AGG_FIELDS}
                success_pct = 100.0 * n_success / n_trials if n_trials else 0.0
                aggregates.append(
                    {
                        "method": mspec.method,
                        "variant": mspec.variant,
                        "epsilon": eps,
                        "target_id": None,
                        "repeat": None,
                        "fold": "agg",
                        "status": "aggregate",
                        "kl": agg["kl"],
                        "spearman": agg["spearman"],
                        "max_abs_diff": agg["max_abs_diff"],
                        "mean_abs_diff": agg["mean_abs_diff"],
                        "fooling_rate": agg["fooling_rate"],
                        "max_fooling_rate": agg["max_fooling_rate"],
                        "lp_vars": _mean(lp_all),
                        "wall_ms": None,
                    }
                )
                per_eps[f"{eps:.10g}"] = {
                    "n_trials": n_trials,
                    "n_success": n_success,
                    "success_pct": success_pct,
                    **{f"{name}_mean": agg[name] for name in _AGG_FIELDS},
                    **{
                        f"{name}_fold_mean": _mean(fold_means[name])
                        for name in _AGG_FIELDS
                    },
                }
            methods_summary[mspec.label] = {"per_epsilon": per_eps}
        blocks.append(NBlock(n_per_class=n_per, rows=rows, aggregates=aggregates))
        summary_per_n[str(n_per)] = {"methods": methods_summary}

    summary = {"plan": plan.to_obj(), "per_n": summary_per_n}
    return ExperimentResult(plan=plan, blocks=blocks, summary=summary)


def _fmt_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.10g}"
    return str(v)


def results_csv(block: NBlock) -> str:
    lines = [",".join(CSV_HEADER)]
    for row in list(block.rows) + list(block.aggregates):
        lines.append(",".join(_fmt_cell(row[name]) for name in CSV_HEADER))
    return "\n".join(lines) + "\n"
