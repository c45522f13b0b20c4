"""Synthesis of transition matrices steering a classifier's output law.

Given the current class distribution p and a desired one p_target, each
builder returns a row-stochastic matrix T with p T = p_target, differing in
how much attack-feasibility structure it respects:

  method 1  reach-agnostic; rewards off-diagonal floors so mass spreads
  method 2  caps each t_ij at the observed fraction of class-i inputs that
            could reach j, with optional unit-cost slack on the caps
  method 3  factors T = Rhat * Q elementwise through the row-normalized
            reach matrix, so unreachable transitions stay exactly zero
  method 4  mixes per-subset conditional laws (see method4.py)

All four reduce to linear programs solved by the in-package simplex. Results
carry solver status instead of raising, so sweep drivers can tally
infeasibility; the thin wrappers named after each method raise instead.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import lp
from .core import (
    MAX_CLASSES,
    ProbabilityVector,
    ReachabilityStats,
    TransitionMatrix,
    normalize_proportions,
    validate_distribution,
)
from .errors import (
    InfeasibleError,
    InvalidConfigError,
    NumericalFailureError,
    SubsetOverflowError,
)

RESIDUAL_TOL = 1e-7


@dataclass(frozen=True)
class SynthesisConfig:
    """Knobs shared by the builders.

    xi is the off-diagonal floor reward cap for methods 1 and 2 and must stay
    well under 1/k (enforced as xi < 1/(2k)). relax_caps toggles method 2's
    slack variables; laplace and zero_singleton pick method 4's subset-law
    treatment.
    """

    xi: float = 0.01
    relax_caps: bool = True
    laplace: bool = True
    zero_singleton: bool = True

    def check_xi(self, k: int) -> None:
        if not 0.0 < self.xi < 1.0 / (2 * k):
            raise InvalidConfigError(
                f"xi must satisfy 0 < xi < 1/(2k) = {1.0 / (2 * k):.6g}, got {self.xi}"
            )


@dataclass(frozen=True)
class MatrixCheck:
    """Residuals of a candidate matrix against the stationarity constraint."""

    max_residual: float
    max_row_deviation: float
    min_entry: float
    diagonal_mass: float


@dataclass(frozen=True, eq=False)
class SynthesisResult:
    method: str
    variant: str
    status: lp.SolveStatus
    matrix: TransitionMatrix | None
    objective: float | None
    n_variables: int
    wall_ms: float
    aux: Mapping[str, object] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status is lp.SolveStatus.OPTIMAL


def verify_matrix(
    matrix: TransitionMatrix | np.ndarray,
    p: ProbabilityVector | Sequence[float],
    p_target: ProbabilityVector | Sequence[float],
) -> MatrixCheck:
    t = matrix.rows if isinstance(matrix, TransitionMatrix) else np.asarray(matrix, float)
    pv = np.asarray(list(p), dtype=float)
    tv = np.asarray(list(p_target), dtype=float)
    residual = float(np.max(np.abs(pv @ t - tv)))
    row_dev = float(np.max(np.abs(t.sum(axis=1) - 1.0)))
    return MatrixCheck(
        max_residual=residual,
        max_row_deviation=row_dev,
        min_entry=float(t.min()),
        diagonal_mass=float(np.trace(t)),
    )


def _as_probs(p, p_target) -> tuple[np.ndarray, np.ndarray, int]:
    pv = p if isinstance(p, ProbabilityVector) else validate_distribution(list(p))
    tv = p_target if isinstance(p_target, ProbabilityVector) else validate_distribution(list(p_target))
    if pv.k != tv.k:
        raise ValueError(f"distribution sizes differ: {pv.k} vs {tv.k}")
    return np.asarray(pv.values), np.asarray(tv.values), pv.k


def _finalize(
    method: str,
    variant: str,
    sol: lp.LpSolution,
    t: np.ndarray | None,
    p: np.ndarray,
    p_target: np.ndarray,
    n_variables: int,
    t0: float,
    aux: dict | None = None,
) -> SynthesisResult:
    wall_ms = (time.perf_counter() - t0) * 1000.0
    aux = dict(aux or {})
    matrix = None
    if sol.status is lp.SolveStatus.OPTIMAL:
        matrix = TransitionMatrix(t)
        check = verify_matrix(matrix, p, p_target)
        if check.max_residual > RESIDUAL_TOL or check.max_row_deviation > RESIDUAL_TOL:
            raise NumericalFailureError(
                f"method {method} solution fails verification: {check}"
            )
        aux["check"] = check
    return SynthesisResult(
        method=method,
        variant=variant,
        status=sol.status,
        matrix=matrix,
        objective=sol.objective_value,
        n_variables=n_variables,
        wall_ms=wall_ms,
        aux=aux,
    )


def _stationarity_rows(p: np.ndarray, p_target: np.ndarray, n: int, t_at) -> list:
    """Equality rows p . column(j) = p_target[j] over a t-variable layout."""
    k = p.shape[0]
    rows = []
    for j in range(k):
        row = np.zeros(n)
        for i in range(k):
            row[t_at(i, j)] = p[i]
        rows.append((row, float(p_target[j])))
    return rows


def _row_sum_rows(k: int, n: int, t_at) -> list:
    rows = []
    for i in range(k):
        row = np.zeros(n)
        for j in range(k):
            row[t_at(i, j)] = 1.0
        rows.append((row, 1.0))
    return rows


# ---------------------------------------------------------------- method 1


def synthesize_method1(p, p_target, config: SynthesisConfig | None = None) -> SynthesisResult:
    """Reach-agnostic synthesis: minimize retained diagonal mass while
    rewarding each off-diagonal entry up to the floor cap xi."""
    t0 = time.perf_counter()
    cfg = config or SynthesisConfig()
    pv, tv, k = _as_probs(p, p_target)
    cfg.check_xi(k)

    nt = k * k
    off = [(i, j) for i in range(k) for j in range(k) if i != j]
    n = nt + len(off)
    t_at = lambda i, j: i * k + j

    c = np.zeros(n)
    for i in range(k):
        c[t_at(i, i)] = 1.0
    c[nt:] = -1.0

    eq = _stationarity_rows(pv, tv, n, t_at) + _row_sum_rows(k, n, t_at)
    ub = []
    for pos, (i, j) in enumerate(off):
        row = np.zeros(n)
        row[nt + pos] = 1.0
        row[t_at(i, j)] = -1.0
        ub.append((row, 0.0))
    bounds = [(0.0, 1.0)] * nt + [(0.0, cfg.xi)] * len(off)

    sol = lp.solve(lp.LinearProgram(n, c, eq, ub, bounds))
    t = sol.x[:nt].reshape(k, k) if sol.x is not None else None
    return _finalize("1", "default", sol, t, pv, tv, n, t0)


# ---------------------------------------------------------------- method 2


def synthesize_method2(
    p, p_target, stats: ReachabilityStats, config: SynthesisConfig | None = None
) -> SynthesisResult:
    """Method 1 plus per-entry caps at the observed reach proportions.

    Relaxed form (default) adds a slack per entry, each costing 1 in the
    objective, so unreachable mass is bought rather than forbidden. Strict
    form drops the slacks and keeps the hard caps.
    """
    t0 = time.perf_counter()
    cfg = config or SynthesisConfig()
    pv, tv, k = _as_probs(p, p_target)
    cfg.check_xi(k)
    if stats.k != k:
        raise ValueError(f"stats built for k={stats.k}, distributions have k={k}")
    proportions, _ = normalize_proportions(stats)

    relax = cfg.relax_caps
    variant = "default" if relax else "strict"
    nt = k * k
    off = [(i, j) for i in range(k) for j in range(k) if i != j]
    n_eta = nt if relax else 0
    n = nt + len(off) + n_eta
    t_at = lambda i, j: i * k + j
    eta_at = lambda i, j: nt + len(off) + i * k + j

    c = np.zeros(n)
    for i in range(k):
        c[t_at(i, i)] = 1.0
    c[nt : nt + len(off)] = -1.0
    if relax:
        c[nt + len(off) :] = 1.0

    eq = _stationarity_rows(pv, tv, n, t_at) + _row_sum_rows(k, n, t_at)
    ub = []
    for pos, (i, j) in enumerate(off):
        row = np.zeros(n)
        row[nt + pos] = 1.0
        row[t_at(i, j)] = -1.0
        ub.append((row, 0.0))
    for i in range(k):
        for j in range(k):
            row = np.zeros(n)
            row[t_at(i, j)] = 1.0
            if relax:
                row[eta_at(i, j)] = -1.0
            ub.append((row, float(proportions[i, j])))
    bounds = (
        [(0.0, 1.0)] * nt
        + [(0.0, cfg.xi)] * len(off)
        + ([(0.0, 1.0)] * n_eta if relax else [])
    )

    sol = lp.solve(lp.LinearProgram(n, c, eq, ub, bounds))
    t = sol.x[:nt].reshape(k, k) if sol.x is not None else None
    aux = {}
    if sol.x is not None and relax:
        aux["eta"] = sol.x[nt + len(off) :].reshape(k, k).copy()
    return _finalize("2", variant, sol, t, pv, tv, n, t0, aux)


# ---------------------------------------------------------------- method 3


def synthesize_method3(
    p, p_target, stats: ReachabilityStats, config: SynthesisConfig | None = None
) -> SynthesisResult:
    """Proportional synthesis: T = Rhat * Q elementwise.

    Zero entries of the row-normalized reach matrix stay zero in T by
    construction. The multiplier spread is limited through a shared cap
    variable that also enters the objective. Among alternate optima the
    matrix with the least diagonal mass is selected by a second solve with
    the objective pinned, so the returned vertex does not depend on pivot
    order accidents.
    """
    t0 = time.perf_counter()
    pv, tv, k = _as_probs(p, p_target)
    if stats.k != k:
        raise ValueError(f"stats built for k={stats.k}, distributions have k={k}")
    _, r_hat = normalize_proportions(stats)

    entries = [(i, j) for i in range(k) for j in range(k) if r_hat[i, j] > 0.0]
    var_of = {e: idx for idx, e in enumerate(entries)}
    n = len(entries) + 1
    eta = n - 1

    c = np.zeros(n)
    for i in range(k):
        c[var_of[(i, i)]] = r_hat[i, i]
    c[eta] = 1.0

    eq = []
    for j in range(k):
        row = np.zeros(n)
        for i in range(k):
            if (i, j) in var_of:
                row[var_of[(i, j)]] = pv[i] * r_hat[i, j]
        eq.append((row, float(tv[j])))
    for i in range(k):
        row = np.zeros(n)
        for j in range(k):
            if (i, j) in var_of:
                row[var_of[(i, j)]] = r_hat[i, j]
        eq.append((row, 1.0))
    ub = []
    for (i, j), idx in var_of.items():
        row = np.zeros(n)
        row[idx] = 1.0
        row[eta] = -1.0
        ub.append((row, 0.0))
    bounds = [(0.0, 1.0 / r_hat[i, j]) for (i, j) in entries] + [(0.0, np.inf)]

    program = lp.LinearProgram(n, c, eq, ub, bounds)
    sol = lp.solve(program)
    if sol.status is lp.SolveStatus.OPTIMAL:
        # pin the objective, then minimize diagonal mass for determinism
        c2 = np.zeros(n)
        for i in range(k):
            c2[var_of[(i, i)]] = r_hat[i, i]
        pinned = list(ub) + [(c.copy(), float(sol.objective_value) + 1e-9)]
        second = lp.solve(lp.LinearProgram(n, c2, eq, pinned, bounds))
        if second.status is lp.SolveStatus.OPTIMAL:
            sol = lp.LpSolution(lp.SolveStatus.OPTIMAL, second.x, sol.objective_value)

    t = None
    aux = {}
    if sol.x is not None:
        q = np.zeros((k, k))
        for (i, j), idx in var_of.items():
            q[i, j] = sol.x[idx]
        t = r_hat * q
        aux = {"eta": float(sol.x[eta]), "q": q}
    return _finalize("3", "default", sol, t, pv, tv, n, t0, aux)


# ---------------------------------------------------------------- method 4


def synthesize_method4(
    p, p_target, stats: ReachabilityStats, config: SynthesisConfig | None = None
) -> SynthesisResult:
    from .method4 import synthesize_method4 as impl

    return impl(p, p_target, stats, config)


# ------------------------------------------------------------- smoothing


def laplace_smooth(
    subset_row: Mapping[int, float] | Sequence[tuple[int, float]],
    n_i: int,
    k: int,
    source: int,
) -> dict[int, float]:
    """Add-one smoothing of a class's subset law over every subset that
    contains the source class (2^(k-1) of them).

    smoothed(S) = (count(S) + 1) / (n_i + 2^(k-1)). An empty row (n_i = 0)
    yields the uniform prior. Counts are recovered from frequencies, so the
    row must come from an integer tally.
    """
    if not 2 <= k <= MAX_CLASSES:
        raise SubsetOverflowError(f"subset enumeration capped at k={MAX_CLASSES}, got {k}")
    if not 0 <= source < k:
        raise ValueError(f"source class {source} out of range")
    pairs = subset_row.items() if isinstance(subset_row, Mapping) else subset_row
    counts: dict[int, int] = {}
    for mask, prob in pairs:
        mask = int(mask)
        if not mask >> source & 1:
            raise ValueError(f"subset {mask:#x} omits source class {source}")
        c = prob * n_i
        c_int = round(c)
        if abs(c - c_int) > 1e-6 * max(1, n_i):
            raise ValueError(f"subset frequency {prob} of {n_i} records is not integral")
        counts[mask] = counts.get(mask, 0) + c_int
    denom = n_i + (1 << (k - 1))
    bit = 1 << source
    out: dict[int, float] = {}
    rest = [j for j in range(k) if j != source]
    for sub in range(1 << (k - 1)):
        mask = bit
        for pos, j in enumerate(rest):
            if sub >> pos & 1:
                mask |= 1 << j
        out[mask] = (counts.get(mask, 0) + 1) / denom
    return dict(sorted(out.items()))


# ------------------------------------------------------------- dispatch


def synthesize(
    method: int,
    p,
    p_target,
    stats: ReachabilityStats | None = None,
    config: SynthesisConfig | None = None,
) -> SynthesisResult:
    """Run one numbered builder, returning the status-bearing result."""
    if method == 1:
        return synthesize_method1(p, p_target, config)
    if method not in (2, 3, 4):
        raise ValueError(f"unknown method {method}")
    if stats is None:
        raise ValueError(f"method {method} requires reachability stats")
    builder = {2: synthesize_method2, 3: synthesize_method3, 4: synthesize_method4}[method]
    return builder(p, p_target, stats, config)


def _require(result: SynthesisResult) -> TransitionMatrix:
    if result.status is lp.SolveStatus.OPTIMAL:
        assert result.matrix is not None
        return result.matrix
    raise InfeasibleError(
        f"method {result.method} ({result.variant}): no transition matrix exists "
        f"for this target (solver: {result.status.value})"
    )


def method1(p, p_target, config: SynthesisConfig | None = None) -> TransitionMatrix:
    return _require(synthesize_method1(p, p_target, config))


def method2(p, p_target, stats, config: SynthesisConfig | None = None) -> TransitionMatrix:
    return _require(synthesize_method2(p, p_target, stats, config))


def method3(p, p_target, stats, config: SynthesisConfig | None = None) -> TransitionMatrix:
    return _require(synthesize_method3(p, p_target, stats, config))


def method4(p, p_target, stats, config: SynthesisConfig | None = None) -> TransitionMatrix:
    return _require(synthesize_method4(p, p_target, stats, config))


def variant_label(method: int, config: SynthesisConfig) -> str:
    if method == 2:
        return "default" if config.relax_caps else "strict"
    if method == 4:
        parts = []
        if not config.laplace:
            parts.append("no_laplace")
        if not config.zero_singleton:
            parts.append("keep_singleton")
        return "+".join(parts) if parts else "default"
    return "default"
