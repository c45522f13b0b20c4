"""Subset-mixture synthesis (method 4).

Each class i mixes one conditional distribution per reachable subset S:
row_i = sum_S w_i(S) * v_i(S), with v_i(S) supported on S. The transition
entries are linear in the v's, so matching a target class law is an LP.

With add-one smoothing the subset law has positive weight on all 2^(k-1)
subsets containing i, far too many to give each its own block of variables.
The smoothed law splits exactly into a uniform base (weight beta on every
family subset) plus sparse empirical extras, and the aggregated base
contribution a_ij = beta * sum_S v_i(S)_j ranges over a polytope described
by supply/demand inequalities: for any class set C containing i,
sum_{j in C} a_ij >= beta * #(family subsets inside C), since those subsets
can ship mass nowhere else. Only the tightest such cut per cardinality can
be violated (i plus the smallest other coordinates), so cuts are generated
lazily from sorted prefix sums until none are violated. Conditional
distributions are recovered on demand by routing the base aggregate back
over the family with a max-flow.

Without smoothing there is no base and the program is the literal
per-subset grid over the observed support.
"""

from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass, replace

import numpy as np

from . import lp
from .core import ReachabilityStats
from .errors import EmptyClassError, NumericalFailureError

_CUT_TOL = 1e-9
_MAX_CUT_ROUNDS = 200
_PLAIN_ROUNDS = 6  # restart with a tilted objective if cuts are still arriving
_FLOW_EPS = 1e-12


@dataclass(frozen=True)
class RowMixture:
    """One class's subset law, split into uniform base + sparse extras."""

    source: int
    k: int
    base_weight: float  # weight shared by every family subset, 0 if no base
    min_size: int  # smallest family subset size (2 after singleton zeroing)
    family_count: int
    extras: tuple[tuple[int, float], ...]  # (mask, weight), masks ascending
    feasible: bool  # False when zeroing removed the entire law

    @property
    def base_total(self) -> float:
        return self.base_weight * self.family_count

    def family_masks(self):
        bit = 1 << self.source
        rest = [j for j in range(self.k) if j != self.source]
        for sub in range(1 << (self.k - 1)):
            mask = bit
            for pos, j in enumerate(rest):
                if sub >> pos & 1:
                    mask |= 1 << j
            if bin(mask).count("1") >= self.min_size:
                yield mask


def _family_inside(size: int, min_size: int) -> int:
    # family subsets contained in a size-`size` set that includes the source
    return (1 << (size - 1)) - (1 if min_size == 2 else 0)


def build_row_mixture(
    subset_row, n_i: int, k: int, source: int, laplace: bool, zero_singleton: bool
) -> RowMixture:
    single = 1 << source
    pairs = sorted(dict(subset_row).items())
    if laplace:
        denom = n_i + (1 << (k - 1))
        extras0: dict[int, float] = {}
        for mask, prob in pairs:
            c = prob * n_i
            c_int = round(c)
            if abs(c - c_int) > 1e-6 * max(1, n_i):
                raise ValueError(
                    f"subset frequency {prob} of {n_i} records is not integral"
                )
            if c_int > 0:
                extras0[mask] = c_int / denom
        base_w0 = 1.0 / denom
        min_size, family = 1, 1 << (k - 1)
        if zero_singleton:
            min_size, family = 2, (1 << (k - 1)) - 1
            extras0.pop(single, None)
        z = base_w0 * family + sum(extras0.values())
        return RowMixture(
            source=source,
            k=k,
            base_weight=base_w0 / z,
            min_size=min_size,
            family_count=family,
            extras=tuple((m, w / z) for m, w in sorted(extras0.items())),
            feasible=True,
        )
    weights = {mask: prob for mask, prob in pairs if prob > 0.0}
    if zero_singleton:
        weights.pop(single, None)
    z = sum(weights.values())
    if z <= 1e-12:
        return RowMixture(source, k, 0.0, 1, 0, (), feasible=False)
    return RowMixture(
        source=source,
        k=k,
        base_weight=0.0,
        min_size=1,
        family_count=0,
        extras=tuple((m, w / z) for m, w in sorted(weights.items())),
        feasible=True,
    )


def _build_program(mixtures, p, p_target, cuts, k):
    a_off: list[int | None] = [None] * k
    extras_meta: list[list[tuple[int, float, list[int], int]]] = []
    n = 0
    for i, mx in enumerate(mixtures):
        if mx.base_weight > 0.0:
            a_off[i] = n
            n += k
        metas = []
        for mask, gamma in mx.extras:
            members = [j for j in range(k) if mask >> j & 1]
            metas.append((mask, gamma, members, n))
            n += len(members)
        extras_meta.append(metas)

    c = np.zeros(n)
    lower = np.zeros(n)
    upper = np.zeros(n)
    for i, mx in enumerate(mixtures):
        o = a_off[i]
        if o is not None:
            c[o + i] = 1.0
            off_cap = mx.base_weight * (1 << (k - 2))
            for j in range(k):
                upper[o + j] = mx.base_total if j == i else off_cap
            # the singleton (if in the family) must ship its weight to i
            lower[o + i] = mx.base_weight * _family_inside(1, mx.min_size)
        for _, gamma, members, o in extras_meta[i]:
            for pos, j in enumerate(members):
                upper[o + pos] = gamma
                if j == i:
                    c[o + pos] = 1.0

    eq = []
    for i, mx in enumerate(mixtures):
        o = a_off[i]
        if o is not None:
            row = np.zeros(n)
            row[o : o + k] = 1.0
            eq.append((row, mx.base_total))
        for _, gamma, members, o in extras_meta[i]:
            row = np.zeros(n)
            row[o : o + len(members)] = 1.0
            eq.append((row, gamma))
    for j in range(k):
        row = np.zeros(n)
        for i, mx in enumerate(mixtures):
            o = a_off[i]
            if o is not None:
                row[o + j] += p[i]
            for mask, _, members, o in extras_meta[i]:
                if mask >> j & 1:
                    row[o + members.index(j)] += p[i]
        eq.append((row, float(p_target[j])))

    ub = []
    for i, per_class in cuts.items():
        o = a_off[i]
        if o is None:
            continue
        for mask, g in per_class.items():
            row = np.zeros(n)
            for j in range(k):
                if mask >> j & 1:
                    row[o + j] = -1.0
            ub.append((row, -g))

    program = lp.LinearProgram(n, c, eq, ub, list(zip(lower, upper)))
    return program, (a_off, extras_meta)


def _with_objective(program: lp.LinearProgram, c: np.ndarray) -> lp.LinearProgram:
    eq = list(zip(program.a_eq, program.b_eq)) if program.n_eq else []
    ub = list(zip(program.a_ub, program.b_ub)) if program.n_ub else []
    bounds = list(zip(program.lower, program.upper))
    return lp.LinearProgram(program.n_vars, c, eq, ub, bounds)


def _violated_cuts(a, mx: RowMixture, existing) -> list[tuple[int, float]]:
    k, i = mx.k, mx.source
    others = sorted((float(a[j]), j) for j in range(k) if j != i)
    found = []
    total = float(a[i])
    mask = 1 << i
    for size in range(2, k):  # size k is the row-sum equality, size 1 a bound
        val, j = others[size - 2]
        total += val
        mask |= 1 << j
        g = mx.base_weight * _family_inside(size, mx.min_size)
        if total < g - _CUT_TOL and mask not in existing:
            found.append((mask, g))
    return found


def synthesize_method4(p, p_target, stats: ReachabilityStats, config=None):
    from .synthesis import (
        SynthesisConfig,
        SynthesisResult,
        _as_probs,
        _finalize,
        variant_label,
    )

    t0 = time.perf_counter()
    cfg = config or SynthesisConfig()
    pv, tv, k = _as_probs(p, p_target)
    if stats.k != k:
        raise ValueError(f"stats built for k={stats.k}, distributions have k={k}")
    if stats.empty_classes:
        raise EmptyClassError(
            f"classes {stats.empty_classes} have no reachability records"
        )
    variant = variant_label(4, cfg)

    mixtures = [
        build_row_mixture(
            stats.subset_rows[i], stats.per_class_n[i], k, i, cfg.laplace, cfg.zero_singleton
        )
        for i in range(k)
    ]
    if not all(mx.feasible for mx in mixtures):
        bad = [i for i, mx in enumerate(mixtures) if not mx.feasible]
        return SynthesisResult(
            method="4",
            variant=variant,
            status=lp.SolveStatus.INFEASIBLE,
            matrix=None,
            objective=None,
            n_variables=0,
            wall_ms=(time.perf_counter() - t0) * 1000.0,
            aux={"reason": f"classes {bad} lost their entire subset law to zeroing"},
        )

    def run_rounds(budget, tilt):
        cuts: dict[int, dict[int, float]] = {i: {} for i in range(k)}
        sol = program = layout = None
        for _ in range(budget):
            program, layout = _build_program(mixtures, pv, tv, cuts, k)
            if tilt is None:
                sol = lp.solve(program)
            else:
                sol = lp.solve(
                    _with_objective(program, np.asarray(program.objective) + tilt)
                )
            if sol.status is not lp.SolveStatus.OPTIMAL:
                # the relaxation only omits valid inequalities: infeasible is final
                return sol, program, layout, cuts, True
            a_off, _ = layout
            fresh = 0
            for i, mx in enumerate(mixtures):
                o = a_off[i]
                if o is None:
                    continue
                for mask, g in _violated_cuts(sol.x[o : o + k], mx, cuts[i]):
                    cuts[i][mask] = g
                    fresh += 1
            if fresh == 0:
                return sol, program, layout, cuts, True
        return sol, program, layout, cuts, False

    sol, program, layout, cuts, done = run_rounds(_PLAIN_ROUNDS, None)
    tilted = False
    if not done:
        # the objective ignores off-diagonal mass, so the optimal face is huge
        # and plain solves can wander between its corners, each violating fresh
        # facets; restart with a fixed tiny tilt pinning one vertex (stale cut
        # rows from the wandering phase would only bloat every later tableau)
        tilt = 1e-8 * np.random.default_rng(0x6D34).random(program.n_vars)
        sol, program, layout, cuts, done = run_rounds(_MAX_CUT_ROUNDS, tilt)
        tilted = True
    if not done:
        raise NumericalFailureError("cut generation did not converge")

    t = None
    aux: dict[str, object] = {
        "n_cuts": sum(len(v) for v in cuts.values()),
        "mixtures": tuple(mixtures),
    }
    if sol.status is lp.SolveStatus.OPTIMAL:
        if tilted:
            # report the unperturbed objective
            sol = replace(
                sol, objective_value=float(np.asarray(program.objective) @ sol.x)
            )
        a_off, extras_meta = layout
        t = np.zeros((k, k))
        a_rows: dict[int, np.ndarray] = {}
        extra_rows: dict[int, list[np.ndarray]] = {}
        for i in range(k):
            o = a_off[i]
            if o is not None:
                a_rows[i] = sol.x[o : o + k].copy()
                t[i] += a_rows[i]
            per = []
            for _, _, members, o in extras_meta[i]:
                vals = sol.x[o : o + len(members)].copy()
                per.append(vals)
                for pos, j in enumerate(members):
                    t[i, j] += vals[pos]
            extra_rows[i] = per
        aux["a"] = a_rows
        aux["extras_x"] = extra_rows
    return _finalize("4", variant, sol, t, pv, tv, program.n_vars, t0, aux)


# ----------------------------------------------------- reconstruction


class _MaxFlow:
    """Dinic's algorithm on float capacities; paths here have length 3."""

    def __init__(self, n: int):
        self.adj: list[list[list]] = [[] for _ in range(n)]

    def add(self, u: int, v: int, cap: float) -> int:
        self.adj[u].append([v, cap, len(self.adj[v])])
        self.adj[v].append([u, 0.0, len(self.adj[u]) - 1])
        return len(self.adj[u]) - 1

    def _bfs(self, s: int, t: int) -> bool:
        self.level = [-1] * len(self.adj)
        self.level[s] = 0
        q = deque([s])
        while q:
            u = q.popleft()
            for v, cap, _ in self.adj[u]:
                if cap > _FLOW_EPS and self.level[v] < 0:
                    self.level[v] = self.level[u] + 1
                    q.append(v)
        return self.level[t] >= 0

    def _dfs(self, u: int, t: int, f: float) -> float:
        if u == t:
            return f
        while self.it[u] < len(self.adj[u]):
            edge = self.adj[u][self.it[u]]
            v, cap, rev = edge
            if cap > _FLOW_EPS and self.level[v] == self.level[u] + 1:
                pushed = self._dfs(v, t, min(f, cap))
                if pushed > _FLOW_EPS:
                    edge[1] -= pushed
                    self.adj[v][rev][1] += pushed
                    return pushed
            self.it[u] += 1
        return 0.0

    def run(self, s: int, t: int) -> float:
        total = 0.0
        while self._bfs(s, t):
            self.it = [0] * len(self.adj)
            while True:
                f = self._dfs(s, t, np.inf)
                if f <= _FLOW_EPS:
                    break
                total += f
        return total


def _route_base(a: np.ndarray, mx: RowMixture) -> dict[int, np.ndarray]:
    """Split the aggregated base row back into one distribution per family
    subset by max-flow; feasible whenever the aggregation cuts hold."""
    masks = list(mx.family_masks())
    k = mx.k
    src, sink = 0, 1 + len(masks) + k
    flow = _MaxFlow(sink + 1)
    class_node = lambda j: 1 + len(masks) + j
    sub_edges: list[list[tuple[int, int]]] = []
    for s_idx, mask in enumerate(masks):
        flow.add(src, 1 + s_idx, mx.base_weight)
        edges = []
        for j in range(k):
            if mask >> j & 1:
                edges.append((j, flow.add(1 + s_idx, class_node(j), mx.base_weight)))
        sub_edges.append(edges)
    for j in range(k):
        flow.add(class_node(j), sink, max(0.0, float(a[j])))
    pushed = flow.run(src, sink)
    if pushed < mx.base_total - 1e-5:
        raise NumericalFailureError(
            f"base routing shipped {pushed:.9f} of {mx.base_total:.9f}"
        )
    out: dict[int, np.ndarray] = {}
    for s_idx, mask in enumerate(masks):
        v = np.zeros(k)
        for j, e_idx in sub_edges[s_idx]:
            sent = mx.base_weight - flow.adj[1 + s_idx][e_idx][1]
            v[j] = max(0.0, sent)
        total = v.sum()
        if total > 0.0:
            v /= total
        out[mask] = v
    return out


def subset_distributions(result) -> list[dict[int, np.ndarray]]:
    """Recover per-subset conditional distributions from an optimal method-4
    result: one dict per class mapping subset mask to a distribution over
    classes (supported on the subset)."""
    if not result.ok or "mixtures" not in result.aux:
        raise ValueError("subset distributions require an optimal method-4 result")
    mixtures: tuple[RowMixture, ...] = result.aux["mixtures"]
    a_rows = result.aux["a"]
    extra_rows = result.aux["extras_x"]
    k = mixtures[0].k
    out: list[dict[int, np.ndarray]] = []
    for i, mx in enumerate(mixtures):
        per: dict[int, np.ndarray] = {}
        base: dict[int, np.ndarray] = {}
        if mx.base_weight > 0.0:
            base = _route_base(a_rows[i], mx)
            for mask, v in base.items():
                per[mask] = v
        for (mask, gamma), vals in zip(mx.extras, extra_rows[i]):
            members = [j for j in range(k) if mask >> j & 1]
            v = np.zeros(k)
            for pos, j in enumerate(members):
                v[j] = max(0.0, float(vals[pos]))
            if v.sum() > 0.0:
                v /= v.sum()
            if mask in base:
                w = mx.base_weight + gamma
                per[mask] = (mx.base_weight * base[mask] + gamma * v) / w
            else:
                per[mask] = v
        out.append(per)
    return out


def mixture_weights(mx: RowMixture) -> dict[int, float]:
    """Total mixture weight per subset (base plus extras), summing to 1."""
    weights: dict[int, float] = {}
    if mx.base_weight > 0.0:
        for mask in mx.family_masks():
            weights[mask] = mx.base_weight
    for mask, gamma in mx.extras:
        weights[mask] = weights.get(mask, 0.0) + gamma
    return dict(sorted(weights.items()))
