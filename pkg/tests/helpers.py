"""Shared builders and independent oracles for the test suite.

The vertex oracle solves small box-bounded LPs by enumerating candidate
active sets, entirely independent of the package solver's pivoting logic.
"""

from itertools import combinations

import numpy as np

from classdrift import lp
from classdrift.core import (
    ClassSet,
    ReachabilityRecord,
    ReachableSet,
    stats_from_records,
)


def records_from_masks(masks_per_class, k):
    records = []
    rid = 0
    for i, masks in enumerate(masks_per_class):
        for mask in masks:
            records.append(
                ReachabilityRecord(
                    id=str(rid), true_class=i, reachable=ReachableSet(mask=mask, source=i, k=k)
                )
            )
            rid += 1
    return records


def full_reach_stats(k, n_per):
    full = (1 << k) - 1
    records = records_from_masks([[full] * n_per for _ in range(k)], k)
    return stats_from_records(records, ClassSet(k))


def fabricated_full_reach_stats(k, n_per):
    """Equivalent of full_reach_stats without materializing n_per*k records."""
    from classdrift.core import ReachabilityStats

    full = (1 << k) - 1
    return ReachabilityStats(
        k=k,
        counts=tuple(tuple(n_per for _ in range(k)) for _ in range(k)),
        per_class_n=(n_per,) * k,
        subset_rows=tuple(((full, 1.0),) for _ in range(k)),
    )


def self_only_stats(k, n_per):
    records = records_from_masks([[1 << i] * n_per for i in range(k)], k)
    return stats_from_records(records, ClassSet(k))


def vertex_solve(prog, feas_tol=1e-7):
    """Brute-force optimum of a fully box-bounded LinearProgram.

    Every variable has finite bounds, so the feasible region (if non-empty)
    is a polytope and some vertex is optimal; vertices are intersections of
    n active constraints. Returns (status, objective).
    """
    n = prog.n_vars
    rows = []
    rhs = []
    for a, b in zip(prog.a_ub, prog.b_ub):
        rows.append(np.asarray(a, float))
        rhs.append(float(b))
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        rows.append(e.copy())
        rhs.append(float(prog.lower[i]))
        rows.append(e)
        rhs.append(float(prog.upper[i]))
    n_eq = prog.n_eq
    need = n - n_eq
    if need < 0:
        raise ValueError("more equalities than variables; generator should not produce this")

    combos = list(combinations(range(len(rows)), need))
    m = len(combos)
    A = np.empty((m, n, n))
    B = np.empty((m, n))
    if n_eq:
        A[:, :n_eq, :] = prog.a_eq
        B[:, :n_eq] = prog.b_eq
    for idx, combo in enumerate(combos):
        for pos, r in enumerate(combo):
            A[idx, n_eq + pos] = rows[r]
            B[idx, n_eq + pos] = rhs[r]

    with np.errstate(all="ignore"):
        dets = np.abs(np.linalg.det(A))
    keep = dets > 1e-10 * max(1.0, float(np.abs(A).max()) ** n)
    if not keep.any():
        return "infeasible", None
    X = np.linalg.solve(A[keep], B[keep][:, :, None])[:, :, 0]

    feas = np.ones(X.shape[0], dtype=bool)
    feas &= np.all(X >= prog.lower - feas_tol, axis=1)
    feas &= np.all(X <= prog.upper + feas_tol, axis=1)
    if prog.n_ub:
        feas &= np.all(X @ np.asarray(prog.a_ub).T <= np.asarray(prog.b_ub) + feas_tol, axis=1)
    if n_eq:
        feas &= np.all(
            np.abs(X @ np.asarray(prog.a_eq).T - np.asarray(prog.b_eq)) <= feas_tol, axis=1
        )
    if not feas.any():
        return "infeasible", None
    objs = X[feas] @ np.asarray(prog.objective)
    return "optimal", float(objs.min())


def random_box_lp(rng):
    """Random LP on [0,1]^n with a mix of feasible and infeasible draws."""
    n = int(rng.integers(2, 7))
    n_eq = int(rng.integers(0, min(3, n)))
    n_ub = int(rng.integers(0, 7 - n_eq))
    c = rng.normal(size=n)
    x0 = rng.random(n)
    eq = []
    for _ in range(n_eq):
        a = rng.normal(size=n)
        b = float(a @ x0)
        if rng.random() < 0.25:
            b += float(rng.normal()) * 0.5  # often pushes the plane off the box
        eq.append((a, b))
    ub = []
    for _ in range(n_ub):
        a = rng.normal(size=n)
        if rng.random() < 0.7:
            b = float(a @ x0 + rng.random())
        else:
            b = float(a @ x0 - rng.random() * 0.5)
        ub.append((a, b))
    bounds = [(0.0, 1.0)] * n
    return lp.LinearProgram(n, c, eq, ub, bounds)
