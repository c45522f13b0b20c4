"""Dense two-phase simplex for small linear programs.

minimize    c . x
subject to  A_eq x  = b_eq
            A_ub x <= b_ub
            lo <= x <= hi      (lo finite, hi may be +inf)

Variable bounds are handled implicitly: a nonbasic variable rests at either
bound and the ratio test allows a "bound flip" step, so bounds never become
tableau rows. The tableau keeps the pure basis image of the right-hand side;
basic values are recomputed from the nonbasic-at-upper set each iteration,
which keeps pivoting free of bound bookkeeping.

Pricing is Dantzig (most negative reduced cost, lowest index on ties). After
10*(n+m) degenerate steps the solver switches to Bland's rule, which cannot
cycle. Degenerate and duplicate constraints are tolerated; redundant rows are
dropped at the end of phase 1.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import MalformedProgramError, NumericalFailureError

FEASIBILITY_TOL = 1e-9
OPTIMALITY_TOL = 1e-9
PHASE1_TOL = 1e-7
PIVOT_TOL = 1e-10
_DEGENERATE_STEP = 1e-12
_RESIDUAL_TOL = 1e-7

_LOWER, _UPPER, _BASIC = 0, 1, 2


class SolveStatus(Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


@dataclass(frozen=True, eq=False)
class LinearProgram:
    """Immutable problem statement; rows are validated at construction."""

    n_vars: int
    objective: np.ndarray
    eq_constraints: Sequence[tuple[Sequence[float], float]] = ()
    ub_constraints: Sequence[tuple[Sequence[float], float]] = ()
    bounds: Sequence[tuple[float, float]] | None = None

    def __post_init__(self):
        n = self.n_vars
        if not isinstance(n, int) or n < 1:
            raise MalformedProgramError(f"n_vars must be a positive int, got {n!r}")
        c = np.asarray(self.objective, dtype=float)
        if c.shape != (n,):
            raise MalformedProgramError(f"objective has shape {c.shape}, expected ({n},)")
        if not np.all(np.isfinite(c)):
            raise MalformedProgramError("objective must be finite")

        def pack(constraints, label):
            a = np.zeros((len(constraints), n))
            b = np.zeros(len(constraints))
            for i, (row, rhs) in enumerate(constraints):
                row = np.asarray(row, dtype=float)
                if row.shape != (n,):
                    raise MalformedProgramError(
                        f"{label} row {i} has shape {row.shape}, expected ({n},)"
                    )
                a[i] = row
                b[i] = float(rhs)
            if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
                raise MalformedProgramError(f"{label} constraints must be finite")
            return a, b

        a_eq, b_eq = pack(tuple(self.eq_constraints), "equality")
        a_ub, b_ub = pack(tuple(self.ub_constraints), "inequality")

        if self.bounds is None:
            lo = np.zeros(n)
            hi = np.full(n, np.inf)
        else:
            bounds = list(self.bounds)
            if len(bounds) != n:
                raise MalformedProgramError(f"{len(bounds)} bounds for {n} variables")
            lo = np.array([float(b[0]) for b in bounds])
            hi = np.array([float(b[1]) for b in bounds])
        if not np.all(np.isfinite(lo)):
            raise MalformedProgramError("lower bounds must be finite")
        if np.any(np.isnan(hi)) or np.any(hi < lo):
            raise MalformedProgramError("bounds must satisfy lo <= hi")

        # derived, read-only views used by the solver
        for name, arr in (
            ("objective", c), ("a_eq", a_eq), ("b_eq", b_eq),
            ("a_ub", a_ub), ("b_ub", b_ub), ("lower", lo), ("upper", hi),
        ):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_eq(self) -> int:
        return self.a_eq.shape[0]

    @property
    def n_ub(self) -> int:
        return self.a_ub.shape[0]


@dataclass(frozen=True, eq=False)
class LpSolution:
    status: SolveStatus
    x: np.ndarray | None
    objective_value: float | None


def format_program(lp: LinearProgram) -> str:
    """Human-readable dump for debugging."""
    lines = [f"minimize {lp.objective.tolist()}"]
    for a, b in zip(lp.a_eq, lp.b_eq):
        lines.append(f"  {a.tolist()} == {b}")
    for a, b in zip(lp.a_ub, lp.b_ub):
        lines.append(f"  {a.tolist()} <= {b}")
    lines.append(f"  bounds lo={lp.lower.tolist()} hi={lp.upper.tolist()}")
    return "\n".join(lines)


class _Tableau:
    def __init__(self, lp: LinearProgram):
        n = lp.n_vars
        lo, hi = lp.lower, lp.upper
        shift_eq = lp.b_eq - lp.a_eq @ lo if lp.n_eq else lp.b_eq
        shift_ub = lp.b_ub - lp.a_ub @ lo if lp.n_ub else lp.b_ub

        m = lp.n_eq + lp.n_ub
        n_slack = lp.n_ub
        a = np.zeros((m, n + n_slack))
        b = np.concatenate([shift_eq, shift_ub])
        if lp.n_eq:
            a[: lp.n_eq, :n] = lp.a_eq
        if lp.n_ub:
            a[lp.n_eq :, :n] = lp.a_ub
            a[lp.n_eq :, n : n + n_slack] = np.eye(n_slack)
        neg = b < 0
        a[neg] *= -1.0
        b[neg] = -b[neg]

        # identity basis: the slack where its +1 survived, artificial otherwise
        basis: list[int] = []
        needs_art: list[int] = []
        for i in range(m):
            s = n + (i - lp.n_eq)
            if i >= lp.n_eq and a[i, s] > 0.5:
                basis.append(s)
            else:
                basis.append(-1)
                needs_art.append(i)
        self.art_start = n + n_slack
        total = self.art_start + len(needs_art)
        full = np.zeros((m + 1, total + 1))
        full[:m, : n + n_slack] = a
        full[:m, -1] = b
        for col, i in enumerate(needs_art):
            full[i, self.art_start + col] = 1.0
            basis[i] = self.art_start + col

        self.lp = lp
        self.n = n
        self.T = full
        self.basis = basis
        self.u = np.concatenate([hi - lo, np.full(n_slack + len(needs_art), np.inf)])
        self.status = np.full(total, _LOWER, dtype=np.int8)
        self.status[basis] = _BASIC
        self.degenerate = 0
        self.iterations = 0
        self.bland = False
        size = total + m
        self.bland_after = 10 * size
        self.max_iterations = max(2000, 200 * size)

    @property
    def m(self) -> int:
        return self.T.shape[0] - 1

    def basic_values(self) -> np.ndarray:
        xb = self.T[: self.m, -1].copy()
        upper = np.flatnonzero(self.status == _UPPER)
        if upper.size:
            xb -= self.T[: self.m, upper] @ self.u[upper]
        return xb

    def _pivot(self, r: int, j: int) -> None:
        T = self.T
        piv_row = T[r] / T[r, j]
        col = T[:, j].copy()
        col[r] = 0.0
        T -= np.outer(col, piv_row)
        T[r] = piv_row
        T[:, j] = 0.0
        T[r, j] = 1.0

    def set_objective(self, c_struct: np.ndarray | None, artificial: bool) -> None:
        total = self.T.shape[1] - 1
        c = np.zeros(total + 1)
        if artificial:
            c[self.art_start : total] = 1.0
        else:
            c[: self.n] = c_struct
        self.T[-1] = c
        for r in range(self.m):
            cb = c[self.basis[r]]
            if cb != 0.0:
                self.T[-1] -= cb * self.T[r]

    def run(self) -> str:
        m = self.m
        total = self.T.shape[1] - 1
        while True:
            cbar = self.T[-1, :total]
            eligible = ((self.status == _LOWER) & (self.u > 0) & (cbar < -OPTIMALITY_TOL)) | (
                (self.status == _UPPER) & (cbar > OPTIMALITY_TOL)
            )
            idx = np.flatnonzero(eligible)
            if idx.size == 0:
                return "optimal"
            if self.bland:
                j = int(idx[0])
            else:
                j = int(idx[np.argmax(np.abs(cbar[idx]))])
            sigma = 1.0 if self.status[j] == _LOWER else -1.0
            d = sigma * self.T[:m, j]
            xb = self.basic_values()
            ub_basis = self.u[self.basis]

            pos = d > PIVOT_TOL
            neg = (d < -PIVOT_TOL) & np.isfinite(ub_basis)
            deltas = np.full(m, np.inf)
            deltas[pos] = np.maximum(xb[pos], 0.0) / d[pos]
            deltas[neg] = np.maximum(ub_basis[neg] - xb[neg], 0.0) / -d[neg]
            row_best = float(deltas.min()) if m else np.inf
            self_delta = float(self.u[j])
            step = min(row_best, self_delta)
            if not np.isfinite(step):
                return "unbounded"

            if row_best <= self_delta + 1e-12:
                ties = np.flatnonzero(deltas <= row_best + 1e-12)
                if self.bland:
                    r = int(ties[np.argmin(np.asarray(self.basis)[ties])])
                else:
                    r = int(ties[np.argmax(np.abs(d[ties]))])
                leaving = self.basis[r]
                self._pivot(r, j)
                self.basis[r] = j
                self.status[j] = _BASIC
                self.status[leaving] = _LOWER if pos[r] else _UPPER
            else:
                self.status[j] = _UPPER if self.status[j] == _LOWER else _LOWER

            self.iterations += 1
            if step < _DEGENERATE_STEP:
                self.degenerate += 1
                if self.degenerate >= self.bland_after:
                    self.bland = True
            if self.iterations > self.max_iterations:
                raise NumericalFailureError(
                    f"simplex exceeded {self.max_iterations} iterations"
                )

    def drop_artificials(self) -> None:
        r = 0
        while r < self.m:
            if self.basis[r] < self.art_start:
                r += 1
                continue
            row = self.T[r, : self.art_start]
            cands = np.flatnonzero(np.abs(row) > 1e-8)
            if cands.size:
                c = int(cands[np.argmax(np.abs(row[cands]))])
                leaving = self.basis[r]
                self._pivot(r, c)
                self.basis[r] = c
                self.status[c] = _BASIC
                self.status[leaving] = _LOWER
                r += 1
            else:
                # redundant constraint: remove the row entirely
                self.T = np.delete(self.T, r, axis=0)
                del self.basis[r]
        self.u[self.art_start :] = 0.0

    def extract(self) -> np.ndarray:
        xb = self.basic_values()
        total = self.T.shape[1] - 1
        y = np.zeros(total)
        upper = np.flatnonzero(self.status == _UPPER)
        y[upper] = self.u[upper]
        for r, j in enumerate(self.basis):
            y[j] = xb[r]
        return y[: self.n]


def solve(lp: LinearProgram) -> LpSolution:
    """Solve the program, classifying it as optimal, infeasible or unbounded.

    Raises NumericalFailureError if the pivot sequence cannot be completed
    even after the anti-cycling fallback.
    """
    tab = _Tableau(lp)

    tab.set_objective(None, artificial=True)
    outcome = tab.run()
    if outcome != "optimal":
        raise NumericalFailureError("phase 1 reported an unbounded artificial objective")
    xb = tab.basic_values()
    art_mass = sum(
        max(float(xb[r]), 0.0)
        for r in range(tab.m)
        if tab.basis[r] >= tab.art_start
    )
    if art_mass > PHASE1_TOL:
        return LpSolution(SolveStatus.INFEASIBLE, None, None)
    tab.drop_artificials()

    tab.set_objective(np.asarray(lp.objective, dtype=float), artificial=False)
    outcome = tab.run()
    if outcome == "unbounded":
        return LpSolution(SolveStatus.UNBOUNDED, None, None)

    y = tab.extract()
    x = lp.lower + y
    if np.any(x < lp.lower - 1e-6) or np.any(x > lp.upper + 1e-6):
        raise NumericalFailureError("solution drifted outside variable bounds")
    x = np.clip(x, lp.lower, lp.upper)
    if lp.n_eq and np.max(np.abs(lp.a_eq @ x - lp.b_eq)) > _RESIDUAL_TOL:
        raise NumericalFailureError("equality residual exceeds tolerance after solve")
    if lp.n_ub and np.max(lp.a_ub @ x - lp.b_ub) > _RESIDUAL_TOL:
        raise NumericalFailureError("inequality residual exceeds tolerance after solve")
    x.setflags(write=False)
    return LpSolution(SolveStatus.OPTIMAL, x, float(lp.objective @ x))
