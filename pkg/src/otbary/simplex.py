"""Self-contained sparse revised-simplex solver for equality-form LPs.

Solves ``min c.x  s.t.  A x = b, x >= 0`` with a two-phase revised simplex.
The basis inverse is kept dense and updated by rank-one pivots with periodic
refactorization. Pricing is Dantzig (most negative reduced cost) with ties
broken toward the smallest column index; after a long run of degenerate
pivots the solver switches to Bland's rule until it makes progress again,
which keeps termination guaranteed without giving up pivot quality.

No external LP library is used anywhere in this module.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
ITERATION_LIMIT = "iteration_limit"

_PIVOT_TOL = 1e-10
_DEGENERATE_LIMIT = 200
_REFACTOR_EVERY = 1000


@dataclass(frozen=True)
class LpProblem:
    """Standard-form LP ``min c.x, A x = b, x >= 0`` with A stored as CSC."""

    c: np.ndarray
    b: np.ndarray
    indptr: np.ndarray
    rows: np.ndarray
    vals: np.ndarray

    @property
    def nrows(self) -> int:
        return self.b.shape[0]

    @property
    def ncols(self) -> int:
        return self.c.shape[0]

    @classmethod
    def from_triplets(cls, nrows, ncols, row_idx, col_idx, values, c, b) -> "LpProblem":
        row_idx = np.asarray(row_idx, dtype=np.int64)
        col_idx = np.asarray(col_idx, dtype=np.int64)
        values = np.asarray(values, dtype=np.float64)
        c = np.ascontiguousarray(c, dtype=np.float64)
        b = np.ascontiguousarray(b, dtype=np.float64)
        if not (row_idx.shape == col_idx.shape == values.shape):
            raise ValueError("triplet arrays must have equal length")
        if c.shape != (ncols,) or b.shape != (nrows,):
            raise ValueError("inconsistent dimensions")
        if not (np.all(np.isfinite(values)) and np.all(np.isfinite(c)) and np.all(np.isfinite(b))):
            raise ValueError("finite entries only")
        if row_idx.size and (row_idx.min() < 0 or row_idx.max() >= nrows):
            raise ValueError("row index out of range")
        if col_idx.size and (col_idx.min() < 0 or col_idx.max() >= ncols):
            raise ValueError("column index out of range")
        order = np.lexsort((row_idx, col_idx))
        row_idx, col_idx, values = row_idx[order], col_idx[order], values[order]
        counts = np.bincount(col_idx, minlength=ncols)
        indptr = np.zeros(ncols + 1, dtype=np.int64)
        np.cumsum(counts, out=indptr[1:])
        rowcount = np.bincount(row_idx, minlength=nrows) if row_idx.size else np.zeros(nrows)
        if np.any(rowcount == 0):
            raise ValueError("every row of A must be nonempty")
        return cls(c, b, indptr, row_idx, values)

    @classmethod
    def from_dense(cls, A, c, b) -> "LpProblem":
        A = np.asarray(A, dtype=np.float64)
        rr, cc = np.nonzero(A)
        return cls.from_triplets(A.shape[0], A.shape[1], rr, cc, A[rr, cc], c, b)

    def column(self, j: int) -> tuple[np.ndarray, np.ndarray]:
        s, e = self.indptr[j], self.indptr[j + 1]
        return self.rows[s:e], self.vals[s:e]

    def dense(self) -> np.ndarray:
        A = np.zeros((self.nrows, self.ncols))
        for j in range(self.ncols):
            r, v = self.column(j)
            A[r, j] = v
        return A

    def dump_triplets(self, path) -> None:
        """Debug dump of A as 'row col value' text lines."""
        with open(path, "w") as fh:
            for j in range(self.ncols):
                r, v = self.column(j)
                for i, x in zip(r, v):
                    fh.write(f"{i} {j} {float(x)!r}\n")

    def residual(self, x: np.ndarray) -> np.ndarray:
        """A x - b for a candidate primal vector."""
        cols = np.repeat(np.arange(self.ncols), np.diff(self.indptr))
        out = -self.b.copy()
        np.add.at(out, self.rows, self.vals * x[cols])
        return out


@dataclass(frozen=True)
class LpSolution:
    x: np.ndarray
    value: float
    duals: np.ndarray
    status: str
    iterations: int

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


class _Workspace:
    """Mutable solver state for one solve; never shared between solves."""

    def __init__(self, prob: LpProblem, tol: float):
        self.prob = prob
        m, n = prob.nrows, prob.ncols
        self.m, self.n = m, n
        self.sign = np.where(prob.b < 0.0, -1.0, 1.0)
        self.b = prob.b * self.sign
        self.tol = tol
        self.feas_tol = tol * (1.0 + float(np.abs(prob.b).max(initial=0.0)))
        self.basis = np.arange(n, n + m)  # start from the all-artificial basis
        self.binv = np.eye(m)
        self.xb = self.b.copy()
        self.iterations = 0
        self.col_len = np.diff(prob.indptr)
        self.nonempty = self.col_len > 0
        self.starts = prob.indptr[:-1][self.nonempty]
        self.in_basis = np.zeros(n + m, dtype=bool)
        self.in_basis[self.basis] = True

    def col(self, j: int) -> tuple[np.ndarray, np.ndarray]:
        r, v = self.prob.column(j)
        return r, v * self.sign[r]

    def reduced_costs(self, cost: np.ndarray, y: np.ndarray) -> np.ndarray:
        t = self.prob.vals * (y * self.sign)[self.prob.rows]
        aty = np.zeros(self.n)
        if self.starts.size:
            aty[self.nonempty] = np.add.reduceat(t, self.starts)
        return cost - aty

    def ftran(self, j: int) -> np.ndarray:
        r, v = self.col(j)
        return self.binv[:, r] @ v

    def refactor(self) -> None:
        B = np.zeros((self.m, self.m))
        for i, j in enumerate(self.basis):
            if j >= self.n:
                B[j - self.n, i] = 1.0
            else:
                r, v = self.col(j)
                B[r, i] = v
        self.binv = np.linalg.inv(B)
        self.xb = self.binv @ self.b
        np.clip(self.xb, 0.0, None, out=self.xb)

    def pivot(self, j: int, leave: int, d: np.ndarray, theta: float) -> None:
        self.in_basis[self.basis[leave]] = False
        self.in_basis[j] = True
        self.basis[leave] = j
        self.xb -= theta * d
        self.xb[leave] = theta
        np.clip(self.xb, 0.0, None, out=self.xb)
        self.binv[leave] /= d[leave]
        dd = d.copy()
        dd[leave] = 0.0
        self.binv -= np.outer(dd, self.binv[leave])

    def core(self, cost: np.ndarray, artif_cost: float, max_iters: int, expel: bool) -> str:
        """Simplex iterations minimizing cost (artificials priced at artif_cost)."""
        m, n = self.m, self.n
        cost_full = np.concatenate([cost, np.full(m, artif_cost)])
        dj_tol = self.tol * (1.0 + float(np.abs(cost).max(initial=0.0)))
        bland = False
        degenerate_run = 0
        since_refactor = 0
        while True:
            if self.iterations >= max_iters:
                return ITERATION_LIMIT
            y = self.binv.T @ cost_full[self.basis]
            r = self.reduced_costs(cost, y)
            cand = self.nonempty & ~self.in_basis[:n] & (r < -dj_tol)
            if not cand.any():
                if since_refactor == 0:
                    return OPTIMAL
                self.refactor()  # confirm optimality against a fresh factorization
                since_refactor = 0
                continue
            if bland:
                j = int(np.flatnonzero(cand)[0])
            else:
                j = int(np.argmin(np.where(cand, r, np.inf)))
            d = self.ftran(j)
            artif_rows = self.basis >= n
            kick = expel & artif_rows & (d < -_PIVOT_TOL) & (self.xb <= self.feas_tol)
            if kick.any():
                # a zero-valued artificial can leave on a negative pivot;
                # this keeps phase 2 from ever re-growing artificials
                rows = np.flatnonzero(kick)
                leave = int(rows[np.argmin(self.basis[rows])])
                theta = 0.0
            else:
                pos = d > _PIVOT_TOL
                if not pos.any():
                    return UNBOUNDED
                ratios = np.full(m, np.inf)
                ratios[pos] = self.xb[pos] / d[pos]
                theta = float(ratios.min())
                ties = np.flatnonzero(ratios <= theta)
                leave = int(ties[np.argmin(self.basis[ties])])
            if theta <= 1e-12:
                degenerate_run += 1
                if degenerate_run > _DEGENERATE_LIMIT:
                    bland = True
            else:
                degenerate_run = 0
                bland = False
            self.pivot(j, leave, d, theta)
            self.iterations += 1
            since_refactor += 1
            if since_refactor >= _REFACTOR_EVERY:
                self.refactor()
                since_refactor = 0


def solve(problem: LpProblem, max_iters: int | None = None, tol: float = 1e-9) -> LpSolution:
    """Optimal basic solution of ``problem`` or an accurate failure status.

    Deterministic: identical input yields an identical pivot sequence.
    ``max_iters`` defaults to ``50 * (nrows + ncols)``.
    """
    m, n = problem.nrows, problem.ncols
    if max_iters is None:
        max_iters = 50 * (m + n)
    ws = _Workspace(problem, tol)

    if np.any(~ws.nonempty & (problem.c < -tol)):
        # an empty column with negative cost grows without bound
        return LpSolution(np.zeros(n), -np.inf, np.zeros(m), UNBOUNDED, 0)

    status = ws.core(np.zeros(n), 1.0, max_iters, expel=False)
    if status == ITERATION_LIMIT:
        return _extract(ws, problem, ITERATION_LIMIT)
    ws.refactor()
    if float(ws.xb[ws.basis >= n].sum(initial=0.0)) > ws.feas_tol:
        return _extract(ws, problem, INFEASIBLE)

    status = ws.core(problem.c, 0.0, max_iters, expel=True)
    if status == UNBOUNDED:
        return _extract(ws, problem, UNBOUNDED)
    ws.refactor()
    return _extract(ws, problem, OPTIMAL if status == OPTIMAL else ITERATION_LIMIT)


def _extract(ws: _Workspace, problem: LpProblem, status: str) -> LpSolution:
    n = ws.n
    x = np.zeros(n)
    orig = ws.basis < n
    x[ws.basis[orig]] = ws.xb[orig]
    cost_full = np.concatenate([problem.c, np.zeros(ws.m)])
    y = (ws.binv.T @ cost_full[ws.basis]) * ws.sign
    value = float(problem.c @ x)
    return LpSolution(x, value, y, status, ws.iterations)
