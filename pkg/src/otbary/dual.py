"""Nonsmooth concave dual ascent for quadratic-cost barycenters.

The dual objective over potential tables phi (one row per population, zero
column sums) is

    Phi(phi) = sum_i c_i * sum_j w_i^j * min_k { lam_i/2 |y_i^j - z_k|^2 - phi_i^k }

with c_i the per-population normalizer 1/sum_j w_i^j. Phi is piecewise
linear and concave; a supergradient comes from any arg-min selection (we fix
the smallest-k rule). The zero-sum constraint is eliminated by storing the
first I-1 rows and defining the last as minus their sum, so the ascent is
unconstrained. Maximization is L-BFGS with a weak Armijo-Wolfe line search;
stalls flush the memory and restart from the incumbent.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import kdtree
from .measures import DiscreteMeasure, Grid


@dataclass(frozen=True)
class DualPotentials:
    """Potential table with exact zero column sums by construction."""

    free: np.ndarray  # (I-1, Nk); the last row is implied
    n_pop: int

    def __post_init__(self):
        free = np.array(self.free, dtype=np.float64, copy=True)
        if free.ndim != 2 or free.shape[0] != self.n_pop - 1:
            raise ValueError("free storage must hold n_pop - 1 rows")
        free.setflags(write=False)
        object.__setattr__(self, "free", free)

    @classmethod
    def zeros(cls, n_pop: int, n_grid: int) -> "DualPotentials":
        return cls(np.zeros((n_pop - 1, n_grid)), n_pop)

    @classmethod
    def from_table(cls, table) -> "DualPotentials":
        table = np.asarray(table, dtype=np.float64)
        return cls(table[:-1], table.shape[0])

    @property
    def n_grid(self) -> int:
        return self.free.shape[1]

    def table(self) -> np.ndarray:
        """Full I x Nk table; row sums over populations vanish identically."""
        return np.vstack([self.free, -self.free.sum(axis=0)])


@dataclass(frozen=True)
class _DualData:
    """Immutable problem arrays shared by every evaluation."""

    ys: tuple
    ws: tuple
    cn: np.ndarray
    lambdas: np.ndarray
    zpts: np.ndarray

    @property
    def n_pop(self) -> int:
        return len(self.ys)

    @property
    def n_grid(self) -> int:
        return self.zpts.shape[0]


def _dual_data(measures, lambdas, zgrid) -> _DualData:
    zpts = zgrid.centers() if isinstance(zgrid, Grid) else np.atleast_2d(np.asarray(zgrid, float))
    lam = np.asarray(lambdas, dtype=np.float64)
    if len(measures) < 2:
        raise ValueError("need at least two populations")
    if lam.shape[0] != len(measures) or np.any(lam <= 0):
        raise ValueError("one positive weight per measure required")
    ys, ws, cn = [], [], []
    for mu in measures:
        if not isinstance(mu, DiscreteMeasure):
            raise TypeError("measures must be DiscreteMeasure")
        if mu.points.shape[1] != zpts.shape[1]:
            raise ValueError("measure and grid dimension mismatch")
        ys.append(mu.points)
        ws.append(mu.weights)
        cn.append(mu.normalizer)
    return _DualData(tuple(ys), tuple(ws), np.asarray(cn), lam, zpts)


@dataclass(frozen=True)
class DualState:
    """Value, reduced supergradient and arg-min bookkeeping at one table."""

    potentials: DualPotentials
    value: float
    supergrad: np.ndarray  # (I-1, Nk), reduced coordinates
    assignments: tuple  # per population: chosen k per atom (smallest-k ties)
    mins: tuple  # per population: the attained minima per atom
    data: _DualData
    status: str = "evaluated"
    iterations: int = 0

    def grad_inf(self) -> float:
        return float(np.abs(self.supergrad).max(initial=0.0))


def _evaluate(data: _DualData, table: np.ndarray):
    value = 0.0
    full_grad = np.zeros((data.n_pop, data.n_grid))
    assignments = []
    mins = []
    for i in range(data.n_pop):
        index = kdtree.lift(data.zpts, table[i], data.lambdas[i])
        kstar, vals = index.min_potential_batch(data.ys[i])
        value += float(data.cn[i] * (data.ws[i] @ vals))
        np.subtract.at(full_grad[i], kstar, data.cn[i] * data.ws[i])
        assignments.append(kstar)
        mins.append(vals)
    return value, full_grad, tuple(assignments), tuple(mins)


def eval_phi(potentials: DualPotentials, measures, lambdas, zgrid) -> DualState:
    """Evaluate the dual objective, supergradient and arg-min choices.

    Each population's inner minimum is computed through one lifted kd-tree
    per evaluation; values and ties agree exactly with a linear scan.
    """
    data = _dual_data(measures, lambdas, zgrid)
    return _state_for(data, potentials)


def _state_for(data: _DualData, potentials: DualPotentials) -> DualState:
    if potentials.n_pop != data.n_pop or potentials.n_grid != data.n_grid:
        raise ValueError("potential table shape does not match the problem")
    table = potentials.table()
    value, full_grad, assignments, mins = _evaluate(data, table)
    reduced = full_grad[:-1] - full_grad[-1]
    return DualState(potentials, value, reduced, assignments, mins, data)


def supergradient_check(state: DualState, potentials2: DualPotentials, slack: float = 1e-10) -> bool:
    """Concavity certificate: Phi(psi) <= Phi(phi) + g(phi).(psi - phi) + slack."""
    other = _state_for(state.data, potentials2)
    gap = float((state.supergrad * (potentials2.free - state.potentials.free)).sum())
    return other.value <= state.value + gap + slack


def slackness_report(state: DualState, active) -> np.ndarray:
    """Max complementary-slackness residual per population over an active set.

    For every active triple the residual |min_G + phi_i^k - c_i(y_j, z_k)|
    equals the excess of that triple above the atom's minimum, which the
    active-set construction bounds by its epsilon.
    """
    data = state.data
    table = state.potentials.table()
    out = np.zeros(data.n_pop)
    for i, (jj, kk) in enumerate(active.triples):
        y = data.ys[i][jj]
        z = data.zpts[kk]
        cost = 0.5 * data.lambdas[i] * ((y - z) ** 2).sum(axis=1)
        resid = np.abs(state.mins[i][jj] + table[i][kk] - cost)
        out[i] = resid.max(initial=0.0)
    return out


def _weak_wolfe(data, x0, f0, g0, d, c1, c2, max_bisect=20, max_steps=60):
    """Armijo + weak Wolfe line search by expansion and bisection.

    Falls back to the best Armijo point when the curvature condition cannot
    be met within ``max_bisect`` bisections (expected at kinks). Returns
    (alpha, f, g, evals) or None when not even Armijo-small steps improve.
    """
    g0d = float(g0 @ d)
    lo, hi = 0.0, np.inf
    alpha = 1.0
    best = None
    bisections = 0
    evals = 0
    for _ in range(max_steps):
        fx, gx = _fg(data, x0 + alpha * d)
        evals += 1
        if fx > f0 + c1 * alpha * g0d:
            hi = alpha
        else:
            if best is None or fx < best[1]:
                best = (alpha, fx, gx)
            if float(gx @ d) < c2 * g0d:
                lo = alpha
            else:
                return alpha, fx, gx, evals
        if hi < np.inf:
            bisections += 1
            if bisections > max_bisect:
                break
            alpha = 0.5 * (lo + hi)
            if alpha <= 1e-20:
                break
        else:
            alpha = 2.0 * alpha
    if best is not None:
        return best[0], best[1], best[2], evals
    return None


def _fg(data: _DualData, x: np.ndarray):
    """Minimization view: f = -Phi and its (negated, reduced) supergradient."""
    n_free = data.n_pop - 1
    free = x.reshape(n_free, data.n_grid)
    table = np.vstack([free, -free.sum(axis=0)])
    value, full_grad, _, _ = _evaluate(data, table)
    reduced = full_grad[:-1] - full_grad[-1]
    return -value, -reduced.ravel()


def maximize(
    measures,
    lambdas,
    zgrid,
    memory: int = 17,
    max_iters: int = 5000,
    c1: float = 1e-4,
    c2: float = 0.9,
    stall_window: int = 60,
    tol: float = 1e-12,
    log: list | None = None,
) -> DualState:
    """Maximize the dual by L-BFGS ascent from the zero table.

    On stall (relative incumbent improvement below ``tol`` across
    ``stall_window`` iterations) the curvature memory is flushed and the
    ascent restarts from the incumbent; a second consecutive stall without
    improvement terminates. Returns the best state seen, with ``status`` in
    {"optimal", "stalled", "iteration_limit"}; ``log`` (if given) receives
    one (iteration, phi, sup-norm of supergradient, step) row per iteration.
    """
    data = _dual_data(measures, lambdas, zgrid)
    dim = (data.n_pop - 1) * data.n_grid
    x = np.zeros(dim)
    f, g = _fg(data, x)
    best_f, best_x = f, x.copy()
    pairs: list[tuple[np.ndarray, np.ndarray, float]] = []
    history: list[float] = [best_f]
    best_at_last_stall = np.inf
    no_progress_restarts = 0
    step_scale = 0.0  # euclidean length of the last successful move
    fallback_shrink = 1.0
    status = "iteration_limit"
    it = 0
    while it < max_iters:
        gnorm = float(np.abs(g).max(initial=0.0))
        if gnorm == 0.0:
            status = "optimal"
            break
        d = _two_loop(pairs, g)
        if float(g @ d) >= 0.0:  # not a descent direction: drop the memory
            pairs.clear()
            d = -g
        ls = _weak_wolfe(data, x, f, g, d, c1, c2)
        if ls is None and pairs:
            pairs.clear()
            d = -g
            ls = _weak_wolfe(data, x, f, g, d, c1, c2)
        if ls is None:
            # kink without armijo progress: short diminishing supergradient
            # move, scaled to the recent successful step length
            fallback_shrink *= 0.5
            g2 = float(np.linalg.norm(g))
            move = fallback_shrink * max(step_scale, 1e-12) / max(g2, 1e-30)
            x = x + move * (-g)
            f, g = _fg(data, x)
            alpha = move
        else:
            alpha, f_new, g_new, _ = ls
            s = alpha * d
            ynew = g_new - g
            sy = float(s @ ynew)
            if sy > 1e-12 * float(np.linalg.norm(s)) * float(np.linalg.norm(ynew)):
                pairs.append((s, ynew, sy))
                if len(pairs) > memory:
                    pairs.pop(0)
            x = x + s
            f, g = f_new, g_new
            step_scale = float(np.linalg.norm(s))
        if f < best_f:
            best_f, best_x = f, x.copy()
            fallback_shrink = max(fallback_shrink, 0.25)
        it += 1
        if log is not None:
            log.append((it, -f, float(np.abs(g).max(initial=0.0)), alpha))
        history.append(best_f)
        if len(history) > stall_window:
            history.pop(0)
            if history[0] - best_f <= tol * (1.0 + abs(best_f)):
                # incumbent stagnant over the whole window: flush and restart
                if best_at_last_stall - best_f <= tol * (1.0 + abs(best_f)):
                    no_progress_restarts += 1
                else:
                    no_progress_restarts = 0
                if no_progress_restarts >= 2:
                    status = "stalled"
                    break
                best_at_last_stall = best_f
                pairs.clear()
                x = best_x.copy()
                f, g = _fg(data, x)
                history = [best_f]

    free = best_x.reshape(data.n_pop - 1, data.n_grid)
    state = _state_for(data, DualPotentials(free, data.n_pop))
    return replace(state, status=status, iterations=it)


def _two_loop(pairs, g: np.ndarray) -> np.ndarray:
    q = -g.copy()
    if not pairs:
        return q
    alphas = []
    for s, y, sy in reversed(pairs):
        a = float(s @ q) / sy
        alphas.append(a)
        q -= a * y
    s, y, sy = pairs[-1]
    q *= sy / float(y @ y)
    for (s, y, sy), a in zip(pairs, reversed(alphas)):
        b = float(y @ q) / sy
        q += (a - b) * s
    return q
