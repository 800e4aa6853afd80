"""Recover the barycenter density from optimal dual potentials.

A converged dual state only describes the barycenter implicitly. Mass may
flow from atom j of population i to grid point k only when that triple is
within ``epsilon`` of the atom's optimal shifted cost; on that sparse active
set the transported fraction table f is found by minimizing the pairwise
mismatch of the transported images

    sum_{l,m} sum_k ( sum_j f_l^{j,k} w_l^j - sum_j f_m^{j,k} w_m^j )^2

over the product of per-atom probability simplices, by projected gradient
with exact simplex projections. All populations then carry (nearly) the
same image; their average is the recovered barycenter.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kdtree
from ._jit import njit
from .dual import DualState
from .measures import DiscreteMeasure, TransportPlan
from .lp_barycenter import BarycenterResult

_NAIVE_LIMIT = 4_000_000


@dataclass(frozen=True)
class ActiveSet:
    """Triples (i, j, k) allowed to carry mass, grouped per population.

    ``row_ptr[i]`` delimits the per-atom segments of ``k_idx[i]``; every atom
    has at least one active grid point (its arg-min).
    """

    eps: float
    row_ptr: tuple  # per population: (N_i + 1,) offsets into k_idx
    k_idx: tuple  # per population: active grid indices, atom-major

    @property
    def n_pop(self) -> int:
        return len(self.row_ptr)

    @property
    def triples(self):
        """Per population: (atom index, grid index) arrays over the set."""
        out = []
        for ptr, kk in zip(self.row_ptr, self.k_idx):
            jj = np.repeat(np.arange(ptr.shape[0] - 1), np.diff(ptr))
            out.append((jj, kk))
        return out

    def size(self) -> int:
        return int(sum(k.shape[0] for k in self.k_idx))


def active_set(state: DualState, epsilon: float = 1e-5) -> ActiveSet:
    """All triples within ``epsilon`` of each atom's optimal shifted cost.

    Uses a kd-tree ball pass per population on large problems and a direct
    table scan on small ones; both evaluate the same formula.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    data = state.data
    table = state.potentials.table()
    row_ptrs, k_idxs = [], []
    for i in range(data.n_pop):
        ys = data.ys[i]
        bounds = state.mins[i] + epsilon
        halflam = 0.5 * data.lambdas[i]
        if ys.shape[0] * data.n_grid <= _NAIVE_LIMIT:
            diff = ys[:, None, :] - data.zpts[None, :, :]
            vals = halflam * (diff * diff).sum(axis=2) - table[i][None, :]
            hits = vals <= bounds[:, None]
            counts = hits.sum(axis=1)
            kk = np.nonzero(hits)[1]
        else:
            index = kdtree.lift(data.zpts, table[i], data.lambdas[i])
            rows = [index.active_below(y, b) for y, b in zip(ys, bounds)]
            counts = np.array([r.shape[0] for r in rows])
            kk = np.concatenate(rows)
        ptr = np.zeros(ys.shape[0] + 1, dtype=np.int64)
        np.cumsum(counts, out=ptr[1:])
        row_ptrs.append(ptr)
        k_idxs.append(kk.astype(np.int64))
    return ActiveSet(float(epsilon), tuple(row_ptrs), tuple(k_idxs))


@dataclass(frozen=True)
class TransportFractions:
    """Fractions f in [0,1] on the active set; each atom's fractions sum to 1."""

    row_ptr: tuple
    k_idx: tuple
    f: tuple

    def plan(self, i: int, n_grid: int, weights: np.ndarray, scale: float) -> TransportPlan:
        ptr = self.row_ptr[i]
        jj = np.repeat(np.arange(ptr.shape[0] - 1), np.diff(ptr))
        mass = scale * weights[jj] * self.f[i]
        keep = mass > 0
        return TransportPlan((ptr.shape[0] - 1, n_grid), jj[keep], self.k_idx[i][keep], mass[keep])


@njit(cache=True)
def _project_segments(vals, row_ptr):
    # euclidean projection of every segment onto its probability simplex
    for s in range(row_ptr.shape[0] - 1):
        a, b = row_ptr[s], row_ptr[s + 1]
        n = b - a
        if n == 1:
            vals[a] = 1.0
            continue
        seg = np.empty(n)
        for t in range(n):
            seg[t] = vals[a + t]
        seg = np.sort(seg)[::-1]
        cum = 0.0
        theta = 0.0
        for t in range(n):
            cum += seg[t]
            cand = (cum - 1.0) / (t + 1)
            if seg[t] - cand > 0.0:
                theta = cand
            else:
                break
        for t in range(n):
            v = vals[a + t] - theta
            vals[a + t] = v if v > 0.0 else 0.0
    return vals


def recover(
    active: ActiveSet,
    measures,
    state: DualState,
    max_iters: int = 2000,
    tol: float = 1e-14,
) -> tuple[TransportFractions, BarycenterResult, float]:
    """Least-squares transported-image matching over the active set.

    Returns the fraction table, the recovered barycenter (images averaged
    over populations, renormalized) and the worst quadratic mismatch term.
    The objective never increases across iterations; on hitting
    ``max_iters`` the incumbent is returned and the residual tells the
    caller how converged it is.
    """
    data = state.data
    n_pop = data.n_pop
    if len(measures) != n_pop:
        raise ValueError("one measure per population required")
    for mu, ys in zip(measures, data.ys):
        if not isinstance(mu, DiscreteMeasure) or mu.n_atoms != ys.shape[0]:
            raise ValueError("measures do not match the dual state")
    if any(np.diff(ptr).min(initial=1) < 1 for ptr in active.row_ptr):
        raise ValueError("every atom needs at least one active grid point")

    # compact the union of active grid indices
    union = np.unique(np.concatenate([kk for kk in active.k_idx]))
    ncol = union.shape[0]
    col_of = {int(k): c for c, k in enumerate(union)}
    ccols = [np.array([col_of[int(k)] for k in kk], dtype=np.int64) for kk in active.k_idx]
    segs = []
    wnnz = []
    for i in range(n_pop):
        ptr = active.row_ptr[i]
        jj = np.repeat(np.arange(ptr.shape[0] - 1), np.diff(ptr))
        segs.append(jj)
        wnnz.append(measures[i].weights[jj])

    # start from the arg-min assignment: all of each atom's mass on its best k
    fs = []
    for i in range(n_pop):
        ptr = active.row_ptr[i]
        f = np.zeros(active.k_idx[i].shape[0])
        for j in range(ptr.shape[0] - 1):
            a, b = ptr[j], ptr[j + 1]
            inseg = np.flatnonzero(active.k_idx[i][a:b] == state.assignments[i][j])
            f[a + (inseg[0] if inseg.size else 0)] = 1.0
        fs.append(f)

    def images(fs_):
        rho = np.zeros((n_pop, ncol))
        for i in range(n_pop):
            rho[i] = np.bincount(ccols[i], weights=fs_[i] * wnnz[i], minlength=ncol)
        return rho

    def objective(rho):
        s = rho.sum(axis=0)
        return 2.0 * n_pop * float((rho * rho).sum()) - 2.0 * float(s @ s)

    def gradient(rho):
        excess = 4.0 * (n_pop * rho - rho.sum(axis=0)[None, :])
        return [wnnz[i] * excess[i][ccols[i]] for i in range(n_pop)]

    # Lipschitz constant of the gradient by power iteration on its linear map
    v = [np.cos(np.arange(f.shape[0]) * 0.7) + 1.1 for f in fs]
    lip = 1.0
    for _ in range(20):
        nv = np.sqrt(sum(float(x @ x) for x in v))
        if nv == 0.0:
            break
        v = [x / nv for x in v]
        v = gradient(images(v))
        lip = np.sqrt(sum(float(x @ x) for x in v))
    step = 1.0 / max(lip, 1e-30)

    rho = images(fs)
    val = objective(rho)
    for _ in range(max_iters):
        grads = gradient(rho)
        trial_step = step
        for _ in range(40):
            trial = [
                _project_segments(fs[i] - trial_step * grads[i], active.row_ptr[i])
                for i in range(n_pop)
            ]
            trial_rho = images(trial)
            trial_val = objective(trial_rho)
            if trial_val <= val:
                break
            trial_step *= 0.5
        if trial_val > val:
            break
        moved = sum(float(np.abs(a - b).max(initial=0.0)) for a, b in zip(trial, fs))
        fs, rho = trial, trial_rho
        improvement = val - trial_val
        val = trial_val
        if improvement <= tol * (1.0 + abs(val)) and moved <= 1e-12:
            break

    fractions = TransportFractions(active.row_ptr, active.k_idx, tuple(fs))
    residual = _max_quadratic_term(rho)
    nu_weights = (data.cn[:, None] * rho).sum(axis=0) / n_pop
    keep = nu_weights > 0
    nu = DiscreteMeasure(data.zpts[union[keep]], nu_weights[keep] / nu_weights[keep].sum())
    plans = []
    pop_costs = []
    value = 0.0
    for i in range(n_pop):
        plan = fractions.plan(i, data.n_grid, measures[i].weights, data.cn[i])
        plans.append(plan)
        y = data.ys[i][plan.j]
        z = data.zpts[plan.k]
        cost = 0.5 * data.lambdas[i] * ((y - z) ** 2).sum(axis=1)
        pc = float(cost @ plan.mass)
        pop_costs.append(pc)
        value += pc
    result = BarycenterResult(
        nu, union[keep], plans, value, np.asarray(pop_costs), data.zpts, None
    )
    return fractions, result, residual


def _max_quadratic_term(rho: np.ndarray) -> float:
    worst = 0.0
    n_pop = rho.shape[0]
    for l in range(n_pop):
        for m in range(l + 1, n_pop):
            d = rho[l] - rho[m]
            worst = max(worst, float((d * d).max(initial=0.0)))
    return worst
