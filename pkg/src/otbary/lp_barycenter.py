"""Coupling LP for generalized barycenters and matching for teams.

One transport plan per population shares a common (unknown) marginal on the
quality grid. The LP minimizes the summed transport costs subject to the
fixed atom marginals and the equality of all grid marginals; its size grows
linearly with the number of populations. A brute-force multi-marginal
formulation of the same optimum is provided as a cross-check oracle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import simplex
from .measures import CostSpec, DiscreteMeasure, Grid, SolverError, TransportPlan, ot_cost

ENUMERATION_BOUND = 10**6


@dataclass(frozen=True)
class BarycenterResult:
    """Common grid marginal, per-population plans and the optimal objective."""

    nu: DiscreteMeasure
    nu_index: np.ndarray
    plans: list[TransportPlan]
    value: float
    population_costs: np.ndarray
    zgrid: np.ndarray
    grid: Grid | None = None

    @property
    def support_points(self) -> np.ndarray:
        return self.zgrid[self.nu_index]


def _as_points(zgrid) -> tuple[np.ndarray, Grid | None]:
    if isinstance(zgrid, Grid):
        return zgrid.centers(), zgrid
    pts = np.atleast_2d(np.asarray(zgrid, dtype=np.float64))
    return pts, None


def _check_inputs(measures, costs, zpts):
    if len(measures) == 0 or len(measures) != len(costs):
        raise ValueError("need one cost per measure and at least one measure")
    if zpts.shape[0] == 0:
        raise ValueError("empty grid")
    for mu in measures:
        if not mu.is_normalized(1e-9):
            raise ValueError("measures must be normalized")
        if mu.points.shape[1] != zpts.shape[1]:
            raise ValueError("measure and grid dimension mismatch")


def build_dlp(measures, costs, zgrid) -> simplex.LpProblem:
    """Assemble the discrete coupling LP over all plans gamma_i.

    Variables are ordered population-major as gamma[i, j, k] -> offset_i +
    j * n_grid + k. Constraints are the atom marginals of every plan plus,
    for each population after the first, the equality of its grid marginal
    with population 0's; one grid-equality row per block is dropped as
    redundant so the matrix has full row rank.
    """
    zpts, _ = _as_points(zgrid)
    _check_inputs(measures, costs, zpts)
    nI = len(measures)
    M = zpts.shape[0]
    sizes = [mu.n_atoms for mu in measures]
    var_offset = np.concatenate([[0], np.cumsum([n * M for n in sizes])])
    nvars = int(var_offset[-1])
    row_offset = np.concatenate([[0], np.cumsum(sizes)])
    n_atom_rows = int(row_offset[-1])

    rows, cols, vals = [], [], []
    c = np.empty(nvars)
    for i, (mu, spec) in enumerate(zip(measures, costs)):
        n = sizes[i]
        c[var_offset[i] : var_offset[i + 1]] = spec.pairwise(mu.points, zpts).ravel()
        var = var_offset[i] + np.arange(n * M)
        # atom marginal rows: sum_k gamma[i,j,k] = mu_i^j
        rows.append(row_offset[i] + np.arange(n * M) // M)
        cols.append(var)
        vals.append(np.ones(n * M))
    eq_rows = M - 1  # last grid point's equality dropped per block
    for i in range(1, nI):
        base = n_atom_rows + (i - 1) * eq_rows
        for pop, sgn in ((0, 1.0), (i, -1.0)):
            n = sizes[pop]
            var = var_offset[pop] + np.arange(n * M)
            k = np.arange(n * M) % M
            keep = k < eq_rows
            rows.append(base + k[keep])
            cols.append(var[keep])
            vals.append(np.full(int(keep.sum()), sgn))
    b = np.concatenate([np.concatenate([mu.weights for mu in measures]), np.zeros((nI - 1) * eq_rows)])
    return simplex.LpProblem.from_triplets(
        n_atom_rows + (nI - 1) * eq_rows,
        nvars,
        np.concatenate(rows),
        np.concatenate(cols),
        np.concatenate(vals),
        c,
        b,
    )


def _slice_cost(spec: CostSpec, col_idx: np.ndarray) -> CostSpec:
    if spec.kind == "tabulated":
        return CostSpec(kind="tabulated", lam=spec.lam, table=spec.table[:, col_idx])
    return spec


def solve_barycenter(
    measures,
    costs,
    zgrid,
    max_iters: int | None = None,
    tol: float = 1e-9,
    verify: bool = True,
) -> BarycenterResult:
    """Solve the coupling LP; the returned plans are per-population optimal.

    With ``verify`` (the default), each plan's cost is checked against an
    independent fixed-marginal transport solve to within 1e-7; large runs may
    disable this to skip the redundant solves.
    """
    zpts, grid = _as_points(zgrid)
    _check_inputs(measures, costs, zpts)
    prob = build_dlp(measures, costs, zgrid)
    sol = simplex.solve(prob, max_iters=max_iters, tol=tol)
    if not sol.optimal:
        raise SolverError(
            f"barycenter LP ended with status {sol.status} after {sol.iterations} iterations"
        )
    M = zpts.shape[0]
    plans = []
    pop_costs = []
    offset = 0
    mass_tol = 1e-13  # drops basic variables stuck at rounding-level values
    for mu, spec in zip(measures, costs):
        n = mu.n_atoms
        x = sol.x[offset : offset + n * M].reshape(n, M)
        offset += n * M
        jj, kk = np.nonzero(x > mass_tol)
        plan = TransportPlan((n, M), jj, kk, x[jj, kk])
        plans.append(plan)
        pop_costs.append(plan.cost_against(spec.pairwise(mu.points, zpts)))
    colsum = plans[0].col_marginal()
    nu_index = np.flatnonzero(colsum > mass_tol)
    nu = DiscreteMeasure(zpts[nu_index], colsum[nu_index] / colsum[nu_index].sum())
    result = BarycenterResult(
        nu, nu_index, plans, sol.value, np.asarray(pop_costs), zpts, grid
    )
    if verify:
        _verify_population_optimality(measures, costs, result)
    return result


def _verify_population_optimality(measures, costs, result: BarycenterResult, tol: float = 1e-7):
    for i, (mu, spec) in enumerate(zip(measures, costs)):
        sliced = _slice_cost(spec, result.nu_index)
        opt, _ = ot_cost(mu, result.nu, sliced)
        got = result.population_costs[i]
        if abs(got - opt) > tol * (1.0 + abs(opt)):
            raise SolverError(
                f"plan {i} is not optimal for its own marginal: {got} vs {opt}"
            )


def multimarginal_oracle(measures, costs, zgrid) -> float:
    """Optimal value via the multi-marginal formulation (exponential size).

    Enumerates the tuple cost ``c(x) = min_k sum_i c_i(x_i, z_k)`` and solves
    the multi-marginal LP; its value must match ``solve_barycenter``.
    """
    zpts, _ = _as_points(zgrid)
    _check_inputs(measures, costs, zpts)
    sizes = [mu.n_atoms for mu in measures]
    ntup = int(np.prod(sizes))
    if ntup > ENUMERATION_BOUND:
        raise ValueError(f"enumeration bound exceeded: {ntup} tuples")
    nI = len(measures)
    tables = [spec.pairwise(mu.points, zpts) for mu, spec in zip(measures, costs)]

    # tuple index decodes population-major: t = ((j_0 * N_1 + j_1) * N_2 + ...)
    tuple_cost = np.empty(ntup)
    step = max(1, int(2e6) // max(1, zpts.shape[0]))
    for s in range(0, ntup, step):
        t = np.arange(s, min(s + step, ntup))
        acc = np.zeros((t.shape[0], zpts.shape[0]))
        rem = t
        for i in range(nI - 1, -1, -1):
            ji = rem % sizes[i]
            rem = rem // sizes[i]
            acc += tables[i][ji]
        tuple_cost[s : s + step] = acc.min(axis=1)

    rows, cols, vals, b = [], [], [], []
    row = 0
    t = np.arange(ntup)
    rem = t.copy()
    digits = []
    for i in range(nI - 1, -1, -1):
        digits.append(rem % sizes[i])
        rem = rem // sizes[i]
    digits = digits[::-1]  # digits[i][t] = j_i of tuple t
    for i, mu in enumerate(measures):
        nj = sizes[i] if i == 0 else sizes[i] - 1  # drop one redundant row per later block
        keep = digits[i] < nj
        rows.append(row + digits[i][keep])
        cols.append(t[keep])
        vals.append(np.ones(int(keep.sum())))
        b.append(mu.weights[:nj])
        row += nj
    prob = simplex.LpProblem.from_triplets(
        row,
        ntup,
        np.concatenate(rows),
        np.concatenate(cols),
        np.concatenate(vals),
        tuple_cost,
        np.concatenate(b),
    )
    sol = simplex.solve(prob)
    if not sol.optimal:
        raise SolverError(
            f"multi-marginal LP ended with status {sol.status} after {sol.iterations} iterations"
        )
    return sol.value


def refine(measures, costs, coarse_result: BarycenterResult, factor: int) -> BarycenterResult:
    """Re-solve on a grid restricted to the coarse support, ``factor`` x finer.

    Fine cells are kept when their coarse cell is within one cell (Chebyshev)
    of a coarse support cell.
    """
    grid = coarse_result.grid
    if grid is None:
        raise ValueError("coarse result does not carry a grid to refine")
    if any(spec.kind == "tabulated" for spec in costs):
        raise ValueError("tabulated costs cannot be re-evaluated on a finer grid")
    factor = int(factor)
    if factor < 1:
        raise ValueError("factor must be >= 1")
    support_cells = np.unique(grid.cell_of(coarse_result.nu.points))
    multi = np.column_stack(np.unravel_index(support_cells, grid.shape))
    offsets = np.stack(
        np.meshgrid(*([np.arange(-1, 2)] * grid.d), indexing="ij"), axis=-1
    ).reshape(-1, grid.d)
    dilated = (multi[:, None, :] + offsets[None, :, :]).reshape(-1, grid.d)
    inside = np.all((dilated >= 0) & (dilated < grid.resolution), axis=1)
    dilated = np.unique(dilated[inside], axis=0)
    if dilated.shape[0] == 0:
        raise ValueError("empty refined grid")

    fine = grid.refine(factor)
    sub = np.stack(
        np.meshgrid(*([np.arange(factor)] * grid.d), indexing="ij"), axis=-1
    ).reshape(-1, grid.d)
    fine_multi = (dilated[:, None, :] * factor + sub[None, :, :]).reshape(-1, grid.d)
    flat = np.ravel_multi_index(tuple(fine_multi.T), fine.shape)
    flat.sort()
    zpts = fine.centers()[flat]
    out = solve_barycenter(measures, costs, zpts, verify=False)
    return BarycenterResult(
        out.nu, out.nu_index, out.plans, out.value, out.population_costs, zpts, fine
    )
