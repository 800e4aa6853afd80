"""Discrete measures, grid quantization, cost evaluation, and exact two-marginal OT.

All types are immutable after construction and every operation is pure, so
they are safe to share between threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import simplex


class EmptyMeasureError(ValueError):
    pass


def _frozen_array(a, dtype=np.float64, ndim=None):
    arr = np.array(a, dtype=dtype, copy=True)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"expected {ndim}-d array, got {arr.ndim}-d")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class DiscreteMeasure:
    """Weighted point cloud in R^d (d in {1,2,3}).

    Weights may carry any positive total mass; ``normalize`` rescales to a
    probability measure and ``normalizer`` is the scale factor that does so.
    """

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        w = np.asarray(self.weights, dtype=np.float64).ravel()
        if pts.shape[0] != w.shape[0]:
            raise ValueError("points and weights must have the same length")
        if pts.shape[1] not in (1, 2, 3):
            raise ValueError("dimension must be 1, 2 or 3")
        if not np.all(np.isfinite(pts)) or not np.all(np.isfinite(w)):
            raise ValueError("finite coordinates and weights only")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        pts = pts.copy()
        pts.setflags(write=False)
        w = w.copy()
        w.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @property
    def d(self) -> int:
        return self.points.shape[1]

    @property
    def n_atoms(self) -> int:
        return self.points.shape[0]

    @property
    def mass(self) -> float:
        return float(self.weights.sum())

    @property
    def normalizer(self) -> float:
        """The constant that rescales the raw weights to total mass one."""
        m = self.mass
        if m <= 0:
            raise EmptyMeasureError("empty measure")
        return 1.0 / m

    def is_normalized(self, tol: float = 1e-12) -> bool:
        return abs(self.mass - 1.0) <= tol

    def normalize(self) -> "DiscreteMeasure":
        return DiscreteMeasure(self.points, self.weights * self.normalizer)

    def dedupe(self) -> "DiscreteMeasure":
        """Merge atoms with identical coordinates (masses added)."""
        uniq, inverse = np.unique(self.points, axis=0, return_inverse=True)
        w = np.bincount(inverse.ravel(), weights=self.weights, minlength=uniq.shape[0])
        return DiscreteMeasure(uniq, w)

    def mean(self) -> np.ndarray:
        return (self.weights / self.mass) @ self.points


@dataclass(frozen=True)
class CostSpec:
    """Per-population cost c(x, z).

    kind "power":     lam * |x-z|**p   (or lam/2 * |x-z|**2 when half=True,
                      the convention the quadratic dual path uses)
    kind "bilinear":  lam * x.M.z for a coefficient matrix M
    kind "tabulated": a dense table indexed by (atom, grid point)
    """

    kind: str = "power"
    p: float = 2.0
    lam: float = 1.0
    half: bool = False
    matrix: np.ndarray | None = None
    table: np.ndarray | None = None
    lipschitz: float | None = None

    def __post_init__(self):
        if self.kind not in ("power", "bilinear", "tabulated"):
            raise ValueError(f"unknown cost kind {self.kind!r}")
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if self.kind == "power":
            if not self.p >= 1:
                raise ValueError("power cost needs p >= 1")
            if self.half and self.p != 2:
                raise ValueError("the half convention applies to the quadratic cost only")
        if self.kind == "bilinear":
            if self.matrix is None:
                raise ValueError("bilinear cost needs a coefficient matrix")
            object.__setattr__(self, "matrix", _frozen_array(self.matrix, ndim=2))
        if self.kind == "tabulated":
            if self.table is None:
                raise ValueError("tabulated cost needs a table")
            object.__setattr__(self, "table", _frozen_array(self.table, ndim=2))

    @property
    def scale(self) -> float:
        """Multiplier in front of |x-z|**p for power costs."""
        return 0.5 * self.lam if self.half else self.lam

    def pairwise(self, X, Z) -> np.ndarray:
        """Dense cost matrix over atoms X (N,d) and grid points Z (M,d)."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
        if self.kind == "tabulated":
            if self.table.shape != (X.shape[0], Z.shape[0]):
                raise ValueError("tabulated cost has wrong shape for these supports")
            return np.array(self.table)
        if self.kind == "bilinear":
            return self.lam * (X @ self.matrix @ Z.T)
        # direct differences (blocked): exact zeros on coincident points,
        # unlike the gemm expansion whose roundoff sqrt(eps) would pollute p=1
        out = np.empty((X.shape[0], Z.shape[0]))
        step = max(1, int(4e6) // max(1, Z.shape[0]))
        for s in range(0, X.shape[0], step):
            d2 = ((X[s : s + step, None, :] - Z[None, :, :]) ** 2).sum(axis=2)
            if self.p == 2:
                out[s : s + step] = self.scale * d2
            else:
                out[s : s + step] = self.scale * d2 ** (self.p / 2.0)
        return out

    def power_lipschitz(self, diameter: float) -> "CostSpec":
        """Attach the Lipschitz constant of a power cost on a box of given diameter."""
        if self.kind != "power":
            raise ValueError("only power costs have an automatic Lipschitz constant")
        lip = self.scale * self.p * diameter ** (self.p - 1.0)
        return replace(self, lipschitz=float(lip))


@dataclass(frozen=True)
class Grid:
    """Axis-aligned box partitioned into equal cells, centers in row-major order."""

    lower: np.ndarray
    upper: np.ndarray
    resolution: np.ndarray = field(default_factory=lambda: np.array([1]))

    def __post_init__(self):
        lo = _frozen_array(np.atleast_1d(self.lower), ndim=1)
        hi = _frozen_array(np.atleast_1d(self.upper), ndim=1)
        res = np.atleast_1d(np.asarray(self.resolution, dtype=np.int64))
        if res.shape == (1,) and lo.shape[0] > 1:
            res = np.full(lo.shape[0], res[0], dtype=np.int64)
        res = _frozen_array(res, dtype=np.int64, ndim=1)
        if not (lo.shape == hi.shape == res.shape):
            raise ValueError("lower, upper and resolution must agree in dimension")
        if lo.shape[0] not in (1, 2, 3):
            raise ValueError("dimension must be 1, 2 or 3")
        if np.any(hi <= lo):
            raise ValueError("upper must exceed lower")
        if np.any(res < 1):
            raise ValueError("resolution must be >= 1 per axis")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "resolution", res)

    @property
    def d(self) -> int:
        return self.lower.shape[0]

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(int(r) for r in self.resolution)

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.resolution))

    @property
    def cell_sizes(self) -> np.ndarray:
        return (self.upper - self.lower) / self.resolution

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.cell_sizes))

    @property
    def cell_diameter(self) -> float:
        return float(np.linalg.norm(self.cell_sizes))

    def centers(self) -> np.ndarray:
        axes = [
            self.lower[a] + (np.arange(self.resolution[a]) + 0.5) * self.cell_sizes[a]
            for a in range(self.d)
        ]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.column_stack([m.ravel() for m in mesh])

    def cell_of(self, points) -> np.ndarray:
        """Flat row-major cell index of each point; points must lie in the box."""
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        eps = 1e-9 * np.linalg.norm(self.upper - self.lower)
        if np.any(pts < self.lower - eps) or np.any(pts > self.upper + eps):
            raise ValueError("point outside the grid box")
        idx = np.floor((pts - self.lower) / self.cell_sizes).astype(np.int64)
        np.clip(idx, 0, self.resolution - 1, out=idx)
        return np.ravel_multi_index(tuple(idx.T), self.shape)

    def refine(self, factor: int) -> "Grid":
        return Grid(self.lower, self.upper, self.resolution * int(factor))


def quantize(density, grid: Grid, drop_tol: float = 1e-15) -> DiscreteMeasure:
    """Quantize a density or point set onto ``grid``.

    One atom per nonempty cell, placed at the cell center, carrying the cell
    mass; cells below ``drop_tol`` are dropped and the result is normalized.
    The 1-Wasserstein gap to the input is at most the cell diameter.

    ``density`` may be a nonnegative callable on the box (midpoint rule),
    an array of per-cell masses in row-major ``grid.shape`` order (e.g. a
    grayscale image), a DiscreteMeasure, or an (N, d) array of points with
    uniform weights.
    """
    if callable(density):
        vals = np.asarray(density(grid.centers()), dtype=np.float64).ravel()
        if vals.shape != (grid.n_cells,):
            raise ValueError("density callable must return one value per cell center")
        masses = vals * grid.cell_volume
    elif isinstance(density, DiscreteMeasure):
        masses = np.zeros(grid.n_cells)
        np.add.at(masses, grid.cell_of(density.points), density.weights)
    else:
        arr = np.asarray(density, dtype=np.float64)
        if arr.shape == tuple(grid.shape):
            masses = arr.ravel().copy()
        elif arr.ndim == 2 and arr.shape[1] == grid.d:
            masses = np.zeros(grid.n_cells)
            np.add.at(masses, grid.cell_of(arr), np.ones(arr.shape[0]))
        elif arr.ndim == 1 and grid.d == 1:
            masses = np.zeros(grid.n_cells)
            np.add.at(masses, grid.cell_of(arr[:, None]), np.ones(arr.shape[0]))
        else:
            raise ValueError("cannot interpret density input")
    if np.any(masses < 0):
        raise ValueError("density must be nonnegative")
    keep = masses > drop_tol
    total = float(masses[keep].sum())
    if total <= 0.0:
        raise EmptyMeasureError("empty measure")
    mu = DiscreteMeasure(grid.centers()[keep], masses[keep] / total)
    return mu


@dataclass(frozen=True)
class TransportPlan:
    """Sparse nonnegative coupling between atoms j of one measure and points k."""

    shape: tuple[int, int]
    j: np.ndarray
    k: np.ndarray
    mass: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "j", _frozen_array(self.j, dtype=np.int64, ndim=1))
        object.__setattr__(self, "k", _frozen_array(self.k, dtype=np.int64, ndim=1))
        object.__setattr__(self, "mass", _frozen_array(self.mass, ndim=1))
        if not (self.j.shape == self.k.shape == self.mass.shape):
            raise ValueError("triplet arrays must have equal length")
        if np.any(self.mass < 0):
            raise ValueError("plan masses must be nonnegative")

    def row_marginal(self) -> np.ndarray:
        return np.bincount(self.j, weights=self.mass, minlength=self.shape[0])

    def col_marginal(self) -> np.ndarray:
        return np.bincount(self.k, weights=self.mass, minlength=self.shape[1])

    def toarray(self) -> np.ndarray:
        out = np.zeros(self.shape)
        np.add.at(out, (self.j, self.k), self.mass)
        return out

    def cost_against(self, cost_matrix: np.ndarray) -> float:
        return float((cost_matrix[self.j, self.k] * self.mass).sum())


class SolverError(RuntimeError):
    pass


def transportation_lp(cost_matrix: np.ndarray, supply: np.ndarray, demand: np.ndarray) -> simplex.LpProblem:
    """Standard transportation polytope LP; the last demand row is dropped
    as redundant to keep the constraint matrix full row rank."""
    nr, nc = cost_matrix.shape
    j = np.repeat(np.arange(nr), nc)
    k = np.tile(np.arange(nc), nr)
    var = np.arange(nr * nc)
    rows = [j, k[k < nc - 1] + nr]
    cols = [var, var[k < nc - 1]]
    row_idx = np.concatenate(rows)
    col_idx = np.concatenate(cols)
    vals = np.ones(row_idx.shape[0])
    b = np.concatenate([supply, demand[:-1]])
    return simplex.LpProblem.from_triplets(
        nr + nc - 1, nr * nc, row_idx, col_idx, vals, cost_matrix.ravel(), b
    )


def ot_cost(
    mu: DiscreteMeasure,
    nu: DiscreteMeasure,
    cost: CostSpec,
    max_iters: int | None = None,
    tol: float = 1e-9,
) -> tuple[float, TransportPlan]:
    """Exact optimal transport cost between two normalized discrete measures.

    Returns the optimal value and a sparse optimal plan whose marginals match
    ``mu`` and ``nu`` within 1e-9.
    """
    if not mu.is_normalized(1e-9) or not nu.is_normalized(1e-9):
        raise ValueError("ot_cost expects normalized measures")
    C = cost.pairwise(mu.points, nu.points)
    prob = transportation_lp(C, mu.weights, nu.weights)
    sol = simplex.solve(prob, max_iters=max_iters, tol=tol)
    if not sol.optimal:
        raise SolverError(f"transport LP ended with status {sol.status} after {sol.iterations} iterations")
    x = sol.x.reshape(C.shape)
    jj, kk = np.nonzero(x > 0)
    plan = TransportPlan(C.shape, jj, kk, x[jj, kk])
    return sol.value, plan


def stability_bound(costs, w1_gaps) -> float:
    """Upper bound sum_i Lip(c_i) * gap_i on the optimal-value perturbation
    when each input measure moves by ``gap_i`` in 1-Wasserstein distance."""
    gaps = np.asarray(w1_gaps, dtype=np.float64)
    if len(costs) != gaps.shape[0]:
        raise ValueError("one Wasserstein gap per cost is required")
    total = 0.0
    for spec, gap in zip(costs, gaps):
        if spec.lipschitz is None:
            raise ValueError("every cost needs a Lipschitz constant for the stability bound")
        total += spec.lipschitz * float(gap)
    return total
