"""Bound the support of the unknown barycenter before discretizing.

For quadratic costs the barycenter support lies inside the weighted
Minkowski sum of the input supports, so only grid points near that set need
to enter the LP or dual solve. For general costs, a grid point is a
candidate only if it minimizes the summed cost for some tuple of support
points; tuples are enumerated exhaustively when affordable and sampled with
a fixed seed otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kdtree
from .measures import DiscreteMeasure, Grid

_SNAP_CAP = 2_000_000


@dataclass(frozen=True)
class SupportEstimate:
    """Grid cells that may carry barycenter mass."""

    indices: np.ndarray
    points: np.ndarray
    mode: str  # "minkowski", "exact", or "sampled"

    def __len__(self) -> int:
        return self.indices.shape[0]


def _support_points(supports) -> list[np.ndarray]:
    out = []
    for s in supports:
        pts = s.points if isinstance(s, DiscreteMeasure) else np.atleast_2d(np.asarray(s, float))
        if pts.shape[0] == 0:
            raise ValueError("empty support")
        out.append(pts)
    return out


def minkowski_support(supports, lambdas, grid: Grid) -> SupportEstimate:
    """Grid points within one cell diameter of ``sum_i lambda_i * spt(mu_i)``.

    Valid for quadratic costs, where the pointwise optimum is the weighted
    euclidean barycenter of the tuple. The pairwise accumulation dedupes
    exactly while small; beyond a size cap intermediate sums are snapped to
    a fine lattice and the dilation radius is widened by the snap error, so
    the result stays a superset.
    """
    lam = np.asarray(lambdas, dtype=np.float64)
    pts = _support_points(supports)
    if lam.shape[0] != len(pts):
        raise ValueError("one weight per support required")
    if abs(lam.sum() - 1.0) > 1e-12 or np.any(lam <= 0):
        raise ValueError("weights must be positive and sum to one")
    pitch = float(grid.cell_sizes.min()) / 8.0
    slack = 0.0
    acc = lam[0] * pts[0]
    for i in range(1, len(pts)):
        term = lam[i] * pts[i]
        acc = (acc[:, None, :] + term[None, :, :]).reshape(-1, grid.d)
        acc = np.unique(acc, axis=0)
        if acc.shape[0] > _SNAP_CAP:
            acc = np.unique(np.round(acc / pitch), axis=0) * pitch
            slack += pitch * np.sqrt(grid.d) / 2.0
    radius = grid.cell_diameter + slack
    tree = kdtree.build(acc)
    centers = grid.centers()
    keep = np.empty(centers.shape[0], dtype=bool)
    for idx, c in enumerate(centers):
        _, d2 = tree.nearest(c)
        keep[idx] = d2 <= radius * radius
    indices = np.flatnonzero(keep)
    return SupportEstimate(indices, centers[indices], "minkowski")


def candidate_support(
    costs,
    supports,
    grid: Grid,
    sample_budget: int = 10**6,
    seed: int = 0,
) -> SupportEstimate:
    """Grid points that minimize ``sum_i c_i(x_i, .)`` for some tested tuple.

    Exhaustive over all support tuples when their count fits the budget
    (mode "exact", a proven superset of any LP barycenter support on the
    same grid); otherwise ``sample_budget`` tuples drawn with a fixed seed
    (mode "sampled", a heuristic).
    """
    if sample_budget < 1:
        raise ValueError("sample_budget must be >= 1")
    pts = _support_points(supports)
    if len(costs) != len(pts):
        raise ValueError("one cost per support required")
    centers = grid.centers()
    tables = [spec.pairwise(p, centers) for spec, p in zip(costs, pts)]
    sizes = np.array([p.shape[0] for p in pts], dtype=np.int64)
    total = int(np.prod(sizes))
    exhaustive = total <= sample_budget
    if exhaustive:
        tuples = np.arange(total, dtype=np.int64)
    else:
        rng = np.random.default_rng(seed)
        cols = [rng.integers(0, s, size=sample_budget) for s in sizes]

    hit = np.zeros(centers.shape[0], dtype=bool)
    step = max(1, int(2e6) // max(1, centers.shape[0]))
    n_tested = total if exhaustive else sample_budget
    for s in range(0, n_tested, step):
        count = min(step, n_tested - s)
        acc = np.zeros((count, centers.shape[0]))
        if exhaustive:
            rem = tuples[s : s + count]
            for i in range(len(pts) - 1, -1, -1):
                acc += tables[i][rem % sizes[i]]
                rem = rem // sizes[i]
        else:
            for i in range(len(pts)):
                acc += tables[i][cols[i][s : s + count]]
        hit |= (acc == acc.min(axis=1, keepdims=True)).any(axis=0)
    indices = np.flatnonzero(hit)
    return SupportEstimate(indices, centers[indices], "exact" if exhaustive else "sampled")
