import numpy as np
import pytest

from otbary.localization import candidate_support, minkowski_support
from otbary.lp_barycenter import solve_barycenter
from otbary.measures import CostSpec, DiscreteMeasure, Grid, quantize


def convex_hull_2d(points):
    """Monotone-chain hull; returns vertices in counterclockwise order."""
    pts = sorted(map(tuple, points))
    if len(pts) <= 2:
        return pts

    def half(seq):
        out = []
        for p in seq:
            while len(out) >= 2:
                o, a = out[-2], out[-1]
                if (a[0] - o[0]) * (p[1] - o[1]) - (a[1] - o[1]) * (p[0] - o[0]) <= 0:
                    out.pop()
                else:
                    break
            out.append(p)
        return out

    lower = half(pts)
    upper = half(reversed(pts))
    return lower[:-1] + upper[:-1]


def in_hull_2d(hull, p, tol=1e-9):
    for i in range(len(hull)):
        o = hull[i]
        a = hull[(i + 1) % len(hull)]
        if (a[0] - o[0]) * (p[1] - o[1]) - (a[1] - o[1]) * (p[0] - o[0]) < -tol:
            return False
    return True


def test_two_points_give_cells_near_midpoint():
    grid = Grid([0.0, 0.0], [1.0, 1.0], 10)
    a, b = np.array([0.15, 0.15]), np.array([0.85, 0.55])
    est = minkowski_support([[a], [b]], [0.5, 0.5], grid)
    mid = 0.5 * (a + b)
    dists = np.linalg.norm(est.points - mid, axis=1)
    assert est.mode == "minkowski"
    assert len(est) >= 1
    assert dists.max() <= grid.cell_diameter + 1e-12
    # and the cell containing the midpoint is included
    assert grid.cell_of([mid])[0] in est.indices


def test_identical_grid_aligned_supports_cover_themselves():
    grid = Grid([0.0, 0.0], [1.0, 1.0], 8)
    centers = grid.centers()
    block = centers[np.all((centers > 0.25) & (centers < 0.75), axis=1)]
    est = minkowski_support([block, block], [0.5, 0.5], grid)
    got = set(est.indices)
    assert set(grid.cell_of(block)) <= got


def test_translated_square_gives_half_translate():
    grid = Grid([0.0, 0.0], [2.0, 2.0], 20)
    square = quantize(lambda p: np.ones(len(p)), Grid([0.2, 0.2], [1.0, 1.0], 8))
    v = np.array([0.6, 0.4])
    translate = DiscreteMeasure(square.points + v, square.weights)
    est = minkowski_support([square, translate], [0.5, 0.5], grid)
    lo, hi = np.array([0.2, 0.2]) + v / 2, np.array([1.0, 1.0]) + v / 2
    inside = np.all((est.points >= lo - grid.cell_diameter - 1e-12)
                    & (est.points <= hi + grid.cell_diameter + 1e-12), axis=1)
    assert inside.all()
    covered = grid.centers()[np.all((grid.centers() > lo) & (grid.centers() < hi), axis=1)]
    assert set(grid.cell_of(covered)) <= set(est.indices)


def test_minkowski_validates_inputs():
    grid = Grid([0.0, 0.0], [1.0, 1.0], 4)
    with pytest.raises(ValueError):
        minkowski_support([[[0.1, 0.1]]], [0.5], grid)  # weights must sum to 1
    with pytest.raises(ValueError):
        minkowski_support([np.empty((0, 2))], [1.0], grid)


def test_candidate_single_population_quadratic_snaps_to_support():
    grid = Grid([0.0, 0.0], [1.0, 1.0], 10)
    rng = np.random.default_rng(0)
    pts = rng.random((7, 2))
    est = candidate_support([CostSpec(lam=1.0)], [pts], grid)
    assert est.mode == "exact"
    centers = grid.centers()
    want = set()
    for x in pts:
        d2 = ((centers - x) ** 2).sum(axis=1)
        want.update(np.flatnonzero(d2 == d2.min()))
    assert set(est.indices) == want


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_candidate_inside_dilated_minkowski_for_quadratic(seed):
    rng = np.random.default_rng(seed)
    grid = Grid([0.0, 0.0], [1.0, 1.0], 12)
    supports = [rng.random((3, 2)), rng.random((4, 2))]
    lams = [0.4, 0.6]
    costs = [CostSpec(lam=lams[0]), CostSpec(lam=lams[1])]
    cand = candidate_support(costs, supports, grid)
    mink = minkowski_support(supports, lams, grid)
    # candidate cells lie within one extra cell of the minkowski estimate
    mink_pts = mink.points
    for p in cand.points:
        d = np.linalg.norm(mink_pts - p, axis=1).min()
        assert d <= grid.cell_diameter + 1e-12


@pytest.mark.parametrize("p", [1.0, 2.0, 3.0])
def test_candidates_inside_convex_hull_of_supports_for_power_costs(p):
    rng = np.random.default_rng(4)
    grid = Grid([0.0, 0.0], [1.0, 1.0], 15)
    supports = [rng.random((4, 2)) * 0.5 + 0.25, rng.random((3, 2)) * 0.5 + 0.1]
    costs = [CostSpec(kind="power", p=p, lam=0.5), CostSpec(kind="power", p=p, lam=0.5)]
    est = candidate_support(costs, supports, grid)
    hull = convex_hull_2d(np.vstack(supports))
    # allow one cell of grid rounding around the hull
    pad = grid.cell_diameter
    for q in est.points:
        ok = any(
            in_hull_2d(hull, (q[0] + dx, q[1] + dy))
            for dx in (-pad, 0, pad)
            for dy in (-pad, 0, pad)
        )
        assert ok


def test_sampled_mode_is_deterministic():
    rng = np.random.default_rng(5)
    grid = Grid([0.0, 0.0], [1.0, 1.0], 6)
    supports = [rng.random((9, 2)) for _ in range(3)]
    costs = [CostSpec(lam=1 / 3)] * 3
    a = candidate_support(costs, supports, grid, sample_budget=100, seed=0)
    b = candidate_support(costs, supports, grid, sample_budget=100, seed=0)
    assert a.mode == "sampled"
    np.testing.assert_array_equal(a.indices, b.indices)
    full = candidate_support(costs, supports, grid)
    assert full.mode == "exact"
    assert set(a.indices) <= set(full.indices)


@pytest.mark.parametrize("seed", [6, 7])
def test_lp_support_contained_in_localizations(seed):
    rng = np.random.default_rng(seed)
    grid = Grid([0.0, 0.0], [1.0, 1.0], 8)
    w1 = rng.random(4) + 0.1
    w2 = rng.random(3) + 0.1
    measures = [
        DiscreteMeasure(rng.random((4, 2)), w1 / w1.sum()),
        DiscreteMeasure(rng.random((3, 2)), w2 / w2.sum()),
    ]
    lams = [0.35, 0.65]
    costs = [CostSpec(lam=lams[0]), CostSpec(lam=lams[1])]
    res = solve_barycenter(measures, costs, grid)
    support_cells = set(grid.cell_of(res.nu.points))
    mink = minkowski_support([m.points for m in measures], lams, grid)
    assert support_cells <= set(mink.indices)
    cand = candidate_support(costs, measures, grid)
    assert cand.mode == "exact"
    assert support_cells <= set(cand.indices)
