import numpy as np
import pytest

from otbary.dual import (
    DualPotentials,
    eval_phi,
    maximize,
    supergradient_check,
)
from otbary.lp_barycenter import solve_barycenter
from otbary.measures import CostSpec, DiscreteMeasure


def naive_phi(table, measures, lambdas, zpts):
    """Direct O(I * Nk * sum N_i) double-loop evaluation of the dual."""
    zpts = np.asarray(zpts, float)
    value = 0.0
    n_grid = zpts.shape[0]
    full_grad = np.zeros((len(measures), n_grid))
    assignments = []
    for i, mu in enumerate(measures):
        halflam = 0.5 * lambdas[i]
        vals = halflam * ((mu.points[:, None, :] - zpts[None, :, :]) ** 2).sum(axis=2)
        vals = vals - table[i][None, :]
        kstar = np.argmin(vals, axis=1)  # smallest index on ties
        mins = vals[np.arange(mu.n_atoms), kstar]
        value += mu.normalizer * float(mu.weights @ mins)
        np.subtract.at(full_grad[i], kstar, mu.normalizer * mu.weights)
        assignments.append(kstar)
    return value, full_grad[:-1] - full_grad[-1], assignments


def rand_instance(rng, I=2, max_atoms=8, max_grid=12, d=2):
    measures = []
    for _ in range(I):
        n = int(rng.integers(2, max_atoms + 1))
        w = rng.random(n) + 0.1
        measures.append(DiscreteMeasure(rng.random((n, d)), w))  # raw weights
    lam = rng.random(I) + 0.2
    lam = lam / lam.sum()
    zpts = rng.random((int(rng.integers(3, max_grid + 1)), d))
    return measures, lam, zpts


def rand_potentials(rng, I, n_grid, scale=0.3):
    return DualPotentials(rng.normal(scale=scale, size=(I - 1, n_grid)), I)


class TestEvalPhi:
    def test_single_grid_point_zero_potentials(self):
        rng = np.random.default_rng(0)
        measures, lam, _ = rand_instance(rng, I=2)
        z = np.array([[0.4, 0.6]])
        state = eval_phi(DualPotentials.zeros(2, 1), measures, lam, z)
        want = sum(
            mu.normalizer * mu.weights @ (0.5 * l * ((mu.points - z) ** 2).sum(1))
            for mu, l in zip(measures, lam)
        )
        assert state.value == pytest.approx(want, rel=1e-14)

    def test_single_point_grid_is_potential_invariant(self):
        rng = np.random.default_rng(1)
        measures, lam, _ = rand_instance(rng, I=2)
        z = np.array([[0.4, 0.6]])
        base = eval_phi(DualPotentials.zeros(2, 1), measures, lam, z)
        for t in (-2.0, 0.7, 13.0):
            state = eval_phi(DualPotentials(np.array([[t]]), 2), measures, lam, z)
            assert state.value == pytest.approx(base.value, abs=1e-12)

    @pytest.mark.parametrize("seed", range(6))
    def test_matches_naive_double_loop(self, seed):
        rng = np.random.default_rng(seed)
        measures, lam, zpts = rand_instance(rng, I=2 + seed % 2)
        pots = rand_potentials(rng, len(measures), len(zpts))
        state = eval_phi(pots, measures, lam, zpts)
        value, grad, assignments = naive_phi(pots.table(), measures, lam, zpts)
        assert state.value == value  # bitwise: same elementary formula
        np.testing.assert_array_equal(state.supergrad, grad)
        for got, want in zip(state.assignments, assignments):
            np.testing.assert_array_equal(got, want)

    def test_zero_column_sums_by_construction(self):
        rng = np.random.default_rng(7)
        pots = rand_potentials(rng, 4, 9)
        np.testing.assert_array_equal(pots.table().sum(axis=0), np.zeros(9))

    def test_row_shift_preserves_assignments(self):
        rng = np.random.default_rng(8)
        measures, lam, zpts = rand_instance(rng, I=3)
        pots = rand_potentials(rng, 3, len(zpts))
        shifted = DualPotentials(pots.free + np.array([[0.37], [-0.11]]), 3)
        a = eval_phi(pots, measures, lam, zpts)
        b = eval_phi(shifted, measures, lam, zpts)
        for x, y in zip(a.assignments, b.assignments):
            np.testing.assert_array_equal(x, y)


class TestSupergradient:
    def test_equality_at_same_point(self):
        rng = np.random.default_rng(10)
        measures, lam, zpts = rand_instance(rng)
        pots = rand_potentials(rng, 2, len(zpts))
        state = eval_phi(pots, measures, lam, zpts)
        assert supergradient_check(state, pots)

    def test_inequality_on_random_pairs(self):
        rng = np.random.default_rng(11)
        measures, lam, zpts = rand_instance(rng, I=3)
        for _ in range(100):
            phi = rand_potentials(rng, 3, len(zpts))
            psi = rand_potentials(rng, 3, len(zpts), scale=0.6)
            state = eval_phi(phi, measures, lam, zpts)
            assert supergradient_check(state, psi)

    def test_line_scan_along_supergradient(self):
        rng = np.random.default_rng(12)
        measures, lam, zpts = rand_instance(rng)
        phi = rand_potentials(rng, 2, len(zpts))
        state = eval_phi(phi, measures, lam, zpts)
        g = state.supergrad
        for t in (1e-9, 1e-7):
            up = eval_phi(DualPotentials(phi.free + t * g, 2), measures, lam, zpts)
            # one-sided: increases at linear points, never above the tangent
            assert up.value >= state.value - 1e-12
            assert up.value <= state.value + t * float((g * g).sum()) + 1e-12

    def test_concavity_along_segments(self):
        rng = np.random.default_rng(13)
        measures, lam, zpts = rand_instance(rng, I=3)
        for _ in range(25):
            phi = rand_potentials(rng, 3, len(zpts))
            psi = rand_potentials(rng, 3, len(zpts))
            t = float(rng.random())
            mid = DualPotentials(t * phi.free + (1 - t) * psi.free, 3)
            a = eval_phi(phi, measures, lam, zpts).value
            b = eval_phi(psi, measures, lam, zpts).value
            m = eval_phi(mid, measures, lam, zpts).value
            assert m >= t * a + (1 - t) * b - 1e-10


class TestMaximize:
    def test_two_diracs_single_grid_point(self):
        a, b = np.array([0.1, 0.2]), np.array([0.9, 0.4])
        lam = np.array([0.3, 0.7])
        z = (lam[0] * a + lam[1] * b)[None, :]
        measures = [DiscreteMeasure([a], [1.0]), DiscreteMeasure([b], [1.0])]
        state = maximize(measures, lam, z)
        want = 0.5 * lam[0] * ((a - z[0]) ** 2).sum() + 0.5 * lam[1] * ((b - z[0]) ** 2).sum()
        assert state.status == "optimal"
        assert state.value == pytest.approx(want, rel=1e-14)

    @pytest.mark.parametrize("seed", [0, 1, 2, 3])
    def test_strong_duality_on_small_instances(self, seed):
        rng = np.random.default_rng(100 + seed)
        measures, lam, zpts = rand_instance(rng, I=2 + seed % 2, max_atoms=6, max_grid=10)
        normalized = [m.normalize() for m in measures]
        costs = [CostSpec(kind="power", p=2.0, lam=l, half=True) for l in lam]
        lp = solve_barycenter(normalized, costs, zpts, verify=False)
        log = []
        state = maximize(normalized, lam, zpts, max_iters=20000, log=log)
        assert state.value <= lp.value + 1e-9  # weak duality throughout
        assert abs(state.value - lp.value) <= 1e-6 * max(1e-12, abs(lp.value))
        # monotone incumbent: the returned value dominates the whole log
        assert state.value >= max(row[1] for row in log) - 1e-15

    def test_iteration_limit_flagged(self):
        rng = np.random.default_rng(50)
        measures, lam, zpts = rand_instance(rng, I=2, max_atoms=6, max_grid=8)
        state = maximize(measures, lam, zpts, max_iters=3)
        assert state.status == "iteration_limit"
        assert state.iterations == 3
