import numpy as np
import pytest

from otbary.gaussian import (
    GaussianSpec,
    barycenter_gaussian,
    fit_gaussian,
    sample_gaussian,
)
from otbary.measures import EmptyMeasureError, Grid


def rand_spd(rng, d, scale=1.0):
    A = rng.normal(size=(d, d))
    return scale * (A @ A.T + d * np.eye(d) * 0.1)


def residual(specs, S):
    from otbary.gaussian import _sqrtm_spd

    root = _sqrtm_spd(S)
    mix = sum(s.weight * _sqrtm_spd(root @ s.cov @ root) for s in specs)
    return np.linalg.norm(mix - S, "fro")


class TestBarycenter:
    def test_identical_covariances_are_a_fixed_point(self):
        S = np.array([[0.02, 0.005], [0.005, 0.03]])
        specs = [GaussianSpec([0.0, 0.0], S, 0.3), GaussianSpec([1.0, 0.5], S, 0.7)]
        out = barycenter_gaussian(specs)
        np.testing.assert_allclose(out.cov, S, atol=1e-12)
        np.testing.assert_allclose(out.mean, [0.7, 0.35], atol=1e-14)

    def test_one_dimensional_sigma_is_weighted_mean(self):
        sig = [0.3, 0.05, 0.7]
        lam = [0.2, 0.5, 0.3]
        specs = [GaussianSpec([float(i)], [[s**2]], l) for i, (s, l) in enumerate(zip(sig, lam))]
        out = barycenter_gaussian(specs)
        want = sum(l * s for l, s in zip(lam, sig))
        assert np.sqrt(out.cov[0, 0]) == pytest.approx(want, abs=1e-12)

    def test_commuting_diagonal_closed_form(self):
        D1 = np.diag([0.04, 0.09])
        D2 = np.diag([0.16, 0.01])
        lam = [0.6, 0.4]
        specs = [GaussianSpec([0.0, 0.0], D1, lam[0]), GaussianSpec([0.0, 0.0], D2, lam[1])]
        out = barycenter_gaussian(specs)
        want = (lam[0] * np.sqrt(D1) + lam[1] * np.sqrt(D2)) ** 2
        np.testing.assert_allclose(out.cov, want, atol=1e-12)

    @pytest.mark.parametrize("d", [1, 2, 3])
    def test_fixed_point_residual_below_tolerance(self, d):
        rng = np.random.default_rng(10 + d)
        lam = rng.random(3) + 0.2
        lam /= lam.sum()
        specs = [GaussianSpec(rng.normal(size=d), rand_spd(rng, d, 0.05), l) for l in lam]
        out = barycenter_gaussian(specs)
        assert residual(specs, out.cov) <= 1e-10

    def test_permutation_invariance(self):
        rng = np.random.default_rng(3)
        lam = np.array([0.25, 0.35, 0.4])
        specs = [GaussianSpec(rng.normal(size=2), rand_spd(rng, 2, 0.1), l) for l in lam]
        a = barycenter_gaussian(specs)
        b = barycenter_gaussian(specs[::-1])
        np.testing.assert_allclose(a.cov, b.cov, atol=1e-12)
        np.testing.assert_allclose(a.mean, b.mean, atol=1e-12)

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError):
            barycenter_gaussian([GaussianSpec([0.0], [[1.0]], 0.5)])
        with pytest.raises(ValueError):
            GaussianSpec([0.0, 0.0], [[1.0, 0.5], [0.4, 1.0]], 1.0)  # not symmetric
        with pytest.raises(ValueError):
            barycenter_gaussian(
                [GaussianSpec([0.0], [[0.0]], 0.5), GaussianSpec([0.0], [[1.0]], 0.5)]
            )


class TestSampleGaussian:
    def test_tiny_sigma_concentrates_at_nearest_cell(self):
        grid = Grid([-1.0, -1.0], [1.0, 1.0], 20)
        spec = GaussianSpec([0.13, -0.22], 1e-4 * np.eye(2))  # sigma = cell / 10
        mu = sample_gaussian(spec, grid, 1.0)
        d2 = ((grid.centers() - np.array([0.13, -0.22])) ** 2).sum(axis=1)
        heaviest = mu.points[mu.weights.argmax()]
        np.testing.assert_allclose(heaviest, grid.centers()[d2.argmin()])
        assert mu.weights.max() >= 0.99

    def test_moments_recovered_within_a_cell(self):
        grid = Grid([-1.0, -1.0], [1.0, 1.0], 60)
        spec = GaussianSpec([0.1, 0.05], (1.0 / 50.0) ** 2 * np.eye(2))
        mu = sample_gaussian(spec, grid, 1.0)
        assert abs(mu.mass - 1.0) <= 1e-12
        fit = fit_gaussian(mu)
        assert np.linalg.norm(fit.mean - spec.mean) <= grid.cell_diameter
        # midpoint sampling tracks the true second moment closely
        np.testing.assert_allclose(np.diag(fit.cov), (1 / 50.0) ** 2, rtol=0.05)

    def test_empty_intersection_raises(self):
        grid = Grid([0.0, 0.0], [1.0, 1.0], 4)
        spec = GaussianSpec([10.0, 10.0], np.eye(2))
        with pytest.raises(EmptyMeasureError):
            sample_gaussian(spec, grid, 0.5)


class TestFitGaussian:
    def test_single_atom_flagged_singular(self):
        from otbary.measures import DiscreteMeasure

        fit = fit_gaussian(DiscreteMeasure([[0.3, 0.4]], [1.0]))
        np.testing.assert_allclose(fit.mean, [0.3, 0.4])
        assert fit.is_singular
        np.testing.assert_allclose(fit.cov, 0.0, atol=1e-15)

    def test_symmetric_square_isotropic(self):
        from otbary.measures import DiscreteMeasure

        pts = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
        fit = fit_gaussian(DiscreteMeasure(pts, np.full(4, 0.25)))
        np.testing.assert_allclose(fit.mean, [0.0, 0.0], atol=1e-15)
        np.testing.assert_allclose(fit.cov, 0.5 * np.eye(2), atol=1e-15)

    def test_round_trip_through_sampling(self):
        grid = Grid([-0.6, -0.6], [0.6, 0.6], 80)
        cov = np.array([[0.012, 0.004], [0.004, 0.02]])
        spec = GaussianSpec([-0.03, 0.08], cov)
        fit = fit_gaussian(sample_gaussian(spec, grid, 0.5))
        assert np.linalg.norm(fit.mean - spec.mean) <= grid.cell_diameter
        assert np.abs(fit.cov - cov).max() <= 2.0 * grid.cell_sizes[0] ** 2
