"""Closed-form Gaussian barycenters used to validate the solvers.

The barycenter of Gaussians with weights lambda_i has mean sum_i lambda_i
m_i, and its covariance is the unique positive-definite solution of

    sum_i lambda_i (S^1/2 S_i S^1/2)^1/2 = S,

computed here by fixed-point iteration from sum_i lambda_i S_i and verified
against the equation's residual before returning.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .measures import DiscreteMeasure, EmptyMeasureError, Grid, quantize


@dataclass(frozen=True)
class GaussianSpec:
    """Mean, covariance and barycenter weight of one Gaussian measure."""

    mean: np.ndarray
    cov: np.ndarray
    weight: float = 1.0

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=np.float64))
        if mean.shape[0] not in (1, 2, 3) or cov.shape != (mean.shape[0], mean.shape[0]):
            raise ValueError("mean must be a d-vector and cov d x d, d <= 3")
        if np.abs(cov - cov.T).max() > 1e-12:
            raise ValueError("covariance must be symmetric")
        if np.linalg.eigvalsh(cov).min() < -1e-12:
            raise ValueError("covariance must be positive semidefinite")
        mean = mean.copy()
        mean.setflags(write=False)
        cov = 0.5 * (cov + cov.T)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def d(self) -> int:
        return self.mean.shape[0]

    @property
    def is_singular(self) -> bool:
        return bool(np.linalg.eigvalsh(self.cov).min() <= 0.0)

    def sigmas(self) -> np.ndarray:
        """Square roots of the covariance eigenvalues, ascending."""
        return np.sqrt(np.clip(np.linalg.eigvalsh(self.cov), 0.0, None))

    def density(self, points: np.ndarray) -> np.ndarray:
        if self.is_singular:
            raise ValueError("density undefined for singular covariance")
        diff = np.atleast_2d(points) - self.mean[None, :]
        inv = np.linalg.inv(self.cov)
        expo = -0.5 * np.einsum("nd,de,ne->n", diff, inv, diff)
        norm = np.sqrt((2.0 * np.pi) ** self.d * np.linalg.det(self.cov))
        return np.exp(expo) / norm


def _sqrtm_spd(S: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(S)
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


class FixedPointError(RuntimeError):
    pass


def barycenter_gaussian(
    specs, max_iters: int = 10_000, tol: float = 1e-12, residual_tol: float = 1e-10
) -> GaussianSpec:
    """Barycenter mean and covariance of weighted positive-definite Gaussians."""
    lams = np.array([s.weight for s in specs], dtype=np.float64)
    if abs(lams.sum() - 1.0) > 1e-12 or np.any(lams <= 0):
        raise ValueError("weights must be positive and sum to one")
    d = specs[0].d
    if any(s.d != d for s in specs):
        raise ValueError("all Gaussians must share one dimension")
    if any(s.is_singular for s in specs):
        raise ValueError("inputs must be positive definite")
    mean = sum(l * s.mean for l, s in zip(lams, specs))
    covs = [s.cov for s in specs]
    S = sum(l * C for l, C in zip(lams, covs))
    for _ in range(max_iters):
        root = _sqrtm_spd(S)
        inv_root = np.linalg.inv(root)
        mix = sum(l * _sqrtm_spd(root @ C @ root) for l, C in zip(lams, covs))
        S_next = inv_root @ (mix @ mix) @ inv_root
        S_next = 0.5 * (S_next + S_next.T)
        if np.linalg.norm(S_next - S, "fro") <= tol:
            S = S_next
            break
        S = S_next
    root = _sqrtm_spd(S)
    residual = np.linalg.norm(
        sum(l * _sqrtm_spd(root @ C @ root) for l, C in zip(lams, covs)) - S, "fro"
    )
    if residual > residual_tol:
        raise FixedPointError(f"fixed point not reached: residual {residual:.3e}")
    return GaussianSpec(mean, S, 1.0)


def sample_gaussian(spec: GaussianSpec, grid: Grid, truncation_radius: float) -> DiscreteMeasure:
    """Quantize the Gaussian onto grid cells inside a ball around its mean.

    Mass outside the truncation ball is discarded and the result is
    renormalized to total mass one.
    """
    if truncation_radius <= 0:
        raise ValueError("truncation radius must be positive")
    centers = grid.centers()
    inside = ((centers - spec.mean[None, :]) ** 2).sum(axis=1) <= truncation_radius**2
    if not inside.any():
        raise EmptyMeasureError("no grid point inside the truncation ball")
    masses = np.zeros(grid.n_cells)
    masses[inside] = spec.density(centers[inside]) * grid.cell_volume
    return quantize(masses.reshape(grid.shape), grid)


def fit_gaussian(measure: DiscreteMeasure) -> GaussianSpec:
    """Weighted moment fit; a singular covariance is flagged, not fatal."""
    if abs(measure.mass - 1.0) > 1e-9:
        raise ValueError("fit expects a normalized measure")
    mean = measure.weights @ measure.points
    diff = measure.points - mean[None, :]
    cov = (diff * measure.weights[:, None]).T @ diff
    return GaussianSpec(mean, cov, 1.0)
