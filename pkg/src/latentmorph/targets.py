"""Synthetic 2-D Gaussian-mixture targets and sample-quality metrics."""

import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, PreconditionError


@dataclass
class GaussianMixture2D:
    means: np.ndarray
    covs: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=np.float64).reshape(-1, 2)
        k = len(self.means)
        self.covs = np.asarray(self.covs, dtype=np.float64).reshape(k, 2, 2)
        self.weights = np.asarray(self.weights, dtype=np.float64).reshape(k)
        if k < 1:
            raise ConfigError("a mixture needs at least one component")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise ConfigError(f"mixture weights must be >= 0 and sum to 1, got {self.weights}")
        for i, c in enumerate(self.covs):
            if not np.allclose(c, c.T, rtol=0, atol=0):
                raise ConfigError(f"covariance {i} is not symmetric")
            try:
                np.linalg.cholesky(c)
            except np.linalg.LinAlgError:
                raise ConfigError(f"covariance {i} is not positive definite")

    @property
    def n_components(self):
        return len(self.means)

    def to_dict(self):
        return {
            "means": self.means.tolist(),
            "covs": self.covs.tolist(),
            "weights": self.weights.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["means"]), np.array(d["covs"]), np.array(d["weights"]))

    @classmethod
    def from_file(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def eight_gaussians(radius=2.0, sigma=0.05, weighted=False):
    angles = 2.0 * np.pi * np.arange(8) / 8
    means = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    covs = np.tile((sigma**2) * np.eye(2), (8, 1, 1))
    if weighted:
        w = np.arange(1, 9, dtype=np.float64)
        weights = w / w.sum()
        weights[-1] = 1.0 - weights[:-1].sum()
    else:
        weights = np.full(8, 1.0 / 8)
    return GaussianMixture2D(means, covs, weights)


PRESETS = {
    "eight": lambda: eight_gaussians(),
    "eight_weighted": lambda: eight_gaussians(weighted=True),
}


def preset(name):
    try:
        return PRESETS[name]()
    except KeyError:
        raise ConfigError(f"unknown target preset {name!r}; expected one of {sorted(PRESETS)}")


def sample_mixture(mix, n, seed):
    """Draw ``n`` i.i.d. points: a component by weight, then a Gaussian draw from it."""
    if n < 1:
        raise PreconditionError(f"n must be >= 1, got {n}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    comp = rng.choice(mix.n_components, size=n, p=mix.weights)
    chol = np.linalg.cholesky(mix.covs)
    eps = rng.standard_normal((n, 2))
    return mix.means[comp] + np.einsum("nij,nj->ni", chol[comp], eps)


class Dataset:
    """Finite training set; batches are the full set when small, else uniform minibatches."""

    def __init__(self, points, batch_size=512):
        self.points = np.asarray(points, dtype=np.float64)
        if self.points.ndim != 2 or len(self.points) == 0:
            raise PreconditionError("dataset must be a non-empty [n, d] array")
        self.batch_size = int(batch_size)

    def __len__(self):
        return len(self.points)

    def batch(self, rng):
        if len(self.points) <= self.batch_size:
            return self.points
        idx = rng.choice(len(self.points), size=self.batch_size, replace=False)
        return self.points[np.sort(idx)]


@dataclass
class CoverageReport:
    modes_captured: int
    per_mode_fraction: list
    high_quality_fraction: float

    def to_dict(self):
        return {
            "modes_captured": int(self.modes_captured),
            "per_mode_fraction": [float(f) for f in self.per_mode_fraction],
            "high_quality_fraction": float(self.high_quality_fraction),
        }


def mahalanobis_sq(samples, mix):
    """Squared Mahalanobis distance of every sample to every component, shape [n, k]."""
    samples = np.asarray(samples, dtype=np.float64)
    inv = np.linalg.inv(mix.covs)
    diff = samples[:, None, :] - mix.means[None, :, :]
    return np.einsum("nki,kij,nkj->nk", diff, inv, diff)


def mode_coverage(samples, mix, radius_sigmas=3.0, min_fraction=0.02):
    """Count components holding at least ``min_fraction`` of samples within the radius."""
    samples = np.asarray(samples, dtype=np.float64).reshape(-1, 2)
    if len(samples) == 0:
        raise PreconditionError("mode coverage needs at least one sample")
    inside = mahalanobis_sq(samples, mix) <= radius_sigmas**2
    frac = inside.mean(axis=0)
    return CoverageReport(
        modes_captured=int(np.sum(frac >= min_fraction)),
        per_mode_fraction=frac.tolist(),
        high_quality_fraction=float(inside.any(axis=1).mean()),
    )


@dataclass
class DensityGrid:
    density: np.ndarray
    clipped: int
    bounds: tuple

    def write_csv(self, path):
        np.savetxt(path, self.density, delimiter=",", fmt="%.17g")


def grid_density(samples, bounds=((-3.0, 3.0), (-3.0, 3.0)), resolution=64):
    """Normalized 2-D histogram; out-of-bounds samples land in the nearest edge bin."""
    samples = np.asarray(samples, dtype=np.float64).reshape(-1, 2)
    if np.ndim(resolution) == 0:
        resolution = (int(resolution), int(resolution))
    if min(resolution) < 2:
        raise PreconditionError(f"resolution must be >= 2 per axis, got {resolution}")
    (x0, x1), (y0, y1) = bounds
    lo = np.array([x0, y0])
    hi = np.array([x1, y1])
    outside = np.any((samples < lo) | (samples > hi), axis=1)
    clipped = np.clip(samples, lo, hi)
    hist, _, _ = np.histogram2d(
        clipped[:, 0], clipped[:, 1], bins=resolution, range=[[x0, x1], [y0, y1]]
    )
    total = hist.sum()
    density = hist / total if total > 0 else hist
    return DensityGrid(density, int(outside.sum()), ((x0, x1), (y0, y1)))
