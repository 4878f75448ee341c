"""Random Gaussian mixtures, reproducible samplers, and the Gaussian OT map.

Mixture construction: component means are drawn from a regular grid with
spacing ``delta`` so that no two components share a coordinate on any axis
(one independent permutation of the grid per axis).  Covariances are
``sigma^2 * A A^T`` with the rows of A uniform on the unit sphere, which
pins every diagonal entry to exactly ``sigma^2``.  After exact recentring,
normalization by the closed-form axis variance makes every per-coordinate
variance of the mixture exactly one.

All randomness flows through counter-based Philox generators seeded from
``numpy`` SeedSequences, so mixture generation, sampling and training
batches are independently reproducible and samplers can be forked into
independent streams.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "GaussianMixture",
    "Sampler",
    "MixtureSampler",
    "PushforwardSampler",
    "AffineMap",
    "MeasurePair",
    "pair_from_mixtures",
    "rng_from_seed",
    "random_mixture",
    "normalize_mixture",
    "axis_variances",
    "mixture_moments",
    "sample",
    "spd_sqrt",
    "gaussian_ot_map",
    "DEFAULT_DELTA",
    "DEFAULT_SIGMA",
]

DEFAULT_DELTA = 1.0
DEFAULT_SIGMA = 0.4


def rng_from_seed(seed) -> np.random.Generator:
    """Counter-based generator; accepts ints or SeedSequences."""
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    return np.random.Generator(np.random.Philox(seed))


@dataclass
class GaussianMixture:
    """Uniformly weighted mixture of M Gaussians in R^D."""

    means: np.ndarray  # (M, D)
    covs: np.ndarray  # (M, D, D)
    sigma: float = DEFAULT_SIGMA
    _chols: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def weights(self) -> np.ndarray:
        m = self.n_components
        return np.full(m, 1.0 / m)

    def chols(self) -> np.ndarray:
        if self._chols is None:
            try:
                self._chols = np.linalg.cholesky(self.covs)
            except np.linalg.LinAlgError as e:
                raise ValueError(f"covariance not positive definite: {e}") from e
        return self._chols


def random_mixture(dim: int, n_components: int, seed) -> GaussianMixture:
    """Unnormalized random mixture on the coordinate grid.

    Grid per axis: {-delta*M/2 + i*delta, i = 1..M}.  Each axis uses every
    grid value exactly once across the M components, so no pair of means
    shares any coordinate.
    """
    if n_components < 1:
        raise ValueError("need at least one component")
    rng = rng_from_seed(seed)
    m = n_components
    grid = -DEFAULT_DELTA * m / 2.0 + DEFAULT_DELTA * np.arange(1, m + 1)
    means = np.empty((m, dim))
    for d in range(dim):
        means[:, d] = grid[rng.permutation(m)]
    a = rng.standard_normal((m, dim, dim))
    a /= np.linalg.norm(a, axis=2, keepdims=True)
    covs = DEFAULT_SIGMA**2 * np.einsum("mij,mkj->mik", a, a)
    return GaussianMixture(means=means, covs=covs, sigma=DEFAULT_SIGMA)


def normalize_mixture(mix: GaussianMixture) -> GaussianMixture:
    """Recenter exactly, then scale to unit per-axis variance.

    The scale is a = 1/sqrt(mean_m ||mu_m||^2 / D + sigma^2); with exact
    recentring and the grid construction the resulting axis-wise variance
    is exactly one.
    """
    mu = mix.means - np.mean(mix.means, axis=0, keepdims=True)
    m, d = mu.shape
    sigma2 = float(np.mean(np.einsum("mii->mi", mix.covs)))
    inv_a = np.sqrt(np.sum(mu**2) / (m * d) + sigma2)
    a = 1.0 / inv_a
    return GaussianMixture(means=a * mu, covs=a * a * mix.covs, sigma=a * np.sqrt(sigma2))


def axis_variances(mix: GaussianMixture) -> np.ndarray:
    """Closed-form per-coordinate variance of the mixture."""
    mean, cov = mixture_moments(mix)
    return np.diag(cov).copy()


def mixture_moments(mix: GaussianMixture) -> tuple[np.ndarray, np.ndarray]:
    """Exact mean and covariance: Sigma = E[Sigma_m + mu_m mu_m^T] - mu mu^T."""
    w = mix.weights
    mean = w @ mix.means
    second = np.einsum("m,mij->ij", w, mix.covs)
    second += np.einsum("m,mi,mj->ij", w, mix.means, mix.means)
    return mean, second - np.outer(mean, mean)


# ---------------------------------------------------------------------------
# samplers


class Sampler:
    """Deterministic sample source, confined to one thread."""

    dim: int

    def sample(self, n: int) -> np.ndarray:
        raise NotImplementedError

    def fork(self) -> "Sampler":
        """An independent stream, derived deterministically."""
        raise NotImplementedError


class MixtureSampler(Sampler):
    def __init__(self, mixture: GaussianMixture, seed):
        self.mixture = mixture
        self.dim = mixture.dim
        if isinstance(seed, np.random.Generator):
            self._rng = seed
        else:
            self._rng = rng_from_seed(seed)

    def sample(self, n: int) -> np.ndarray:
        if n < 1:
            raise ValueError("n must be >= 1")
        mix = self.mixture
        comps = self._rng.integers(0, mix.n_components, size=n)
        z = self._rng.standard_normal((n, mix.dim))
        out = np.empty_like(z)
        chols = mix.chols()
        for m in range(mix.n_components):
            idx = comps == m
            if np.any(idx):
                out[idx] = mix.means[m] + z[idx] @ chols[m].T
        return out

    def fork(self) -> "MixtureSampler":
        return MixtureSampler(self.mixture, self._rng.spawn(1)[0])


class PushforwardSampler(Sampler):
    """Samples T(x) for x drawn from a base sampler."""

    def __init__(self, base: Sampler, transport: Callable[[np.ndarray], np.ndarray]):
        self.base = base
        self.transport = transport
        self.dim = base.dim

    def sample(self, n: int) -> np.ndarray:
        return self.transport(self.base.sample(n))

    def fork(self) -> "PushforwardSampler":
        return PushforwardSampler(self.base.fork(), self.transport)


def sample(s: Sampler, n: int) -> np.ndarray:
    return s.sample(n)


@dataclass
class MeasurePair:
    """A trainable pair of measures given by sampler factories."""

    dim: int
    _source: Callable[[object], Sampler]
    _target: Callable[[object], Sampler]

    def source_sampler(self, seed) -> Sampler:
        return self._source(seed)

    def target_sampler(self, seed) -> Sampler:
        return self._target(seed)

    def swapped(self) -> "MeasurePair":
        return MeasurePair(dim=self.dim, _source=self._target, _target=self._source)


def pair_from_mixtures(p: GaussianMixture, q: GaussianMixture) -> MeasurePair:
    if p.dim != q.dim:
        raise ValueError("mixture dimensions differ")
    return MeasurePair(
        dim=p.dim,
        _source=lambda seed: MixtureSampler(p, seed),
        _target=lambda seed: MixtureSampler(q, seed),
    )


# ---------------------------------------------------------------------------
# Gaussian (linear) optimal transport


def spd_sqrt(mat: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition.

    Eigenvalues below -1e-10 are rejected; small negatives are clamped to
    zero.
    """
    mat = np.asarray(mat, dtype=np.float64)
    sym = 0.5 * (mat + mat.T)
    vals, vecs = np.linalg.eigh(sym)
    if np.min(vals) < -1e-10:
        raise ValueError(f"matrix is not PSD: min eigenvalue {np.min(vals):.3e}")
    vals = np.clip(vals, 0.0, None)
    root = (vecs * np.sqrt(vals)) @ vecs.T
    return 0.5 * (root + root.T)


@dataclass(frozen=True)
class AffineMap:
    """T(x) = A (x - mean_in) + mean_out with symmetric PSD A."""

    matrix: np.ndarray
    mean_in: np.ndarray
    mean_out: np.ndarray

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x) - self.mean_in) @ self.matrix.T + self.mean_out


def gaussian_ot_map(
    mean_p: np.ndarray,
    cov_p: np.ndarray,
    mean_q: np.ndarray,
    cov_q: np.ndarray,
) -> AffineMap:
    """Optimal map between Gaussians (or measures coarsened to Gaussians).

    A = S^{-1/2} (S^{1/2} cov_q S^{1/2})^{1/2} S^{-1/2} with S = cov_p.
    Requires cov_p positive definite.
    """
    cov_p = np.asarray(cov_p, dtype=np.float64)
    vals, vecs = np.linalg.eigh(0.5 * (cov_p + cov_p.T))
    if np.min(vals) <= 1e-12:
        raise ValueError("source covariance is singular")
    half = (vecs * np.sqrt(vals)) @ vecs.T
    inv_half = (vecs / np.sqrt(vals)) @ vecs.T
    mid = spd_sqrt(half @ cov_q @ half)
    a = inv_half @ mid @ inv_half
    a = 0.5 * (a + a.T)
    return AffineMap(
        matrix=a,
        mean_in=np.asarray(mean_p, dtype=np.float64),
        mean_out=np.asarray(mean_q, dtype=np.float64),
    )
