"""Analytic posterior sample paths via random cosine features.

A feature map ``phi(x) = scale * cos(W x + b)`` with frequencies ``W`` drawn
from the kernel's normalized spectral density satisfies
``E[phi(x) . phi(x')] = k(x, x')``.  Conditioning the Bayesian linear model
``f(x) ~ beta . phi(x)`` (standard-normal prior on ``beta``) on data gives

    mu_beta    = A^-1 Phi^T y,      A = Phi^T Phi + noise_sd^2 I
    Sigma_beta = noise_sd^2 A^-1

so a single Cholesky factorization of ``A`` serves every path drawn in an
iteration.  Paths are smooth closed forms with exact gradients, which the
inner optimizer exploits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .kernels import KernelSpec, sample_spectral_points
from .gp import cholesky_with_jitter

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class FeatureMap:
    """Random cosine features: phi(x) = scale * cos(w @ x + b)."""

    w: np.ndarray  # (n_features, d) spectral points
    b: np.ndarray  # (n_features,) phases in [0, 2*pi)
    scale: float  # sqrt(2 k(0) / n_features)

    @property
    def n_features(self) -> int:
        return self.w.shape[0]

    @property
    def dim(self) -> int:
        return self.w.shape[1]

    def __call__(self, x) -> np.ndarray:
        """Features of one point (d,) -> (n_features,) or a batch (m, d) -> (m, n_features)."""
        x = np.asarray(x, dtype=float)
        return self.scale * np.cos(x @ self.w.T + self.b)


def build_feature_map(
    kernel: KernelSpec, d: int, n_points: int, rng: np.random.Generator
) -> FeatureMap:
    """Sample a feature map: spectral points first, then uniform phases."""
    w = sample_spectral_points(kernel, d, n_points, rng)
    b = rng.uniform(0.0, TWO_PI, n_points)
    scale = float(np.sqrt(2.0 * kernel.prior_variance / n_points))
    return FeatureMap(w, b, scale)


@dataclass(frozen=True)
class WeightPosterior:
    """Gaussian posterior over feature weights, held through chol(A)."""

    mu: np.ndarray  # (n_features,)
    chol_a: np.ndarray  # lower factor of Phi^T Phi + noise_sd^2 I
    noise_sd: float


def weight_posterior(fm: FeatureMap, x, y, noise_sd: float) -> WeightPosterior:
    """Condition the feature weights on standardized observations."""
    if noise_sd <= 0:
        raise ValueError(f"noise_sd must be positive, got {noise_sd}")
    phi = fm(np.atleast_2d(np.asarray(x, dtype=float)))
    y = np.asarray(y, dtype=float).ravel()
    a = phi.T @ phi
    a[np.diag_indices_from(a)] += noise_sd * noise_sd
    unit = float(np.mean(np.diag(a)))
    chol_a, _ = cholesky_with_jitter(a, unit)
    mu = cho_solve((chol_a, True), phi.T @ y, check_finite=False)
    return WeightPosterior(mu, chol_a, float(noise_sd))


def draw_weights(wp: WeightPosterior, n: int, rng: np.random.Generator) -> np.ndarray:
    """Exact draws beta ~ N(mu, noise_sd^2 A^-1), one per row of the result.

    Each column of the raw normal block maps through ``mu + noise_sd *
    L^-T z``; a shared factor makes extra draws cheap.
    """
    z = rng.standard_normal((wp.mu.size, n))
    shift = solve_triangular(wp.chol_a.T, z, lower=False, check_finite=False)
    return (wp.mu[:, None] + wp.noise_sd * shift).T


@dataclass(frozen=True)
class SamplePath:
    """One posterior draw g(x) = beta . phi(x)."""

    features: FeatureMap
    beta: np.ndarray

    def value(self, x):
        phi = self.features(x)
        out = phi @ self.beta
        return float(out) if np.ndim(out) == 0 else out

    def gradient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        fm = self.features
        s = np.sin(fm.w @ x + fm.b)
        return -fm.scale * ((self.beta * s) @ fm.w)


@dataclass(frozen=True)
class AveragedPath:
    """Pointwise average of several sample paths sharing one feature map.

    Values and gradients are computed per path and then averaged, so the
    evaluation cost grows with the number of paths.
    """

    features: FeatureMap
    weights: np.ndarray  # (n_paths, n_features)

    @property
    def n_paths(self) -> int:
        return self.weights.shape[0]

    def value(self, x):
        phi = self.features(x)
        out = (phi @ self.weights.T).mean(axis=-1)
        return float(out) if np.ndim(out) == 0 else out

    def gradient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        fm = self.features
        s = np.sin(fm.w @ x + fm.b)
        per_path = (self.weights * s) @ fm.w
        return -fm.scale * per_path.mean(axis=0)


def draw_path(fm: FeatureMap, wp: WeightPosterior, rng: np.random.Generator) -> SamplePath:
    """Draw a single posterior sample path."""
    return SamplePath(fm, draw_weights(wp, 1, rng)[0])


def draw_averaged_path(
    fm: FeatureMap, wp: WeightPosterior, n_paths: int, rng: np.random.Generator
) -> AveragedPath:
    """Draw ``n_paths`` posterior sample paths and bundle their average."""
    if n_paths < 1:
        raise ValueError(f"n_paths must be >= 1, got {n_paths}")
    return AveragedPath(fm, draw_weights(wp, n_paths, rng))
