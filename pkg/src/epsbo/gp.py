"""Datasets, standardization, exact GP prediction, and likelihood training.

All model math runs in standardized coordinates: inputs mapped affinely from
the search box to the unit cube, outputs z-scored.  A fitted posterior keeps
the Cholesky factor of ``C = K + noise_sd^2 I`` and the precomputed solve
``alpha = C^-1 y`` so prediction is a pair of triangular solves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize

from .exceptions import ModelFitError
from .kernels import KernelFamily, KernelSpec, gram_log_gradients, gram_matrix

DUPLICATE_DISTANCE = 1e-10

# jitter escalation used whenever a covariance factorization fails
_JITTER_START = 1e-10
_JITTER_MAX = 1e-4

# maximum-likelihood search ranges in standardized coordinates (log-uniform)
_AMPLITUDE_RANGE = (1e-2, 1e2)
_LENGTHSCALE_RANGE = (1e-2, 1e1)


def as_box(box) -> np.ndarray:
    """Validate and return a search box as a (d, 2) array of [lo, hi] rows."""
    b = np.asarray(box, dtype=float)
    if b.ndim != 2 or b.shape[1] != 2:
        raise ValueError(f"box must have shape (d, 2), got {b.shape}")
    if not np.all(np.isfinite(b)):
        raise ValueError("box bounds must be finite")
    if not np.all(b[:, 0] < b[:, 1]):
        raise ValueError("box must satisfy lo < hi in every dimension")
    return b


@dataclass(frozen=True)
class Dataset:
    """Observed inputs (n, d) and objective values (n,) in problem units."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self) -> None:
        x = np.atleast_2d(np.asarray(self.x, dtype=float))
        y = np.asarray(self.y, dtype=float).ravel()
        if x.shape[0] != y.shape[0]:
            raise ValueError(f"{x.shape[0]} inputs but {y.shape[0]} observations")
        if x.shape[0] < 1:
            raise ValueError("dataset needs at least one observation")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("observations must be finite")
        _reject_duplicates(x)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def append(self, x_new, y_new: float) -> "Dataset":
        """New dataset with one more observation; rejects near-duplicate inputs."""
        x_new = np.asarray(x_new, dtype=float).ravel()
        if x_new.size != self.dim:
            raise ValueError(f"expected dimension {self.dim}, got {x_new.size}")
        dist = np.linalg.norm(self.x - x_new, axis=1)
        if np.min(dist) < DUPLICATE_DISTANCE:
            raise ValueError(
                f"new input within {DUPLICATE_DISTANCE} of an existing observation"
            )
        return Dataset(np.vstack([self.x, x_new]), np.append(self.y, float(y_new)))


def _reject_duplicates(x: np.ndarray) -> None:
    if x.shape[0] < 2:
        return
    from scipy.spatial.distance import pdist

    if np.min(pdist(x)) < DUPLICATE_DISTANCE:
        raise ValueError(f"dataset rows closer than {DUPLICATE_DISTANCE}")


@dataclass(frozen=True)
class Standardizer:
    """Affine maps taking the search box to [0, 1]^d and outputs to z-scores."""

    y_mean: float
    y_std: float
    lo: np.ndarray
    hi: np.ndarray

    def transform_x(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.lo) / (self.hi - self.lo)

    def untransform_x(self, x) -> np.ndarray:
        return self.lo + np.asarray(x, dtype=float) * (self.hi - self.lo)

    def transform_y(self, y):
        return (np.asarray(y, dtype=float) - self.y_mean) / self.y_std

    def untransform_y(self, y):
        return self.y_mean + np.asarray(y, dtype=float) * self.y_std


def fit_standardizer(raw_y, box) -> Standardizer:
    """Z-score parameters of the observations plus the box-to-unit-cube map.

    Uses the population standard deviation, replaced by 1 when the
    observations are (numerically) constant.
    """
    y = np.asarray(raw_y, dtype=float).ravel()
    if y.size == 0:
        raise ValueError("cannot standardize an empty set of observations")
    b = as_box(box)
    std = float(np.std(y))
    if std < 1e-12:
        std = 1.0
    return Standardizer(float(np.mean(y)), std, b[:, 0].copy(), b[:, 1].copy())


def cholesky_with_jitter(mat: np.ndarray, unit_scale: float) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor, adding escalating diagonal jitter on failure.

    Jitter starts at ``1e-10 * unit_scale`` and grows tenfold up to
    ``1e-4 * unit_scale``; past that a ModelFitError reports the
    conditioning problem.  Returns the factor and the jitter used.
    """
    try:
        return cholesky(mat, lower=True, check_finite=False), 0.0
    except np.linalg.LinAlgError:
        pass
    jitter = _JITTER_START * unit_scale
    eye = np.eye(mat.shape[0])
    while jitter <= _JITTER_MAX * unit_scale * (1.0 + 1e-12):
        try:
            return cholesky(mat + jitter * eye, lower=True, check_finite=False), jitter
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise ModelFitError(
        f"covariance of size {mat.shape[0]} not positive definite even with "
        f"jitter {_JITTER_MAX * unit_scale:g}"
    )


@dataclass(frozen=True)
class GpPosterior:
    """Immutable fitted model over standardized data.

    ``x_train`` lives in the unit cube and ``y_train`` is z-scored;
    ``standardizer`` (when present) converts to and from problem units.
    """

    x_train: np.ndarray
    y_train: np.ndarray
    kernel: KernelSpec
    noise_sd: float
    chol_c: np.ndarray
    alpha: np.ndarray
    standardizer: Standardizer | None = None

    @property
    def n(self) -> int:
        return self.x_train.shape[0]

    @property
    def dim(self) -> int:
        return self.x_train.shape[1]


def build_posterior(
    x, y, kernel: KernelSpec, noise_sd: float, standardizer: Standardizer | None = None
) -> GpPosterior:
    """Posterior with fixed hyperparameters from standardized data."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if noise_sd <= 0:
        raise ValueError(f"noise_sd must be positive, got {noise_sd}")
    c = gram_matrix(kernel, x)
    c[np.diag_indices_from(c)] += noise_sd * noise_sd
    chol_c, _ = cholesky_with_jitter(c, kernel.prior_variance)
    alpha = cho_solve((chol_c, True), y, check_finite=False)
    return GpPosterior(x, y, kernel, float(noise_sd), chol_c, alpha, standardizer)


def predict(gp: GpPosterior, x_star):
    """Posterior mean and variance at one point or a batch of points.

    Variance is clamped to ``[0, k(0)]``.  A 1-d input returns two floats;
    an ``(m, d)`` input returns two length-m arrays.
    """
    xs = np.asarray(x_star, dtype=float)
    single = xs.ndim == 1
    xs2 = np.atleast_2d(xs)
    k_star = gram_matrix(gp.kernel, gp.x_train, xs2)
    mean = k_star.T @ gp.alpha
    v = solve_triangular(gp.chol_c, k_star, lower=True, check_finite=False)
    var = gp.kernel.prior_variance - np.einsum("ij,ij->j", v, v)
    var = np.clip(var, 0.0, gp.kernel.prior_variance)
    if single:
        return float(mean[0]), float(var[0])
    return mean, var


def log_marginal_likelihood(x, y, kernel: KernelSpec, noise_sd: float) -> float:
    """Gaussian evidence of standardized data under the given hyperparameters."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    c = gram_matrix(kernel, x)
    c[np.diag_indices_from(c)] += noise_sd * noise_sd
    chol_c, _ = cholesky_with_jitter(c, kernel.prior_variance)
    alpha = cho_solve((chol_c, True), y, check_finite=False)
    return float(
        -0.5 * (y @ alpha)
        - np.sum(np.log(np.diag(chol_c)))
        - 0.5 * y.size * math.log(2.0 * math.pi)
    )


def _spec_from_log_params(family: KernelFamily, log_params: np.ndarray) -> KernelSpec:
    params = np.exp(log_params)
    return KernelSpec(family, float(params[0]), tuple(params[1:]))


def _neg_lml_and_grad(log_params, family, x, y, noise_sd):
    spec = _spec_from_log_params(family, np.asarray(log_params))
    k, grads = gram_log_gradients(spec, x)
    c = k + (noise_sd * noise_sd) * np.eye(x.shape[0])
    try:
        chol_c, _ = cholesky_with_jitter(c, spec.prior_variance)
    except ModelFitError:
        return 1e25, np.zeros(len(log_params))
    alpha = cho_solve((chol_c, True), y, check_finite=False)
    lml = (
        -0.5 * (y @ alpha)
        - np.sum(np.log(np.diag(chol_c)))
        - 0.5 * y.size * math.log(2.0 * math.pi)
    )
    c_inv = cho_solve((chol_c, True), np.eye(x.shape[0]), check_finite=False)
    outer = np.outer(alpha, alpha) - c_inv
    grad = np.array([0.5 * np.sum(outer * dk) for dk in grads])
    return -lml, -grad


def fit_gp(
    data: Dataset,
    box,
    family: KernelFamily,
    noise_sd: float,
    rng: np.random.Generator,
    n_starts: int = 8,
) -> GpPosterior:
    """Standardize the data and train hyperparameters by maximum likelihood.

    Runs ``n_starts`` bounded L-BFGS-B maximizations of the log marginal
    likelihood from log-uniform starting points (amplitude in [1e-2, 1e2],
    lengthscales in [1e-2, 1e1], both in standardized coordinates) and keeps
    the best optimum.  The noise standard deviation stays fixed.
    """
    if data.n < 2:
        raise ValueError(f"training needs at least 2 observations, got {data.n}")
    if noise_sd <= 0:
        raise ValueError(f"noise_sd must be positive, got {noise_sd}")
    family = KernelFamily(family)
    std = fit_standardizer(data.y, box)
    xs = std.transform_x(data.x)
    ys = std.transform_y(data.y)

    n_ls = data.dim if family is KernelFamily.ARD_SE else 1
    lo = np.log([_AMPLITUDE_RANGE[0]] + [_LENGTHSCALE_RANGE[0]] * n_ls)
    hi = np.log([_AMPLITUDE_RANGE[1]] + [_LENGTHSCALE_RANGE[1]] * n_ls)
    bounds = list(zip(lo, hi))
    starts = rng.uniform(lo, hi, size=(n_starts, len(bounds)))

    best_params, best_val = None, np.inf
    for start in starts:
        v0, _ = _neg_lml_and_grad(start, family, xs, ys, noise_sd)
        if v0 < best_val:
            best_params, best_val = start, v0
        res = minimize(
            _neg_lml_and_grad,
            start,
            args=(family, xs, ys, noise_sd),
            jac=True,
            method="L-BFGS-B",
            bounds=bounds,
            options={"maxiter": 100},
        )
        if np.isfinite(res.fun) and res.fun < best_val:
            best_params, best_val = res.x, res.fun
    if best_params is None or best_val >= 1e25:
        raise ModelFitError("likelihood evaluation failed at every start")
    kernel = _spec_from_log_params(family, np.asarray(best_params))
    return build_posterior(xs, ys, kernel, noise_sd, standardizer=std)
