"""Acquisition policies proposing the next evaluation point.

Five policies share one inner optimizer:

* generic Thompson sampling: minimize a single posterior sample path
  (exploration);
* averaging Thompson sampling: minimize the pointwise average of several
  sample paths, which approaches posterior-mean minimization as the path
  count grows (exploitation);
* epsilon-greedy Thompson sampling: flip a biased coin each call and run the
  generic branch with probability epsilon, the averaging branch otherwise;
* expected improvement and lower confidence bound as deterministic
  baselines.

Randomness is split across separated streams (branch switch, spectral
features, path weights) so that the epsilon = 1 and epsilon = 0 extremes
reproduce the generic and averaging policies bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.stats import norm

from .exceptions import ProposalError
from .gp import GpPosterior, predict
from .rff import build_feature_map, draw_averaged_path, draw_path, weight_posterior

DEDUP_DISTANCE = 1e-8
_DEDUP_RADIUS = 1e-6
_DEDUP_ATTEMPTS = 100


class PolicyKind(str, Enum):
    GENERIC_TS = "generic-ts"
    AVERAGING_TS = "averaging-ts"
    EPS_GREEDY_TS = "eps-ts"
    EI = "ei"
    LCB = "lcb"


class Branch(str, Enum):
    EXPLORE = "explore"
    EXPLOIT = "exploit"
    DETERMINISTIC = "deterministic"


@dataclass(frozen=True)
class PolicySpec:
    """Which policy to run and its parameters."""

    kind: PolicyKind
    epsilon: float = 0.5
    n_paths: int = 50
    n_spectral: int = 1000
    lcb_kappa: float = 2.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", PolicyKind(self.kind))
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        if self.n_paths < 1:
            raise ValueError(f"n_paths must be >= 1, got {self.n_paths}")
        if self.n_spectral < 1:
            raise ValueError(f"n_spectral must be >= 1, got {self.n_spectral}")
        if self.lcb_kappa <= 0:
            raise ValueError(f"lcb_kappa must be positive, got {self.lcb_kappa}")


@dataclass(frozen=True)
class Proposal:
    """Next point to evaluate, in standardized coordinates.

    ``acq_value`` is the minimized surrogate value; ``x`` may differ from
    the raw minimizer by up to the deduplication perturbation radius.
    """

    x: np.ndarray
    branch: Branch
    acq_value: float


def explore_switch(rng: np.random.Generator, epsilon: float) -> bool:
    """One biased-coin draw: True selects the exploration branch."""
    return rng.random() <= epsilon


def propose_generic_ts(
    gp: GpPosterior,
    n_spectral: int,
    rng_feature: np.random.Generator,
    rng_weight: np.random.Generator,
    inner,
) -> Proposal:
    """Minimize a single fresh sample path of the posterior."""
    fm = build_feature_map(gp.kernel, gp.dim, n_spectral, rng_feature)
    wp = weight_posterior(fm, gp.x_train, gp.y_train, gp.noise_sd)
    path = draw_path(fm, wp, rng_weight)
    x, f = inner(path.value, path.gradient)
    return Proposal(x, Branch.EXPLORE, float(f))


def propose_averaging_ts(
    gp: GpPosterior,
    n_paths: int,
    n_spectral: int,
    rng_feature: np.random.Generator,
    rng_weight: np.random.Generator,
    inner,
) -> Proposal:
    """Minimize the pointwise average of ``n_paths`` sample paths.

    All paths share one feature map and one weight-posterior factorization;
    only the Gaussian weight draws differ.
    """
    fm = build_feature_map(gp.kernel, gp.dim, n_spectral, rng_feature)
    wp = weight_posterior(fm, gp.x_train, gp.y_train, gp.noise_sd)
    path = draw_averaged_path(fm, wp, n_paths, rng_weight)
    x, f = inner(path.value, path.gradient)
    return Proposal(x, Branch.EXPLOIT, float(f))


def propose_eps_greedy_ts(
    gp: GpPosterior,
    epsilon: float,
    n_paths: int,
    n_spectral: int,
    rng_switch: np.random.Generator,
    rng_feature: np.random.Generator,
    rng_weight: np.random.Generator,
    inner,
) -> Proposal:
    """Random switch between the generic and averaging branches."""
    if explore_switch(rng_switch, epsilon):
        return propose_generic_ts(gp, n_spectral, rng_feature, rng_weight, inner)
    return propose_averaging_ts(gp, n_paths, n_spectral, rng_feature, rng_weight, inner)


def expected_improvement(gp: GpPosterior, x, y_best: float):
    """Closed-form EI under the minimization convention, vectorized over rows."""
    mean, var = predict(gp, np.atleast_2d(np.asarray(x, dtype=float)))
    sd = np.sqrt(var)
    improvement = y_best - mean
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(sd > 0, improvement / np.where(sd > 0, sd, 1.0), 0.0)
    ei = np.where(
        sd > 0,
        improvement * norm.cdf(z) + sd * norm.pdf(z),
        np.maximum(improvement, 0.0),
    )
    return ei if np.ndim(x) > 1 else float(ei[0])


def propose_ei(gp: GpPosterior, y_best: float, inner) -> Proposal:
    """Maximize expected improvement over the incumbent (as a minimization)."""

    def neg_ei(x):
        return -expected_improvement(gp, x, y_best)

    x, f = inner(neg_ei, None)
    return Proposal(x, Branch.DETERMINISTIC, float(f))


def propose_lcb(gp: GpPosterior, lcb_kappa: float, inner) -> Proposal:
    """Minimize the lower confidence bound mean - kappa * sd."""

    def lcb(x):
        mean, var = predict(gp, x)
        return mean - lcb_kappa * np.sqrt(var)

    x, f = inner(lcb, None)
    return Proposal(x, Branch.DETERMINISTIC, float(f))


def dedup_guard(
    x_cand,
    rows,
    rng: np.random.Generator,
    min_distance: float = DEDUP_DISTANCE,
) -> np.ndarray:
    """Keep proposals separated from existing observations.

    ``rows`` are the standardized dataset inputs.  A candidate closer than
    ``min_distance`` to any row is nudged by uniform noise of radius 1e-6
    (clamped to the unit cube) until separated, up to 100 attempts.
    """
    x = np.asarray(x_cand, dtype=float).copy()
    rows = np.atleast_2d(np.asarray(rows, dtype=float))

    def separated(p):
        return float(np.min(np.linalg.norm(rows - p, axis=1))) >= min_distance

    if separated(x):
        return x
    for _ in range(_DEDUP_ATTEMPTS):
        candidate = x + rng.uniform(-_DEDUP_RADIUS, _DEDUP_RADIUS, x.size)
        candidate = np.clip(candidate, 0.0, 1.0)
        if separated(candidate):
            return candidate
    raise ProposalError(
        f"could not separate proposal from existing observations after "
        f"{_DEDUP_ATTEMPTS} perturbations of radius {_DEDUP_RADIUS}"
    )


def propose(spec: PolicySpec, gp: GpPosterior, streams, inner) -> Proposal:
    """Dispatch on the policy kind and apply the deduplication guard.

    ``streams`` is a mapping with independent generators under the keys
    ``"switch"``, ``"feature"``, ``"weight"``, and ``"dedup"``.
    """
    if spec.kind is PolicyKind.GENERIC_TS:
        proposal = propose_generic_ts(
            gp, spec.n_spectral, streams["feature"], streams["weight"], inner
        )
    elif spec.kind is PolicyKind.AVERAGING_TS:
        proposal = propose_averaging_ts(
            gp, spec.n_paths, spec.n_spectral, streams["feature"], streams["weight"], inner
        )
    elif spec.kind is PolicyKind.EPS_GREEDY_TS:
        proposal = propose_eps_greedy_ts(
            gp,
            spec.epsilon,
            spec.n_paths,
            spec.n_spectral,
            streams["switch"],
            streams["feature"],
            streams["weight"],
            inner,
        )
    elif spec.kind is PolicyKind.EI:
        proposal = propose_ei(gp, float(np.min(gp.y_train)), inner)
    else:
        proposal = propose_lcb(gp, spec.lcb_kappa, inner)
    x = dedup_guard(proposal.x, gp.x_train, streams["dedup"])
    if x is not proposal.x:
        proposal = Proposal(x, proposal.branch, proposal.acq_value)
    return proposal
