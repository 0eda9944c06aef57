"""Epsilon-greedy Thompson sampling for Gaussian-process Bayesian optimization.

The library couples an exact GP surrogate with spectral posterior sampling:
analytic sample paths built from random cosine features are minimized by a
deterministic DIRECT search plus gradient-based polish.  An epsilon-greedy
switch alternates between minimizing a single path (exploration) and the
average of many paths (exploitation).  A batch harness runs repeated seeded
trials and emits plot-ready CSV or JSON-lines files; the same machinery is
exposed through a CLI and a FastAPI service.
"""

__version__ = "0.1.0"

from .benchmarks import (
    ExternalObjective,
    NoiseSpec,
    ObjectiveSpec,
    ackley2,
    benchmark,
    external_objective,
    lhs_design,
    list_benchmarks,
    observe,
    rosenbrock6,
)
from .exceptions import (
    EpsboError,
    ModelFitError,
    ObjectiveError,
    OptimizerError,
    ProposalError,
)
from .experiment import (
    ExperimentConfig,
    IterationRow,
    SummaryStats,
    TrialRecord,
    emit_results,
    load_rows,
    run_experiment,
    run_trial,
    summarize,
    trial_streams,
)
from .gp import (
    Dataset,
    GpPosterior,
    Standardizer,
    build_posterior,
    fit_gp,
    fit_standardizer,
    log_marginal_likelihood,
    predict,
)
from .inner_opt import (
    DirectConfig,
    LocalConfig,
    direct_minimize,
    local_refine,
    make_inner,
    minimize_acquisition,
)
from .kernels import (
    KernelFamily,
    KernelSpec,
    gram_matrix,
    kernel_eval,
    sample_spectral_points,
    spectral_density,
)
from .policies import (
    Branch,
    PolicyKind,
    PolicySpec,
    Proposal,
    dedup_guard,
    expected_improvement,
    propose,
    propose_averaging_ts,
    propose_eps_greedy_ts,
    propose_ei,
    propose_generic_ts,
    propose_lcb,
)
from .rff import (
    AveragedPath,
    FeatureMap,
    SamplePath,
    WeightPosterior,
    build_feature_map,
    draw_averaged_path,
    draw_path,
    draw_weights,
    weight_posterior,
)
