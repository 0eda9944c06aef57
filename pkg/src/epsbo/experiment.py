"""Batch experiment runner: repeated seeded trials, summaries, and emission.

A trial owns a set of named random streams derived from ``(base_seed,
trial_id)``: the initial design, the branch switch, the spectral features,
the path weights, the likelihood multistart, observation noise, and the
deduplication guard each consume their own stream.  Initial designs
therefore depend only on the seed pair and the objective, never on the
policy, and the epsilon extremes of the greedy policy reproduce the plain
policies bit for bit.  Everything except wall-clock columns is a pure
function of the configuration and seed.
"""

from __future__ import annotations

import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .benchmarks import NoiseSpec, ObjectiveSpec, benchmark, external_objective, lhs_design, observe
from .exceptions import ModelFitError, ObjectiveError, OptimizerError, ProposalError
from .gp import Dataset, fit_gp
from .inner_opt import make_inner
from .kernels import KernelFamily
from .policies import PolicySpec, propose

LOG_ERROR_FLOOR = 1e-16
THREAD_CAP_ENV = "EPS_TS_BO_THREADS"

_STREAM_NAMES = ("design", "switch", "feature", "weight", "fit", "noise", "dedup")


def trial_streams(base_seed: int, trial_id: int) -> dict[str, np.random.Generator]:
    """Independent named generators for one trial."""
    return {
        name: np.random.default_rng(np.random.SeedSequence((base_seed, trial_id, i)))
        for i, name in enumerate(_STREAM_NAMES)
    }


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce an experiment."""

    policy: PolicySpec
    n_init: int
    n_iters: int
    objective: str | None = None
    external_cmd: tuple[str, ...] | None = None
    external_box: tuple[tuple[float, float], ...] | None = None
    external_timeout: float = 60.0
    external_f_star: float | None = None
    n_trials: int = 1
    base_seed: int = 0
    kernel_family: KernelFamily = KernelFamily.ARD_SE
    noise_sd: float = 1e-3
    obs_noise_sd: float = 0.0
    out_path: str | None = None
    out_format: str = "csv"
    n_workers: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "kernel_family", KernelFamily(self.kernel_family))
        if self.external_cmd is not None:
            object.__setattr__(self, "external_cmd", tuple(self.external_cmd))
        if self.external_box is not None:
            object.__setattr__(
                self,
                "external_box",
                tuple((float(lo), float(hi)) for lo, hi in self.external_box),
            )
        problems = validate_config(self)
        if problems:
            raise ValueError("; ".join(problems))


def validate_config(cfg: ExperimentConfig) -> list[str]:
    """Collect human-readable complaints, one per offending field."""
    problems = []
    if (cfg.objective is None) == (cfg.external_cmd is None):
        problems.append("objective: exactly one of a benchmark name or an external command is required")
    if cfg.objective is not None and cfg.external_box is not None:
        problems.append("external_box: only valid together with external_cmd")
    if cfg.external_cmd is not None and cfg.external_box is None:
        problems.append("external_box: required with external_cmd")
    if cfg.n_init < 2:
        problems.append(f"n_init: must be >= 2, got {cfg.n_init}")
    if cfg.n_iters < 1:
        problems.append(f"n_iters: must be >= 1, got {cfg.n_iters}")
    if cfg.n_trials < 1:
        problems.append(f"n_trials: must be >= 1, got {cfg.n_trials}")
    if cfg.base_seed < 0:
        problems.append(f"base_seed: must be >= 0, got {cfg.base_seed}")
    if cfg.noise_sd <= 0:
        problems.append(f"noise_sd: must be positive, got {cfg.noise_sd}")
    if cfg.obs_noise_sd < 0:
        problems.append(f"obs_noise_sd: must be >= 0, got {cfg.obs_noise_sd}")
    if cfg.out_format not in ("csv", "jsonl"):
        problems.append(f"out_format: must be 'csv' or 'jsonl', got {cfg.out_format!r}")
    if cfg.n_workers < 1:
        problems.append(f"n_workers: must be >= 1, got {cfg.n_workers}")
    if cfg.external_timeout <= 0:
        problems.append(f"external_timeout: must be positive, got {cfg.external_timeout}")
    return problems


@dataclass(frozen=True)
class IterationRow:
    """One BO iteration of one trial, in problem units."""

    k: int
    branch: str
    x: tuple[float, ...]
    y: float
    y_min: float
    log_error: float | None
    proposal_s: float
    iter_s: float


@dataclass(frozen=True)
class TrialRecord:
    """Per-iteration history of one trial; ``error`` marks an aborted trial.

    The initial design is kept on the record (not emitted) so that fair
    seed coupling across policies can be checked directly.
    """

    trial_id: int
    n_init: int
    rows: tuple[IterationRow, ...]
    error: str | None = None
    wall_time_s: float = 0.0
    initial_x: tuple[tuple[float, ...], ...] = ()
    initial_y: tuple[float, ...] = ()


@dataclass(frozen=True)
class SummaryStats:
    """Across-trial quartiles per iteration plus runtime aggregates."""

    metric: str
    iterations: tuple[int, ...]
    median: tuple[float, ...]
    q1: tuple[float, ...]
    q3: tuple[float, ...]
    mean_proposal_s: tuple[float, ...]
    mean_trial_s: float
    branch_mean_proposal_s: dict[str, float] = field(default_factory=dict)
    n_trials: int = 0
    n_failed: int = 0


def _resolve_objective(cfg: ExperimentConfig) -> ObjectiveSpec:
    if cfg.objective is not None:
        return benchmark(cfg.objective)
    return external_objective(
        cfg.external_cmd,
        cfg.external_box,
        timeout=cfg.external_timeout,
        f_star=cfg.external_f_star,
    )


def run_trial(cfg: ExperimentConfig, trial_id: int, objective: ObjectiveSpec | None = None) -> TrialRecord:
    """One full optimization trial: design, then fit / propose / observe loops.

    Model-fit, optimizer, objective, and proposal failures abort the trial
    and are recorded on the returned record instead of raising.
    """
    own_objective = objective is None
    spec_obj = _resolve_objective(cfg) if objective is None else objective
    try:
        return _run_trial_inner(cfg, trial_id, spec_obj)
    finally:
        if own_objective:
            spec_obj.close()


def _run_trial_inner(cfg: ExperimentConfig, trial_id: int, spec_obj: ObjectiveSpec) -> TrialRecord:
    streams = trial_streams(cfg.base_seed, trial_id)
    noise = NoiseSpec(cfg.obs_noise_sd)
    inner = make_inner(spec_obj.dim)
    t_start = time.perf_counter()
    rows: list[IterationRow] = []
    error = None
    initial_x: tuple = ()
    initial_y: tuple = ()
    try:
        x_init = lhs_design(spec_obj.dim, cfg.n_init, spec_obj.box, streams["design"])
        initial_x = tuple(tuple(float(v) for v in row) for row in x_init)
        y_init = [observe(spec_obj, noise, x, streams["noise"]) for x in x_init]
        initial_y = tuple(float(v) for v in y_init)
        data = Dataset(x_init, y_init)
        y_min = float(np.min(data.y))
        for k in range(1, cfg.n_iters + 1):
            t_iter = time.perf_counter()
            gp = fit_gp(data, spec_obj.box, cfg.kernel_family, cfg.noise_sd, streams["fit"])
            t_prop = time.perf_counter()
            proposal = propose(cfg.policy, gp, streams, inner)
            proposal_s = time.perf_counter() - t_prop
            x_raw = gp.standardizer.untransform_x(proposal.x)
            x_raw = np.clip(x_raw, spec_obj.box[:, 0], spec_obj.box[:, 1])
            y = observe(spec_obj, noise, x_raw, streams["noise"], y_scale=gp.standardizer.y_std)
            data = data.append(x_raw, y)
            y_min = min(y_min, y)
            if spec_obj.f_star is not None:
                log_error = math.log10(max(y_min - spec_obj.f_star, LOG_ERROR_FLOOR))
            else:
                log_error = None
            rows.append(
                IterationRow(
                    k=k,
                    branch=proposal.branch.value,
                    x=tuple(float(v) for v in x_raw),
                    y=float(y),
                    y_min=float(y_min),
                    log_error=log_error,
                    proposal_s=proposal_s,
                    iter_s=time.perf_counter() - t_iter,
                )
            )
    except (ModelFitError, ObjectiveError, OptimizerError, ProposalError) as exc:
        error = f"{type(exc).__name__}: {exc}"
    return TrialRecord(
        trial_id=trial_id,
        n_init=cfg.n_init,
        rows=tuple(rows),
        error=error,
        wall_time_s=time.perf_counter() - t_start,
        initial_x=initial_x,
        initial_y=initial_y,
    )


def _worker_count(cfg: ExperimentConfig) -> int:
    cap = os.environ.get(THREAD_CAP_ENV)
    workers = cfg.n_workers
    if cap is not None:
        try:
            workers = min(workers, max(1, int(cap)))
        except ValueError:
            raise ValueError(f"{THREAD_CAP_ENV} must be an integer, got {cap!r}") from None
    return max(1, workers)


def run_experiment(cfg: ExperimentConfig) -> tuple[list[TrialRecord], SummaryStats]:
    """Run ``n_trials`` trials with seeds base_seed + 0 .. n_trials - 1.

    Different policies compared under the same base seed therefore share
    identical initial designs per trial index.  Trials may run concurrently
    (capped by the EPS_TS_BO_THREADS environment variable); results are
    ordered by trial id regardless of completion order.
    """
    trial_ids = list(range(cfg.n_trials))
    workers = _worker_count(cfg)
    if workers == 1:
        records = [run_trial(cfg, t) for t in trial_ids]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(lambda t: run_trial(cfg, t), trial_ids))
    records.sort(key=lambda r: r.trial_id)
    return records, summarize(records)


def sorted_quantile(values, q: float) -> float:
    """Linear-interpolation quantile: v[lo] + (v[hi] - v[lo]) * frac."""
    v = sorted(float(x) for x in values)
    if not v:
        raise ValueError("quantile of an empty sequence")
    h = (len(v) - 1) * q
    lo = math.floor(h)
    hi = math.ceil(h)
    return v[lo] + (v[hi] - v[lo]) * (h - lo)


def summarize(records: list[TrialRecord]) -> SummaryStats:
    """Across-trial quartiles of log error (or best value) per iteration.

    Aborted trials are excluded from the statistics and counted in
    ``n_failed``.  The metric falls back from log error to the incumbent
    value when any objective lacks a known optimum.
    """
    completed = [r for r in records if r.error is None]
    n_failed = len(records) - len(completed)
    if not completed:
        return SummaryStats("log_error", (), (), (), (), (), 0.0, {}, len(records), n_failed)
    use_log = all(row.log_error is not None for r in completed for row in r.rows)
    metric = "log_error" if use_log else "y_min"

    n_iters = max(len(r.rows) for r in completed)
    iterations, median, q1, q3, mean_prop = [], [], [], [], []
    for k in range(1, n_iters + 1):
        values, times = [], []
        for r in completed:
            if len(r.rows) >= k:
                row = r.rows[k - 1]
                values.append(row.log_error if use_log else row.y_min)
                times.append(row.proposal_s)
        iterations.append(k)
        median.append(sorted_quantile(values, 0.5))
        q1.append(sorted_quantile(values, 0.25))
        q3.append(sorted_quantile(values, 0.75))
        mean_prop.append(float(np.mean(times)))

    branch_times: dict[str, list[float]] = {}
    for r in completed:
        for row in r.rows:
            branch_times.setdefault(row.branch, []).append(row.proposal_s)
    branch_means = {b: float(np.mean(ts)) for b, ts in sorted(branch_times.items())}
    return SummaryStats(
        metric=metric,
        iterations=tuple(iterations),
        median=tuple(median),
        q1=tuple(q1),
        q3=tuple(q3),
        mean_proposal_s=tuple(mean_prop),
        mean_trial_s=float(np.mean([r.wall_time_s for r in completed])),
        branch_mean_proposal_s=branch_means,
        n_trials=len(records),
        n_failed=n_failed,
    )


def _fmt(v) -> str:
    return "" if v is None else format(float(v), ".17g")


def iteration_rows(records: list[TrialRecord]) -> list[dict]:
    """Flatten records into row dictionaries matching the emitted schema."""
    out = []
    for record in records:
        for row in record.rows:
            entry: dict = {"trial": record.trial_id, "iter": row.k, "branch": row.branch}
            for j, v in enumerate(row.x, start=1):
                entry[f"x_{j}"] = v
            entry.update(
                y=row.y,
                y_min=row.y_min,
                log_error=row.log_error,
                proposal_s=row.proposal_s,
                iter_s=row.iter_s,
            )
            out.append(entry)
    return out


def summary_rows(stats: SummaryStats) -> list[dict]:
    """Per-iteration summary entries matching the emitted summary schema."""
    return [
        {
            "iter": k,
            "median": stats.median[i],
            "q1": stats.q1[i],
            "q3": stats.q3[i],
            "mean_proposal_s": stats.mean_proposal_s[i],
        }
        for i, k in enumerate(stats.iterations)
    ]


def trial_errors(records: list[TrialRecord]) -> list[dict]:
    return [
        {"trial": r.trial_id, "error": r.error} for r in records if r.error is not None
    ]


def summary_path_for(path: Path) -> Path:
    suffix = path.suffix
    return path.with_name(path.stem + ".summary" + (suffix or ""))


def _row_columns(rows: list[dict]) -> list[str]:
    dim = 0
    for row in rows:
        while f"x_{dim + 1}" in row:
            dim += 1
        break
    x_cols = [f"x_{j}" for j in range(1, dim + 1)]
    return ["trial", "iter", "branch", *x_cols, "y", "y_min", "log_error", "proposal_s", "iter_s"]


def write_output_files(
    rows: list[dict], srows: list[dict], errors: list[dict], out_format: str, path
) -> list[Path]:
    """Write the per-iteration file and the summary file next to it.

    Numbers carry 17 significant digits so parsing them back reproduces the
    original float64 values exactly.  All content is rendered before any
    file is opened, so a write failure loses nothing.
    """
    if out_format not in ("csv", "jsonl"):
        raise ValueError(f"unknown output format {out_format!r}")
    path = Path(path)
    columns = _row_columns(rows)
    summary_columns = ["iter", "median", "q1", "q3", "mean_proposal_s"]

    if out_format == "csv":
        lines = [",".join(columns)]
        for row in rows:
            lines.append(
                ",".join(
                    str(row[c]) if c in ("trial", "iter", "branch") else _fmt(row.get(c))
                    for c in columns
                )
            )
        main_text = "\n".join(lines) + "\n"
        summary_lines = [",".join(summary_columns)]
        for s in srows:
            summary_lines.append(
                ",".join([str(s["iter"])] + [_fmt(s[c]) for c in summary_columns[1:]])
            )
        summary_text = "\n".join(summary_lines) + "\n"
    else:
        lines = [json.dumps({c: row.get(c) for c in columns}) for row in rows]
        lines.extend(json.dumps(e) for e in errors)
        main_text = "\n".join(lines) + "\n"
        summary_text = "\n".join(json.dumps(s) for s in srows) + "\n"

    summary_path = summary_path_for(path)
    path.write_text(main_text, encoding="utf-8")
    summary_path.write_text(summary_text, encoding="utf-8")
    return [path, summary_path]


def emit_results(
    records: list[TrialRecord], stats: SummaryStats, out_format: str, path
) -> list[Path]:
    """Render completed records plus summary to disk; see write_output_files."""
    return write_output_files(
        iteration_rows(records), summary_rows(stats), trial_errors(records), out_format, path
    )


def load_rows(path, out_format: str | None = None) -> list[dict]:
    """Parse an emitted per-iteration file back into row dictionaries."""
    path = Path(path)
    fmt = out_format or ("jsonl" if path.suffix == ".jsonl" else "csv")
    text = path.read_text(encoding="utf-8")
    rows = []
    if fmt == "csv":
        lines = [ln for ln in text.splitlines() if ln]
        header = lines[0].split(",")
        for line in lines[1:]:
            values = line.split(",")
            row: dict = {}
            for key, val in zip(header, values):
                if key in ("trial", "iter"):
                    row[key] = int(val)
                elif key == "branch":
                    row[key] = val
                else:
                    row[key] = None if val == "" else float(val)
            rows.append(row)
    else:
        for line in text.splitlines():
            if line:
                rows.append(json.loads(line))
    return rows


def non_time_fields(rows: list[dict]) -> list[dict]:
    """Rows with the wall-clock columns removed (for reproducibility checks)."""
    return [{k: v for k, v in r.items() if k not in ("proposal_s", "iter_s")} for r in rows]
