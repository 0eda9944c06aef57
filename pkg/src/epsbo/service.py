"""HTTP service wrapping the experiment harness.

Experiments are long-running, so submission is asynchronous: POST an
experiment request, poll its job until done, then fetch the records.  Small
synchronous helpers (benchmark listing, config validation, health) round out
the API.  Jobs live in process memory; restart the server and they are gone.
"""

from __future__ import annotations

import threading
import traceback
from enum import Enum

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from . import __version__
from .benchmarks import benchmark, list_benchmarks
from .experiment import (
    ExperimentConfig,
    SummaryStats,
    TrialRecord,
    iteration_rows,
    run_experiment,
    summary_rows,
    trial_errors,
)
from .policies import PolicyKind, PolicySpec


class ExperimentRequest(BaseModel):
    """Mirror of the CLI flags for one experiment."""

    objective: str | None = None
    external_cmd: list[str] | None = None
    external_box: list[tuple[float, float]] | None = None
    external_timeout: float = 60.0
    policy: str = "eps-ts"
    epsilon: float = 0.5
    num_paths: int = Field(default=50, ge=1)
    spectral_points: int = Field(default=1000, ge=1)
    lcb_kappa: float = 2.0
    kernel: str = "ard-se"
    noise_sd: float = 1e-3
    obs_noise_sd: float = 0.0
    init: int = 10
    iters: int = 50
    trials: int = 1
    seed: int = 0
    parallel: int = 1

    def to_config(self) -> ExperimentConfig:
        spec = PolicySpec(
            kind=PolicyKind(self.policy),
            epsilon=self.epsilon,
            n_paths=self.num_paths,
            n_spectral=self.spectral_points,
            lcb_kappa=self.lcb_kappa,
        )
        return ExperimentConfig(
            policy=spec,
            n_init=self.init,
            n_iters=self.iters,
            objective=self.objective,
            external_cmd=tuple(self.external_cmd) if self.external_cmd else None,
            external_box=tuple(self.external_box) if self.external_box else None,
            external_timeout=self.external_timeout,
            n_trials=self.trials,
            base_seed=self.seed,
            kernel_family=self.kernel,
            noise_sd=self.noise_sd,
            obs_noise_sd=self.obs_noise_sd,
            n_workers=self.parallel,
        )


class ValidationResponse(BaseModel):
    valid: bool
    problems: list[str] = []


class BenchmarkInfo(BaseModel):
    name: str
    dim: int
    box: list[tuple[float, float]]
    f_star: float | None


class JobState(str, Enum):
    QUEUED = "queued"
    RUNNING = "running"
    DONE = "done"
    FAILED = "failed"


class SummaryRow(BaseModel):
    iter: int
    median: float
    q1: float
    q3: float
    mean_proposal_s: float


class JobStatus(BaseModel):
    job_id: str
    status: JobState
    error: str | None = None
    n_trials: int | None = None
    n_failed: int | None = None
    metric: str | None = None
    mean_trial_s: float | None = None
    branch_mean_proposal_s: dict[str, float] | None = None
    summary: list[SummaryRow] | None = None


class JobSubmitted(BaseModel):
    job_id: str
    status: JobState


class RecordsResponse(BaseModel):
    job_id: str
    rows: list[dict]
    errors: list[dict]


class HealthResponse(BaseModel):
    status: str
    version: str


class _Job:
    def __init__(self, job_id: str):
        self.job_id = job_id
        self.state = JobState.QUEUED
        self.error: str | None = None
        self.records: list[TrialRecord] | None = None
        self.stats: SummaryStats | None = None


class _JobStore:
    def __init__(self):
        self._lock = threading.Lock()
        self._jobs: dict[str, _Job] = {}
        self._counter = 0

    def submit(self, cfg: ExperimentConfig) -> _Job:
        with self._lock:
            self._counter += 1
            job = _Job(f"exp-{self._counter:04d}")
            self._jobs[job.job_id] = job

        def work():
            job.state = JobState.RUNNING
            try:
                records, stats = run_experiment(cfg)
            except Exception as exc:  # surfaced through the job status
                job.error = f"{type(exc).__name__}: {exc}"
                job.state = JobState.FAILED
                traceback.print_exc()
                return
            job.records, job.stats = records, stats
            job.state = JobState.DONE

        threading.Thread(target=work, daemon=True).start()
        return job

    def get(self, job_id: str) -> _Job:
        job = self._jobs.get(job_id)
        if job is None:
            raise HTTPException(status_code=404, detail=f"unknown job {job_id!r}")
        return job


def create_app() -> FastAPI:
    app = FastAPI(title="epsbo", version=__version__)
    store = _JobStore()

    @app.get("/health", response_model=HealthResponse)
    def health():
        return HealthResponse(status="ok", version=__version__)

    @app.get("/benchmarks", response_model=list[BenchmarkInfo])
    def benchmarks():
        out = []
        for name in list_benchmarks():
            spec = benchmark(name)
            out.append(
                BenchmarkInfo(
                    name=name,
                    dim=spec.dim,
                    box=[(float(lo), float(hi)) for lo, hi in spec.box],
                    f_star=spec.f_star,
                )
            )
        return out

    @app.post("/config/validate", response_model=ValidationResponse)
    def validate(request: ExperimentRequest):
        try:
            request.to_config()
        except ValueError as exc:
            return ValidationResponse(valid=False, problems=str(exc).split("; "))
        return ValidationResponse(valid=True)

    @app.post("/experiments", response_model=JobSubmitted, status_code=202)
    def submit(request: ExperimentRequest):
        try:
            cfg = request.to_config()
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from None
        job = store.submit(cfg)
        return JobSubmitted(job_id=job.job_id, status=job.state)

    @app.get("/experiments/{job_id}", response_model=JobStatus)
    def status(job_id: str):
        job = store.get(job_id)
        body = JobStatus(job_id=job.job_id, status=job.state, error=job.error)
        if job.stats is not None:
            stats = job.stats
            body.n_trials = stats.n_trials
            body.n_failed = stats.n_failed
            body.metric = stats.metric
            body.mean_trial_s = stats.mean_trial_s
            body.branch_mean_proposal_s = stats.branch_mean_proposal_s
            body.summary = [SummaryRow(**row) for row in summary_rows(stats)]
        return body

    @app.get("/experiments/{job_id}/records", response_model=RecordsResponse)
    def records(job_id: str):
        job = store.get(job_id)
        if job.state is not JobState.DONE:
            raise HTTPException(
                status_code=409, detail=f"job {job_id} is {job.state.value}, not done"
            )
        return RecordsResponse(
            job_id=job.job_id,
            rows=iteration_rows(job.records),
            errors=trial_errors(job.records),
        )

    return app


app = create_app()
