"""HTTP service wrapping the simulation engines.

The route handlers are thin bindings over plain service functions
(``svc_*``); the CLI calls the same functions in-process, so both surfaces
share one code path. Long runs can be submitted as background jobs and
polled.
"""

from __future__ import annotations

import dataclasses
import threading
import time
import uuid
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from . import __version__, analytic, harness, hybrid, mobility, presets
from .scenario import (ScenarioError, Scenario, generate_scenario, parse_spec,
                       spec_hash, spec_to_text, validate_scenario)


# ---------------------------------------------------------------------------
# Request / response models
# ---------------------------------------------------------------------------

class GenerateScenarioRequest(BaseModel):
    preset: str | None = None
    config_text: str | None = None
    seed: int | None = None


class ScenarioSummary(BaseModel):
    nodes: int
    communities: int
    channels: int
    items: int
    travellers: int


class GenerateScenarioResponse(BaseModel):
    config_text: str
    scenario_hash: str
    summary: ScenarioSummary
    violations: list[str]


class ValidateScenarioRequest(BaseModel):
    config_text: str


class ValidateScenarioResponse(BaseModel):
    violations: list[str]


class AnalyticRunRequest(BaseModel):
    config_text: str
    community: int = 0
    max_steps: int | None = None
    seed: int | None = None


class AnalyticClassResult(BaseModel):
    channel: int
    channel_rank: int
    class_size: int
    r0: float
    r: float
    p_sc: float
    p_oc: float


class AnalyticRunResponse(BaseModel):
    converged: bool
    steps: int
    encounter_rate: float
    classes: list[AnalyticClassResult]
    replication_csv: str
    trace_csv: str
    manifest_text: str


class DesRunRequest(BaseModel):
    config_text: str
    replicas: int = Field(default=1, ge=1)
    jobs: int = Field(default=1, ge=1)
    seed: int | None = None
    sampling_interval: float | None = None


class HybridRunRequest(BaseModel):
    config_text: str
    replicas: int = Field(default=1, ge=1)
    jobs: int = Field(default=1, ge=1)
    seed: int | None = None
    mode: str | None = None
    channel_recognition: bool | None = None
    sampling_interval: float | None = None


class RunResponse(BaseModel):
    engine: str
    final_hit_rate: float
    hitrate_csv: str
    replication_csv: str | None = None
    events_csv: str | None = None
    manifest_text: str


class CompareRequest(BaseModel):
    csv_a: str
    csv_b: str
    scope: str = "global"


class CompareResponse(BaseModel):
    max_abs_gap: float
    mean_abs_gap: float
    final_gap: float


class JobSubmitted(BaseModel):
    job_id: str


class JobStatus(BaseModel):
    job_id: str
    kind: str
    status: str            # queued | running | done | error
    error: str | None = None


# ---------------------------------------------------------------------------
# Service functions (shared by HTTP routes and the CLI)
# ---------------------------------------------------------------------------

def _materialise(config_text: str, seed: int | None) -> Scenario:
    spec = parse_spec(config_text)
    if seed is not None:
        spec = dataclasses.replace(spec, base_seed=seed)
    scenario = generate_scenario(spec)
    problems = validate_scenario(scenario)
    if problems:
        raise ScenarioError("; ".join(problems))
    return scenario


def svc_generate(req: GenerateScenarioRequest) -> GenerateScenarioResponse:
    if (req.preset is None) == (req.config_text is None):
        raise ScenarioError("provide exactly one of preset or config_text")
    if req.preset is not None:
        try:
            spec = presets.get_preset(req.preset)
        except KeyError as exc:
            raise ScenarioError(str(exc)) from None
    else:
        spec = parse_spec(req.config_text)
    if req.seed is not None:
        spec = dataclasses.replace(spec, base_seed=req.seed)
    scenario = generate_scenario(spec)
    violations = validate_scenario(scenario)
    return GenerateScenarioResponse(
        config_text=spec_to_text(spec),
        scenario_hash=spec_hash(spec),
        summary=ScenarioSummary(nodes=scenario.n_nodes,
                                communities=scenario.n_communities,
                                channels=scenario.n_channels,
                                items=scenario.n_items,
                                travellers=int(scenario.is_traveller.sum())),
        violations=violations)


def svc_validate(req: ValidateScenarioRequest) -> ValidateScenarioResponse:
    spec = parse_spec(req.config_text)
    problems = spec.check()
    if not problems:
        problems = validate_scenario(generate_scenario(spec))
    return ValidateScenarioResponse(violations=problems)


def svc_run_analytic(req: AnalyticRunRequest) -> AnalyticRunResponse:
    started = time.monotonic()
    scenario = _materialise(req.config_text, req.seed)
    if not 0 <= req.community < scenario.n_communities:
        raise ScenarioError(f"community {req.community} out of range")
    rate = mobility.nominal_encounter_rate(scenario)
    config = analytic.config_from_scenario(scenario, req.community, rate)
    if req.max_steps is not None:
        config = dataclasses.replace(config, max_steps=req.max_steps)
    result = analytic.run_to_steady_state(config)
    ranks = analytic.channel_ranks(np.asarray(config.pop))
    classes = [AnalyticClassResult(channel=cls.channel,
                                   channel_rank=int(ranks[cls.channel]),
                                   class_size=cls.class_size, r0=cls.r0,
                                   r=float(result.r[i]),
                                   p_sc=float(result.p_sc[i]),
                                   p_oc=float(result.p_oc[i]))
               for i, cls in enumerate(config.classes)]
    manifest = harness.make_manifest(scenario, engine="analytic", mode="model",
                                     replicas=1, jobs=1, started=started)
    return AnalyticRunResponse(
        converged=result.converged, steps=result.steps,
        encounter_rate=rate, classes=classes,
        replication_csv=harness.analytic_replication_csv(result, config),
        trace_csv=harness.analytic_trace_csv(result, config),
        manifest_text=manifest.to_text())


def svc_run_des(req: DesRunRequest) -> RunResponse:
    started = time.monotonic()
    scenario = _materialise(req.config_text, req.seed)
    results, samples = harness.run_des_replicas(
        scenario, replicas=req.replicas, jobs=req.jobs,
        sampling_interval=req.sampling_interval)
    grid = harness.tick_grid(scenario, req.sampling_interval)
    _, mean, _ = harness.aggregate_on_grid(samples, grid)
    manifest = harness.make_manifest(scenario, engine="des", mode="trace",
                                     replicas=req.replicas, jobs=req.jobs,
                                     started=started)
    return RunResponse(engine="des", final_hit_rate=float(mean[-1]),
                       hitrate_csv=harness.hitrate_csv(samples),
                       replication_csv=harness.des_replication_csv(scenario, results),
                       manifest_text=manifest.to_text())


def svc_run_hybrid(req: HybridRunRequest) -> RunResponse:
    started = time.monotonic()
    scenario = _materialise(req.config_text, req.seed)
    results, samples = harness.run_hybrid_replicas(
        scenario, replicas=req.replicas, jobs=req.jobs, mode=req.mode,
        channel_recognition=req.channel_recognition,
        sampling_interval=req.sampling_interval)
    grid = harness.tick_grid(scenario, req.sampling_interval)
    _, mean, _ = harness.aggregate_on_grid(samples, grid)
    mode = req.mode or scenario.spec.hybrid.mode
    manifest = harness.make_manifest(scenario, engine="hybrid", mode=mode,
                                     replicas=req.replicas, jobs=req.jobs,
                                     started=started)
    events = None
    if scenario.spec.output.emit_events:
        events = harness.events_csv(results[0].events_log)
    return RunResponse(engine="hybrid", final_hit_rate=float(mean[-1]),
                       hitrate_csv=harness.hitrate_csv(samples),
                       events_csv=events,
                       manifest_text=manifest.to_text())


def svc_compare(req: CompareRequest) -> CompareResponse:
    series = []
    for text in (req.csv_a, req.csv_b):
        samples = harness.parse_hitrate_csv(text)
        agg = harness.hit_rate_series([s for s in samples if s.scope == req.scope])
        if req.scope not in agg:
            raise harness.AlignmentError(f"scope '{req.scope}' absent from csv")
        times, mean, _ = agg[req.scope]
        series.append((times, mean))
    gaps = harness.compare_series(series[0], series[1])
    return CompareResponse(**gaps)


# ---------------------------------------------------------------------------
# Background jobs
# ---------------------------------------------------------------------------

class _JobStore:
    def __init__(self, workers: int = 2):
        self._pool = ThreadPoolExecutor(max_workers=workers)
        self._lock = threading.Lock()
        self._jobs: dict[str, dict] = {}

    def submit(self, kind: str, fn, req) -> str:
        job_id = uuid.uuid4().hex
        with self._lock:
            self._jobs[job_id] = {"kind": kind, "status": "queued",
                                  "result": None, "error": None}

        def run():
            with self._lock:
                self._jobs[job_id]["status"] = "running"
            try:
                result = fn(req)
                with self._lock:
                    self._jobs[job_id].update(status="done", result=result)
            except Exception as exc:  # surfaced through the status endpoint
                with self._lock:
                    self._jobs[job_id].update(status="error", error=str(exc))

        self._pool.submit(run)
        return job_id

    def status(self, job_id: str) -> JobStatus:
        with self._lock:
            job = self._jobs.get(job_id)
            if job is None:
                raise KeyError(job_id)
            return JobStatus(job_id=job_id, kind=job["kind"],
                             status=job["status"], error=job["error"])

    def result(self, job_id: str):
        with self._lock:
            job = self._jobs.get(job_id)
            if job is None:
                raise KeyError(job_id)
            if job["status"] != "done":
                return None
            return job["result"]


# ---------------------------------------------------------------------------
# FastAPI app
# ---------------------------------------------------------------------------

def create_app() -> FastAPI:
    app = FastAPI(title="recosim", version=__version__)
    jobs = _JobStore()

    def guarded(fn, req):
        try:
            return fn(req)
        except (ScenarioError, ValueError, KeyError) as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "version": __version__}

    @app.post("/scenarios/generate", response_model=GenerateScenarioResponse)
    def generate(req: GenerateScenarioRequest):
        return guarded(svc_generate, req)

    @app.post("/scenarios/validate", response_model=ValidateScenarioResponse)
    def validate(req: ValidateScenarioRequest):
        return guarded(svc_validate, req)

    @app.post("/runs/analytic", response_model=AnalyticRunResponse)
    def run_analytic(req: AnalyticRunRequest):
        return guarded(svc_run_analytic, req)

    @app.post("/runs/des", response_model=RunResponse)
    def run_des(req: DesRunRequest):
        return guarded(svc_run_des, req)

    @app.post("/runs/hybrid", response_model=RunResponse)
    def run_hybrid(req: HybridRunRequest):
        return guarded(svc_run_hybrid, req)

    @app.post("/compare", response_model=CompareResponse)
    def compare(req: CompareRequest):
        return guarded(svc_compare, req)

    @app.post("/jobs/des", response_model=JobSubmitted)
    def submit_des(req: DesRunRequest):
        return JobSubmitted(job_id=jobs.submit("des", svc_run_des, req))

    @app.post("/jobs/hybrid", response_model=JobSubmitted)
    def submit_hybrid(req: HybridRunRequest):
        return JobSubmitted(job_id=jobs.submit("hybrid", svc_run_hybrid, req))

    @app.post("/jobs/analytic", response_model=JobSubmitted)
    def submit_analytic(req: AnalyticRunRequest):
        return JobSubmitted(job_id=jobs.submit("analytic", svc_run_analytic, req))

    @app.get("/jobs/{job_id}", response_model=JobStatus)
    def job_status(job_id: str):
        try:
            return jobs.status(job_id)
        except KeyError:
            raise HTTPException(status_code=404, detail="unknown job") from None

    @app.get("/jobs/{job_id}/result")
    def job_result(job_id: str):
        try:
            status = jobs.status(job_id)
        except KeyError:
            raise HTTPException(status_code=404, detail="unknown job") from None
        if status.status == "error":
            raise HTTPException(status_code=422, detail=status.error)
        result = jobs.result(job_id)
        if result is None:
            raise HTTPException(status_code=409, detail="job not finished")
        return result

    return app


app = create_app()
