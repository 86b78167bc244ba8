"""Metrics, replica orchestration and output emission.

Replica ``k`` always runs on the seed ``replica_seed(base_seed, k)``, so its
results do not depend on how many replicas run, in which order, or on how
many workers (``jobs``). All CSV output uses 9 significant digits and no
locale-dependent formatting, so reruns are byte-identical.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import stats

from . import analytic, des, hybrid, mobility
from .scenario import Scenario, spec_hash
from .seeding import replica_seed
from . import __version__


class AlignmentError(ValueError):
    """Series cannot be aggregated or compared on a common time grid."""


class HitRateSample(NamedTuple):
    time_s: float
    scope: str              # "global" | "community:<id>" | "channel:<id>" | "rank:<k>"
    value: float
    replica: int


#: fixed rank set reported for region-scale runs
REPORT_RANKS = (1, 1000, 2500, 5000, 10000)


def _fmt(x: float) -> str:
    return f"{x:.9g}"


# ---------------------------------------------------------------------------
# Aggregation and comparison
# ---------------------------------------------------------------------------

def hit_rate_series(samples: list[HitRateSample], confidence: bool = False
                    ) -> dict[str, tuple[np.ndarray, np.ndarray, np.ndarray | None]]:
    """Per-scope mean over replicas on their shared time grid.

    Returns ``scope -> (times, mean, ci_halfwidth | None)``; the half widths
    are 95% Student-t intervals over replicas (undefined for one replica).
    Raises :class:`AlignmentError` when replicas sampled different grids.
    """
    by_scope: dict[str, dict[int, list[tuple[float, float]]]] = {}
    for s in samples:
        by_scope.setdefault(s.scope, {}).setdefault(s.replica, []).append(
            (s.time_s, s.value))
    out = {}
    for scope, replicas in by_scope.items():
        grids = []
        values = []
        for rep in sorted(replicas):
            pts = replicas[rep]
            grids.append(np.array([p[0] for p in pts]))
            values.append(np.array([p[1] for p in pts]))
        for g in grids[1:]:
            if len(g) != len(grids[0]) or not np.array_equal(g, grids[0]):
                raise AlignmentError(f"scope {scope}: replicas sampled "
                                     "different time grids")
        mat = np.stack(values)
        mean = mat.mean(axis=0)
        half = None
        n = mat.shape[0]
        if confidence and n >= 2:
            sd = mat.std(axis=0, ddof=1)
            half = stats.t.ppf(0.975, n - 1) * sd / np.sqrt(n)
        out[scope] = (grids[0], mean, half)
    return out


def step_interp(times: np.ndarray, values: np.ndarray, at: np.ndarray) -> np.ndarray:
    """Right-continuous piecewise-constant interpolation (event series hold
    their value between samples)."""
    idx = np.searchsorted(times, at, side="right") - 1
    if np.any(idx < 0):
        raise AlignmentError("interpolation before the first sample")
    return values[idx]


def compare_series(a: tuple[np.ndarray, np.ndarray],
                   b: tuple[np.ndarray, np.ndarray]) -> dict[str, float]:
    """Gap statistics between two aggregated series over their overlapping
    span (series may start at different times)."""
    (ta, va), (tb, vb) = a, b
    if len(ta) == 0 or len(tb) == 0:
        raise AlignmentError("empty series")
    lo = max(ta[0], tb[0])
    hi = min(ta[-1], tb[-1])
    if hi < lo:
        raise AlignmentError("series do not overlap in time")
    grid = np.unique(np.concatenate([
        ta[(ta >= lo) & (ta <= hi)], tb[(tb >= lo) & (tb <= hi)], [lo, hi]]))
    ga = step_interp(ta, va, grid)
    gb = step_interp(tb, vb, grid)
    gaps = np.abs(ga - gb)
    return {"max_abs_gap": float(gaps.max()),
            "mean_abs_gap": float(gaps.mean()),
            "final_gap": float(gaps[-1])}


# ---------------------------------------------------------------------------
# Replica fan-out
# ---------------------------------------------------------------------------

def _des_task(args) -> des.DesResult:
    scenario, seed, sampling = args
    return des.run_des(scenario, sampling_interval=sampling, seed=seed)


def _hybrid_task(args) -> hybrid.HybridResult:
    scenario, seed, mode, recog, sampling = args
    return hybrid.run_hybrid(scenario, mode=mode, seed=seed,
                             channel_recognition=recog,
                             sampling_interval=sampling)


def _fan_out(task, arglist, jobs: int):
    if jobs <= 1 or len(arglist) <= 1:
        return [task(a) for a in arglist]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(task, arglist))


def tick_grid(scenario: Scenario, sampling_interval: float | None = None
              ) -> np.ndarray:
    spec = scenario.spec
    if sampling_interval is None:
        sampling_interval = spec.output.sampling_interval
    ticks = list(np.arange(0.0, spec.duration, sampling_interval))
    if not ticks or ticks[-1] < spec.duration:
        ticks.append(spec.duration)
    return np.array(ticks)


def run_des_replicas(scenario: Scenario, replicas: int = 1, jobs: int = 1,
                     sampling_interval: float | None = None
                     ) -> tuple[list[des.DesResult], list[HitRateSample]]:
    args = [(scenario, replica_seed(scenario.spec.base_seed, k), sampling_interval)
            for k in range(replicas)]
    results = _fan_out(_des_task, args, jobs)
    samples = [HitRateSample(t, scope, v, k)
               for k, res in enumerate(results)
               for (t, scope, v) in res.samples]
    return results, samples


def run_hybrid_replicas(scenario: Scenario, replicas: int = 1, jobs: int = 1,
                        mode: str | None = None,
                        channel_recognition: bool | None = None,
                        sampling_interval: float | None = None
                        ) -> tuple[list[hybrid.HybridResult], list[HitRateSample]]:
    args = [(scenario, replica_seed(scenario.spec.base_seed, k), mode,
             channel_recognition, sampling_interval)
            for k in range(replicas)]
    results = _fan_out(_hybrid_task, args, jobs)
    grid = tick_grid(scenario, sampling_interval)
    grid_set = set(float(t) for t in grid)
    samples = []
    for k, res in enumerate(results):
        for (t, scope, v) in res.samples:
            if scope != "global" or t in grid_set:
                samples.append(HitRateSample(t, scope, v, k))
    return results, samples


def aggregate_on_grid(samples: list[HitRateSample], grid: np.ndarray,
                      scope: str = "global", confidence: bool = False):
    """Aggregate one scope restricted to the cadence grid (drops per-event
    samples, which differ across replicas)."""
    grid_set = set(float(t) for t in grid)
    filtered = [s for s in samples if s.scope == scope and s.time_s in grid_set]
    series = hit_rate_series(filtered, confidence=confidence)
    return series[scope]


# ---------------------------------------------------------------------------
# Output emission
# ---------------------------------------------------------------------------

@dataclass
class RunManifest:
    scenario_hash: str
    base_seed: int
    engine: str
    mode: str
    replicas: int
    jobs: int
    code_version: str = __version__
    wall_clock_s: float = 0.0
    outputs: tuple[str, ...] = ()

    def to_text(self) -> str:
        lines = [
            f"scenario_hash = {self.scenario_hash}",
            f"base_seed = {self.base_seed}",
            f"engine = {self.engine}",
            f"mode = {self.mode}",
            f"replicas = {self.replicas}",
            f"jobs = {self.jobs}",
            f"code_version = {self.code_version}",
            f"wall_clock_s = {_fmt(self.wall_clock_s)}",
            f"outputs = {','.join(self.outputs)}",
        ]
        return "\n".join(lines) + "\n"


def hitrate_csv(samples: list[HitRateSample]) -> str:
    rows = ["time_s,scope,value,replica"]
    ordered = sorted(samples, key=lambda s: (s.replica, s.scope, s.time_s))
    rows += [f"{_fmt(s.time_s)},{s.scope},{_fmt(s.value)},{s.replica}"
             for s in ordered]
    return "\n".join(rows) + "\n"


def parse_hitrate_csv(text: str) -> list[HitRateSample]:
    lines = text.strip().splitlines()
    if not lines or lines[0] != "time_s,scope,value,replica":
        raise AlignmentError("not a hitrate csv")
    out = []
    for line in lines[1:]:
        t, scope, v, rep = line.split(",")
        out.append(HitRateSample(float(t), scope, float(v), int(rep)))
    return out


def des_replication_csv(scenario: Scenario, results: list[des.DesResult]) -> str:
    """Replica-averaged per-channel replication (held anywhere / N)."""
    ranks = analytic.channel_ranks(
        np.bincount(scenario.subscription, minlength=scenario.n_channels))
    times = results[0].replication_times
    mean_rep = np.mean([r.replication for r in results], axis=0)
    rows = ["step,time_s,channel_rank,item_class,r"]
    for i, t in enumerate(times):
        for ch in range(scenario.n_channels):
            rows.append(f"{i},{_fmt(t)},{ranks[ch]},{ch},{_fmt(mean_rep[i, ch])}")
    return "\n".join(rows) + "\n"


def analytic_replication_csv(result: analytic.SteadyStateResult,
                             config: analytic.CommunityModelConfig) -> str:
    ranks = analytic.channel_ranks(np.asarray(config.pop))
    rows = ["step,time_s,channel_rank,item_class,r"]
    secs = result.trace_seconds()
    for i, step in enumerate(result.trace_steps):
        for a, cls in enumerate(config.classes):
            rows.append(f"{step},{_fmt(secs[i])},{ranks[cls.channel]},{a},"
                        f"{_fmt(result.trace_r[i, a])}")
    return "\n".join(rows) + "\n"


def analytic_trace_csv(result: analytic.SteadyStateResult,
                       config: analytic.CommunityModelConfig) -> str:
    """Full model trace with cache probabilities alongside replication."""
    ranks = analytic.channel_ranks(np.asarray(config.pop))
    rows = ["step,time_s,channel_rank,item_class,r,p_sc,p_oc"]
    secs = result.trace_seconds()
    for i, step in enumerate(result.trace_steps):
        for a, cls in enumerate(config.classes):
            rows.append(
                f"{step},{_fmt(secs[i])},{ranks[cls.channel]},{a},"
                f"{_fmt(result.trace_r[i, a])},{_fmt(result.trace_p_sc[i, a])},"
                f"{_fmt(result.trace_p_oc[i, a])}")
    return "\n".join(rows) + "\n"


def events_csv(events_log: list[tuple[float, int, str, int, int]]) -> str:
    rows = ["time_s,traveller,kind,community,deposited_count"]
    rows += [f"{_fmt(t)},{trav},{kind},{comm},{dep}"
             for (t, trav, kind, comm, dep) in events_log]
    return "\n".join(rows) + "\n"


def contact_trace_csv(events: list[mobility.ContactEvent]) -> str:
    rows = ["time_s,node_a,node_b"]
    rows += [f"{_fmt(e.time)},{e.node_a},{e.node_b}" for e in events]
    return "\n".join(rows) + "\n"


def emit_outputs(out_dir: str, manifest: RunManifest,
                 files: dict[str, str]) -> list[str]:
    """Write the named text files plus ``manifest.txt``; returns the paths."""
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for name, text in files.items():
        path = os.path.join(out_dir, name)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        written.append(path)
    manifest.outputs = tuple(sorted(files))
    mpath = os.path.join(out_dir, "manifest.txt")
    with open(mpath, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(manifest.to_text())
    written.append(mpath)
    return written


def make_manifest(scenario: Scenario, engine: str, mode: str, replicas: int,
                  jobs: int, started: float) -> RunManifest:
    return RunManifest(scenario_hash=spec_hash(scenario.spec),
                       base_seed=scenario.spec.base_seed,
                       engine=engine, mode=mode, replicas=replicas, jobs=jobs,
                       wall_clock_s=time.monotonic() - started)
