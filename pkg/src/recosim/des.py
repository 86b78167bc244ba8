"""Event-driven per-node simulation: replays a contact trace through the
pairwise exchange protocol. Full fidelity, small scale; the reference the
other engines are validated against.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import agent, mobility
from .scenario import Scenario
from .seeding import derive_seed, python_rng


class TraceError(ValueError):
    """Malformed contact trace (time regression, bad node ids, ...)."""


class RateError(ValueError):
    """Encounter rate undefined (empty trace)."""


@dataclass
class DesResult:
    samples: list[tuple[float, str, float]]   # (time_s, scope, hit rate)
    replication_times: np.ndarray              # (T,)
    replication: np.ndarray                    # (T, channels) held anywhere / N
    oc_replication: np.ndarray                 # (T, channels) cached / non-subscribers
    caches: list[agent.NodeCaches]
    n_events: int


def initial_caches(scenario: Scenario) -> list[agent.NodeCaches]:
    """One cache set per node. Initially generated items sit in ``li``; those
    of the generator's own channel are its first delivered content, so they
    seed ``sc``."""
    ipc = scenario.items_per_channel
    li_per_node: list[list[int]] = [[] for _ in range(scenario.n_nodes)]
    for item, holder in enumerate(scenario.holder):
        li_per_node[int(holder)].append(item)
    caches = []
    for node in range(scenario.n_nodes):
        sub = int(scenario.subscription[node])
        li = frozenset(li_per_node[node])
        sc = {a for a in li if a // ipc == sub}
        caches.append(agent.NodeCaches(subscription=sub, li=li, sc=sc))
    return caches


def run_des(scenario: Scenario, events: list[mobility.ContactEvent] | None = None,
            sampling_interval: float | None = None, seed: int = 0,
            audit: bool = False) -> DesResult:
    """Process contacts in time order, sampling hit rates and replication at a
    fixed cadence. Deterministic for a fixed ``(scenario, seed)``: the random
    stream of each contact is derived from the seed, the node pair and the
    event index, so scheduling details cannot perturb results.
    """
    spec = scenario.spec
    if sampling_interval is None:
        sampling_interval = spec.output.sampling_interval
    if events is None:
        layout = mobility.build_layout(scenario)
        events = mobility.generate_contact_trace(scenario, layout,
                                                 derive_seed(seed, "trace"))
    caches = initial_caches(scenario)
    params = spec.recognition
    ipc = scenario.items_per_channel

    ticks = list(np.arange(0.0, spec.duration, sampling_interval))
    if not ticks or ticks[-1] < spec.duration:
        ticks.append(spec.duration)

    subs_per_channel = np.bincount(scenario.subscription,
                                   minlength=scenario.n_channels)
    samples: list[tuple[float, str, float]] = []
    rep_rows: list[np.ndarray] = []
    oc_rows: list[np.ndarray] = []
    rep_times: list[float] = []

    def take_sample(t: float) -> None:
        hits = np.array([len(c.sc) for c in caches], dtype=np.float64) / ipc
        samples.append((t, "global", float(hits.mean())))
        for k in range(scenario.n_communities):
            m = scenario.members(k)
            samples.append((t, f"community:{k}", float(hits[m.start:m.stop].mean())))
        anywhere = np.zeros(scenario.n_items, dtype=np.int64)
        in_oc = np.zeros(scenario.n_items, dtype=np.int64)
        for c in caches:
            held = c.li | c.sc | set(c.oc)
            if held:
                anywhere[list(held)] += 1
            if c.oc:
                in_oc[list(c.oc)] += 1
        for ch in range(scenario.n_channels):
            if subs_per_channel[ch] > 0:
                sub_hits = hits[scenario.subscription == ch]
                samples.append((t, f"channel:{ch}", float(sub_hits.mean())))
        rep = anywhere.reshape(scenario.n_channels, ipc).mean(axis=1) / scenario.n_nodes
        non_subs = np.maximum(scenario.n_nodes - subs_per_channel, 1)
        ocr = in_oc.reshape(scenario.n_channels, ipc).mean(axis=1) / non_subs
        rep_rows.append(rep)
        oc_rows.append(ocr)
        rep_times.append(t)

    tick_i = 0
    last_t = 0.0
    for idx, ev in enumerate(events):
        if ev.time < last_t:
            raise TraceError(f"contact trace regresses at event {idx}: "
                             f"{ev.time} < {last_t}")
        last_t = ev.time
        while tick_i < len(ticks) and ticks[tick_i] <= ev.time:
            take_sample(ticks[tick_i])
            tick_i += 1
        a, b = ev.node_a, ev.node_b
        if a == b or not (0 <= a < scenario.n_nodes and 0 <= b < scenario.n_nodes):
            raise TraceError(f"bad node pair at event {idx}: ({a}, {b})")
        rng = python_rng(seed, "event", min(a, b), max(a, b), idx)
        if audit:
            visible_before = caches[a].holds() | caches[b].holds()
        agent.apply_encounter(caches[a], caches[b], params, ipc, rng)
        if audit:
            for node in (a, b):
                gained = caches[node].holds() - visible_before
                if gained:
                    raise AssertionError(f"node {node} conjured items {gained}")
                bad = agent.check_cache_invariants(caches[node], params, ipc)
                if bad:
                    raise AssertionError(f"node {node}: {bad}")
    while tick_i < len(ticks):
        take_sample(ticks[tick_i])
        tick_i += 1

    return DesResult(samples=samples,
                     replication_times=np.array(rep_times),
                     replication=np.array(rep_rows),
                     oc_replication=np.array(oc_rows),
                     caches=caches,
                     n_events=len(events))


def estimate_encounter_rate(trace: list[mobility.ContactEvent], node_count: int,
                            duration: float) -> float:
    """Encounters per node per second: each contact touches two nodes."""
    if not trace:
        raise RateError("cannot estimate an encounter rate from an empty trace")
    if node_count < 1 or duration <= 0:
        raise RateError("node_count and duration must be positive")
    return 2.0 * len(trace) / (node_count * duration)
