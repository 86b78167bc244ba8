"""Synthetic mobility: community cells on a grid, intra-community contact
traces and traveller enter/exit schedules.

Communities occupy disjoint square cells. Inside its current cell a node
moves by random waypoint (geometric mode) or is part of a homogeneously
mixing pool with Poisson pairwise contacts (homogeneous mode, the cheap
default). Travellers commute between their home cell and a single destination
cell; everything is deterministic per seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, TYPE_CHECKING

import numpy as np

from .seeding import derive_seed, generator

if TYPE_CHECKING:
    from .scenario import Scenario


class MobilityError(ValueError):
    pass


class ContactEvent(NamedTuple):
    time: float
    node_a: int
    node_b: int


class TravellerEvent(NamedTuple):
    time: float
    traveller: int
    kind: str              # "exit" | "enter"
    community: int


# Spatial density correction for random-waypoint: nodes concentrate around
# the cell centre, raising the pairwise meeting rate over uniform placement.
RWP_DENSITY_FACTOR = 1.3683


@dataclass(frozen=True)
class CommunityLayout:
    """Square cells on a dim x dim grid, row-major community assignment."""

    n_communities: int
    area_side: float
    grid_dim: int
    cell_side: float

    def cell_origin(self, community: int) -> tuple[float, float]:
        gx = community % self.grid_dim
        gy = community // self.grid_dim
        return gx * self.cell_side, gy * self.cell_side

    def centroid(self, community: int) -> tuple[float, float]:
        x0, y0 = self.cell_origin(community)
        return x0 + self.cell_side / 2, y0 + self.cell_side / 2

    def centroid_distance(self, a: int, b: int) -> float:
        xa, ya = self.centroid(a)
        xb, yb = self.centroid(b)
        return math.hypot(xa - xb, ya - yb)


def grid_layout(n_communities: int, area_side: float) -> CommunityLayout:
    """Smallest square grid holding all communities (extra cells stay empty)."""
    if n_communities < 1:
        raise MobilityError("need at least one community")
    if area_side <= 0:
        raise MobilityError("area_side must be > 0")
    dim = math.ceil(math.sqrt(n_communities))
    return CommunityLayout(n_communities=n_communities, area_side=area_side,
                           grid_dim=dim, cell_side=area_side / dim)


def build_layout(scenario: "Scenario") -> CommunityLayout:
    return grid_layout(scenario.spec.communities, scenario.spec.mobility.area_side)


def default_pair_rate(cell_side: float, transmission_range: float,
                      speed_min: float, speed_max: float) -> float:
    """Per-pair contact rate matching random-waypoint motion in one cell.

    Uses the standard exponential inter-meeting approximation
    ``2 * omega * r * E[v_rel] / A`` with ``E[v_rel] ~= (4/pi) * mean speed``.
    """
    mean_speed = (speed_min + speed_max) / 2.0
    rel_speed = (4.0 / math.pi) * mean_speed
    area = cell_side * cell_side
    return 2.0 * RWP_DENSITY_FACTOR * transmission_range * rel_speed / area


def nominal_encounter_rate(scenario: "Scenario") -> float:
    """Encounters per node per second inside its community; maps mean-field
    steps to seconds."""
    spec = scenario.spec
    cfg = spec.mobility
    rate = cfg.pair_contact_rate
    if rate <= 0:
        layout = grid_layout(spec.communities, cfg.area_side)
        rate = default_pair_rate(layout.cell_side, cfg.transmission_range,
                                 cfg.speed_min, cfg.speed_max)
    return rate * max(spec.nodes_per_community - 1, 1)


# ---------------------------------------------------------------------------
# Traveller schedules
# ---------------------------------------------------------------------------

def generate_traveller_schedule(scenario: "Scenario", layout: CommunityLayout,
                                seed: int, duration: float | None = None
                                ) -> list[TravellerEvent]:
    """Alternating exit/enter events for every traveller.

    Sojourn lengths are exponential with the configured mean; the first event
    of every traveller is an exit from its home community. A trip is emitted
    only if its enter fits inside the horizon, so streams always alternate.
    """
    spec = scenario.spec
    if duration is None:
        duration = spec.duration
    cfg = spec.mobility
    events: list[TravellerEvent] = []

    for trav in scenario.traveller_ids():
        trav = int(trav)
        rng = generator(seed, "traveller", trav)
        home = int(scenario.home[trav])
        dest = int(scenario.destination[trav])
        here, there = home, dest
        t = 0.0
        while True:
            t_exit = t + rng.exponential(cfg.mean_sojourn)
            if t_exit > duration:
                break
            if cfg.travel_time == "instant":
                travel = 0.0
            else:
                speed = rng.uniform(cfg.speed_min, cfg.speed_max)
                dist = layout.centroid_distance(here, there)
                travel = dist / speed if speed > 0 else float("inf")
            t_enter = t_exit + travel
            if t_enter > duration:
                break
            events.append(TravellerEvent(t_exit, trav, "exit", here))
            events.append(TravellerEvent(t_enter, trav, "enter", there))
            here, there = there, here
            t = t_enter

    events.sort(key=lambda e: (e.time, e.traveller, 0 if e.kind == "exit" else 1))
    return events


# ---------------------------------------------------------------------------
# Contact traces
# ---------------------------------------------------------------------------

def generate_contact_trace(scenario: "Scenario", layout: CommunityLayout,
                           seed: int, duration: float | None = None
                           ) -> list[ContactEvent]:
    """Time-sorted contact events, travellers relocating per their schedule."""
    spec = scenario.spec
    if duration is None:
        duration = spec.duration
    schedule = generate_traveller_schedule(scenario, layout, seed, duration)
    if spec.mobility.mode == "homogeneous":
        events = _homogeneous_trace(scenario, layout, schedule, seed, duration)
    else:
        events = _geometric_trace(scenario, layout, schedule, seed, duration)
    if spec.mobility.in_transit_contacts and spec.mobility.travel_time != "instant":
        events.extend(_transit_contacts(schedule))
        events.sort(key=lambda e: (e.time, e.node_a, e.node_b))
    return events


def _location_timeline(scenario: "Scenario", schedule: list[TravellerEvent],
                       duration: float):
    """Yield (t_start, t_end, location array) intervals; -1 means in transit."""
    loc = scenario.home.astype(np.int64).copy()
    t_prev = 0.0
    i = 0
    n_ev = len(schedule)
    while i <= n_ev:
        t_next = schedule[i].time if i < n_ev else duration
        if t_next > t_prev:
            yield t_prev, min(t_next, duration), loc
        if i == n_ev or t_next >= duration:
            return
        # apply every event at this timestamp before the next interval
        while i < n_ev and schedule[i].time == t_next:
            ev = schedule[i]
            loc[ev.traveller] = ev.community if ev.kind == "enter" else -1
            i += 1
        t_prev = t_next


def _homogeneous_trace(scenario: "Scenario", layout: CommunityLayout,
                       schedule: list[TravellerEvent], seed: int,
                       duration: float) -> list[ContactEvent]:
    spec = scenario.spec
    rate = spec.mobility.pair_contact_rate
    if rate <= 0:
        rate = default_pair_rate(layout.cell_side, spec.mobility.transmission_range,
                                 spec.mobility.speed_min, spec.mobility.speed_max)
    rng = generator(seed, "contacts")
    k = scenario.n_communities
    out: list[ContactEvent] = []

    for t0, t1, loc in _location_timeline(scenario, schedule, duration):
        dt = t1 - t0
        for c in range(k):
            members = np.flatnonzero(loc == c)
            m = len(members)
            if m < 2:
                continue
            n_contacts = rng.poisson(rate * m * (m - 1) / 2.0 * dt)
            if n_contacts == 0:
                continue
            times = np.sort(rng.uniform(t0, t1, size=n_contacts))
            ia = rng.integers(0, m, size=n_contacts)
            ib = rng.integers(0, m - 1, size=n_contacts)
            ib = ib + (ib >= ia)
            a = members[np.minimum(ia, ib)]
            b = members[np.maximum(ia, ib)]
            out.extend(ContactEvent(float(t), int(x), int(y))
                       for t, x, y in zip(times, a, b))

    out.sort(key=lambda e: (e.time, e.node_a, e.node_b))
    return out


def _geometric_trace(scenario: "Scenario", layout: CommunityLayout,
                     schedule: list[TravellerEvent], seed: int,
                     duration: float, dt: float = 1.0) -> list[ContactEvent]:
    """Random waypoint inside an inset box of the current cell, edge-triggered
    range crossings. The inset keeps the roaming areas of adjacent cells
    geographically separated, so cross-cell contacts cannot occur."""
    spec = scenario.spec
    cfg = spec.mobility
    n = scenario.n_nodes
    rng = generator(seed, "contacts")
    inset = min(cfg.transmission_range, layout.cell_side / 4.0)
    box = layout.cell_side - 2.0 * inset

    def random_point(community: int, size: int) -> np.ndarray:
        x0, y0 = layout.cell_origin(community)
        pts = rng.uniform(0.0, box, size=(size, 2))
        return pts + np.array([x0 + inset, y0 + inset])

    loc = scenario.home.astype(np.int64).copy()
    pos = np.empty((n, 2))
    for c in range(scenario.n_communities):
        members = np.flatnonzero(loc == c)
        pos[members] = random_point(c, len(members))
    target = pos.copy()
    speed = np.zeros(n)
    pause = np.zeros(n)

    out: list[ContactEvent] = []
    prev_adj = np.zeros((n, n), dtype=bool)
    range2 = cfg.transmission_range ** 2
    ev_i = 0
    n_ev = len(schedule)
    steps = int(math.floor(duration / dt)) + 1

    for step in range(steps):
        t = step * dt
        while ev_i < n_ev and schedule[ev_i].time <= t:
            ev = schedule[ev_i]
            if ev.kind == "enter":
                loc[ev.traveller] = ev.community
                pos[ev.traveller] = random_point(ev.community, 1)[0]
                target[ev.traveller] = pos[ev.traveller]
            else:
                loc[ev.traveller] = -1
            ev_i += 1

        active = loc >= 0
        # advance waypoints
        for i in np.flatnonzero(active):
            if pause[i] > 0:
                pause[i] = max(0.0, pause[i] - dt)
                continue
            delta = target[i] - pos[i]
            dist = math.hypot(delta[0], delta[1])
            step_len = speed[i] * dt
            if dist <= step_len:
                pos[i] = target[i]
                target[i] = random_point(int(loc[i]), 1)[0]
                speed[i] = rng.uniform(cfg.speed_min, cfg.speed_max)
                pause[i] = cfg.pause_time
            else:
                pos[i] += delta * (step_len / dist)

        diff = pos[:, None, :] - pos[None, :, :]
        d2 = np.einsum("ijk,ijk->ij", diff, diff)
        same_cell = (loc[:, None] == loc[None, :]) & active[:, None] & active[None, :]
        adj = (d2 < range2) & same_cell
        np.fill_diagonal(adj, False)
        new = adj & ~prev_adj
        ia, ib = np.nonzero(np.triu(new, k=1))
        out.extend(ContactEvent(t, int(x), int(y)) for x, y in zip(ia, ib))
        prev_adj = adj

    return out


def _transit_contacts(schedule: list[TravellerEvent]) -> list[ContactEvent]:
    """One exchange for two travellers whose transits share the same unordered
    community pair and overlap in time."""
    transits = []  # (traveller, frozenset({from, to}), t_start, t_end)
    pending: dict[int, TravellerEvent] = {}
    for ev in schedule:
        if ev.kind == "exit":
            pending[ev.traveller] = ev
        else:
            start = pending.pop(ev.traveller, None)
            if start is not None and ev.time > start.time:
                transits.append((ev.traveller,
                                 frozenset((start.community, ev.community)),
                                 start.time, ev.time))
    out = []
    for i in range(len(transits)):
        for j in range(i + 1, len(transits)):
            ti, tj = transits[i], transits[j]
            if ti[1] == tj[1] and ti[2] < tj[3] and tj[2] < ti[3]:
                a, b = sorted((ti[0], tj[0]))
                out.append(ContactEvent(max(ti[2], tj[2]), a, b))
    return out
