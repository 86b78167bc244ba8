"""Hybrid engine: communities as steady-state black boxes, travellers as the
only simulated events.

Between traveller events a community is assumed to have reached its internal
steady state, so every resident subscriber is credited with every item of its
channel obtainable in the community. A traveller leaving a community carries
all items of its own channel plus a bounded random sample of the community's
obtainable items; entering, it deposits what it carries (subject to channel
recognition) and the community's availability grows monotonically.

Availability is stored as packed bitsets over the channel-contiguous item-id
space, which is what keeps region-scale populations (hundreds of communities,
millions of items) in memory.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import analytic
from .mobility import TravellerEvent, build_layout, default_pair_rate, \
    generate_traveller_schedule, grid_layout
from .scenario import Scenario
from .seeding import generator


class HybridError(ValueError):
    pass


class Bitset:
    """Fixed-capacity bitset on packed uint8 words (little bit order)."""

    __slots__ = ("capacity", "bits")

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.bits = np.zeros((capacity + 7) // 8, dtype=np.uint8)

    def test(self, ids: np.ndarray) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.int64)
        return (self.bits[ids >> 3] >> (ids & 7).astype(np.uint8)) & 1 > 0

    def add(self, ids: np.ndarray) -> np.ndarray:
        """Set the given bits; returns the ids that were actually new."""
        ids = np.asarray(ids, dtype=np.int64)
        if len(ids) == 0:
            return ids
        fresh = ids[~self.test(ids)]
        np.bitwise_or.at(self.bits, fresh >> 3,
                         (1 << (fresh & 7)).astype(np.uint8))
        return fresh

    def indices(self, lo: int = 0, hi: int | None = None) -> np.ndarray:
        """Set bit positions within ``[lo, hi)``."""
        if hi is None:
            hi = self.capacity
        byte_lo, byte_hi = lo >> 3, (hi + 7) >> 3
        flat = np.unpackbits(self.bits[byte_lo:byte_hi], bitorder="little")
        idx = np.flatnonzero(flat) + (byte_lo << 3)
        return idx[(idx >= lo) & (idx < hi)]


@dataclass
class CommunityAvailability:
    """Items obtainable in one community plus its subscriber census.

    ``resident_subs`` counts non-traveller residents per channel (static);
    ``present_subs`` counts travellers currently sojourning here, including
    the community's own travellers while at home.
    """

    community: int
    n_channels: int
    items_per_channel: int
    bits: Bitset
    counts: np.ndarray                 # (channels,) available items per channel
    resident_subs: np.ndarray          # (channels,)
    present_subs: np.ndarray           # (channels,)

    def subscriber_counts(self) -> np.ndarray:
        return self.resident_subs + self.present_subs

    def eligible_channel_mask(self, channel_recognition: bool) -> np.ndarray:
        if not channel_recognition:
            return np.ones(self.n_channels, dtype=bool)
        return self.subscriber_counts() >= 1

    def available_of_channel(self, channel: int) -> np.ndarray:
        ipc = self.items_per_channel
        return self.bits.indices(channel * ipc, (channel + 1) * ipc)


@dataclass
class TravellerState:
    node: int
    subscription: int
    home: int
    destination: int
    location: int                      # community id, or -1 while in transit
    li: np.ndarray
    sc: set[int] = field(default_factory=set)
    oc: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))


def eligible_items(avail: CommunityAvailability,
                   channel_recognition: bool) -> np.ndarray:
    """Available items whose channel has at least one subscriber present
    (residents plus currently visiting travellers); everything available when
    channel recognition is disabled."""
    mask = avail.eligible_channel_mask(channel_recognition)
    if mask.all():
        return avail.bits.indices()
    ids = avail.bits.indices()
    return ids[mask[ids // avail.items_per_channel]]


def on_traveller_exit(trav: TravellerState, avail: CommunityAvailability,
                      n_c: int, capacity: int, channel_recognition: bool,
                      rng: np.random.Generator,
                      channel_weights: np.ndarray | None = None
                      ) -> np.ndarray:
    """Populate the traveller's caches on departure; returns the items newly
    fetched into its subscribed cache.

    The bounded cache is a realisation of the community's cache population:
    ``n_c * B`` draws from the eligible items weighted by their steady-state
    replication (uniform when ``channel_weights`` is None), thinned to at most
    ``B`` distinct items by multiplicity-weighted sampling without
    replacement.
    """
    ipc = avail.items_per_channel
    own = avail.available_of_channel(trav.subscription)
    fetched = own[~np.isin(own, list(trav.sc), assume_unique=False)] \
        if trav.sc else own
    trav.sc.update(int(a) for a in fetched)

    pool = eligible_items(avail, channel_recognition)
    pool = pool[pool // ipc != trav.subscription]
    if len(trav.li):
        pool = pool[~np.isin(pool, trav.li, assume_unique=True)]

    if len(pool) == 0:
        trav.oc = np.empty(0, dtype=np.int64)
        return fetched

    n_draws = n_c * capacity
    if channel_weights is None:
        draws = rng.integers(0, len(pool), size=n_draws)
    else:
        w = channel_weights[pool // ipc].astype(np.float64)
        total = w.sum()
        if total <= 0:
            draws = rng.integers(0, len(pool), size=n_draws)
        else:
            draws = rng.choice(len(pool), size=n_draws, p=w / total)
    multiplicity = np.bincount(draws, minlength=len(pool))
    nz = np.flatnonzero(multiplicity)
    if len(nz) <= capacity:
        chosen = pool[nz]
    else:
        keys = np.log(multiplicity[nz]) + rng.gumbel(size=len(nz))
        top = np.argpartition(-keys, capacity - 1)[:capacity]
        chosen = pool[nz[top]]
    trav.oc = np.sort(chosen)
    return fetched


def on_traveller_enter(trav: TravellerState, avail: CommunityAvailability,
                       channel_recognition: bool) -> np.ndarray:
    """Deposit the traveller's carried items; returns the newly available ids.

    The traveller counts as a subscriber of its own channel for the duration
    of its stay, so its subscribed content always qualifies. Items of channels
    nobody present subscribes to are not deposited at all.
    """
    carried = np.concatenate([np.fromiter(trav.sc, dtype=np.int64,
                                          count=len(trav.sc)),
                              trav.oc, trav.li])
    if len(carried) == 0:
        return carried
    carried = np.unique(carried)
    mask = avail.eligible_channel_mask(channel_recognition)
    deposit = carried[mask[carried // avail.items_per_channel]]
    fresh = avail.bits.add(deposit)
    if len(fresh):
        per_channel = np.bincount(fresh // avail.items_per_channel,
                                  minlength=avail.n_channels)
        avail.counts += per_channel
    return fresh


@dataclass
class HybridResult:
    samples: list[tuple[float, str, float]]
    events_log: list[tuple[float, int, str, int, int]]
    availability: list[CommunityAvailability]
    travellers: dict[int, TravellerState]
    channel_final: np.ndarray           # (channels,) final per-channel hit rate
    community_channel_counts: np.ndarray  # (communities, channels) final
    n_events: int


def _event_order_key(ev: TravellerEvent) -> tuple:
    return (ev.time, 0 if ev.kind == "enter" else 1, ev.traveller)


def run_hybrid(scenario: Scenario, schedule: list[TravellerEvent] | None = None,
               mode: str | None = None, seed: int = 0,
               channel_recognition: bool | None = None,
               sampling_interval: float | None = None) -> HybridResult:
    """Process the traveller schedule in global time order.

    Ties at equal timestamps are processed enter-before-exit, then by
    traveller id; a traveller's own instant-travel enter is held back until
    its matching exit has run so per-traveller causality is preserved.
    Deterministic for fixed ``(scenario, seed)``.
    """
    spec = scenario.spec
    if mode is None:
        mode = spec.hybrid.mode
    if mode not in ("equal", "analytic"):
        raise HybridError(f"unknown hybrid mode '{mode}'")
    if channel_recognition is None:
        channel_recognition = spec.channel_recognition
    if sampling_interval is None:
        sampling_interval = spec.output.sampling_interval
    if schedule is None:
        layout = build_layout(scenario)
        schedule = generate_traveller_schedule(scenario, layout, seed)

    n_nodes = scenario.n_nodes
    n_ch = scenario.n_channels
    ipc = scenario.items_per_channel
    k = scenario.n_communities
    n_c = spec.nodes_per_community
    capacity = spec.recognition.oc_capacity
    rng = generator(seed, "hybrid")

    traveller_ids = set(int(t) for t in scenario.traveller_ids())
    for ev in schedule:
        if ev.traveller not in traveller_ids:
            raise HybridError(f"schedule names node {ev.traveller}, "
                              "which is not a traveller of this scenario")

    # --- initial availability -------------------------------------------
    avail: list[CommunityAvailability] = []
    resident_subs = np.zeros((k, n_ch), dtype=np.int64)
    non_trav = ~scenario.is_traveller
    np.add.at(resident_subs,
              (scenario.home[non_trav], scenario.subscription[non_trav]), 1)
    for c in range(k):
        avail.append(CommunityAvailability(
            community=c, n_channels=n_ch, items_per_channel=ipc,
            bits=Bitset(scenario.n_items),
            counts=np.zeros(n_ch, dtype=np.int64),
            resident_subs=resident_subs[c].copy(),
            present_subs=np.zeros(n_ch, dtype=np.int64)))
    item_ids = np.arange(scenario.n_items, dtype=np.int64)
    item_comm = scenario.home[scenario.holder]
    for c in range(k):
        mine = item_ids[item_comm == c]
        fresh = avail[c].bits.add(mine)
        avail[c].counts += np.bincount(fresh // ipc, minlength=n_ch)

    # --- travellers ------------------------------------------------------
    li_per_node: dict[int, list[int]] = {t: [] for t in traveller_ids}
    for item, holder in enumerate(scenario.holder):
        if int(holder) in li_per_node:
            li_per_node[int(holder)].append(item)
    travellers: dict[int, TravellerState] = {}
    for t in sorted(traveller_ids):
        sub = int(scenario.subscription[t])
        home = int(scenario.home[t])
        st = TravellerState(node=t, subscription=sub, home=home,
                            destination=int(scenario.destination[t]),
                            location=home,
                            li=np.array(sorted(li_per_node[t]), dtype=np.int64))
        # it has been living at home: its subscribed cache starts at the
        # home community's availability for its channel
        st.sc = {int(a) for a in avail[home].available_of_channel(sub)}
        travellers[t] = st
        avail[home].present_subs[sub] += 1

    # --- hit-rate ledgers -------------------------------------------------
    # residents are credited through availability, travellers through sc
    res_num = np.array([int((avail[c].resident_subs * avail[c].counts).sum())
                        for c in range(k)], dtype=np.float64)
    trav_num_comm = np.zeros(k)
    trav_num_ch = np.zeros(n_ch)
    for st in travellers.values():
        trav_num_comm[st.home] += len(st.sc)
        trav_num_ch[st.subscription] += len(st.sc)

    subs_total = np.bincount(scenario.subscription, minlength=n_ch)
    samples: list[tuple[float, str, float]] = []
    events_log: list[tuple[float, int, str, int, int]] = []

    def global_hit() -> float:
        return float((res_num.sum() + trav_num_comm.sum()) / (ipc * n_nodes))

    def full_sample(t: float) -> None:
        samples.append((t, "global", global_hit()))
        for c in range(k):
            val = (res_num[c] + trav_num_comm[c]) / (ipc * n_c)
            samples.append((t, f"community:{c}", float(val)))
        res_ch = np.zeros(n_ch)
        for c in range(k):
            res_ch += avail[c].resident_subs * avail[c].counts
        with np.errstate(invalid="ignore", divide="ignore"):
            ch_hit = (res_ch + trav_num_ch) / (subs_total * ipc)
        for ch in range(n_ch):
            if subs_total[ch] > 0:
                samples.append((t, f"channel:{ch}", float(ch_hit[ch])))

    # steady-state weights per community for the analytic mode
    weights_cache: dict[int, np.ndarray | None] = {c: None for c in range(k)}

    def analytic_weights(c: int) -> np.ndarray:
        cached = weights_cache[c]
        if cached is not None:
            return cached
        st = avail[c]
        total_res = st.resident_subs.sum()
        pop = (st.resident_subs / total_res if total_res > 0
               else np.full(n_ch, 1.0 / n_ch))
        classes = tuple(analytic.ItemClass(channel=ch, class_size=int(st.counts[ch]),
                                           r0=1.0 / n_c)
                        for ch in range(n_ch) if st.counts[ch] > 0)
        w = np.zeros(n_ch)
        if classes:
            rate = spec.mobility.pair_contact_rate
            if rate <= 0:
                layout = grid_layout(k, spec.mobility.area_side)
                rate = default_pair_rate(layout.cell_side,
                                         spec.mobility.transmission_range,
                                         spec.mobility.speed_min,
                                         spec.mobility.speed_max)
            cfg = analytic.CommunityModelConfig(
                channel_threshold=spec.recognition.channel_threshold,
                item_threshold=spec.recognition.item_threshold,
                channel_forget=spec.recognition.channel_forget,
                item_forget=spec.recognition.item_forget,
                oc_capacity=spec.recognition.oc_capacity,
                pop=pop, classes=classes, n_c=n_c,
                encounter_rate=rate * max(n_c - 1, 1),
                epsilon=spec.hybrid.epsilon, window=spec.hybrid.window,
                max_steps=spec.hybrid.max_steps)
            res = analytic.run_to_steady_state(cfg, trace_stride=1 << 30)
            for cls, r_val in zip(classes, res.r):
                w[cls.channel] = r_val
        weights_cache[c] = w
        return w

    def credit_deposit(c: int, fresh: np.ndarray) -> None:
        if len(fresh) == 0:
            return
        per_ch = np.bincount(fresh // ipc, minlength=n_ch)
        gained = float((avail[c].resident_subs * per_ch).sum())
        res_num[c] += gained
        weights_cache[c] = None

    def credit_fetch(st: TravellerState, fetched: np.ndarray) -> None:
        trav_num_comm[st.home] += len(fetched)
        trav_num_ch[st.subscription] += len(fetched)

    # --- event loop --------------------------------------------------------
    ordered = sorted(schedule, key=_event_order_key)
    ticks = list(np.arange(0.0, spec.duration, sampling_interval))
    if not ticks or ticks[-1] < spec.duration:
        ticks.append(spec.duration)
    tick_i = 0
    held: dict[int, TravellerEvent] = {}
    expect_exit: dict[int, bool] = {t: True for t in traveller_ids}

    def process(ev: TravellerEvent) -> None:
        nonlocal tick_i
        st = travellers[ev.traveller]
        if ev.kind == "exit":
            c = ev.community
            weights = analytic_weights(c) if mode == "analytic" else None
            fetched = on_traveller_exit(st, avail[c], n_c, capacity,
                                        channel_recognition, rng, weights)
            credit_fetch(st, fetched)
            avail[c].present_subs[st.subscription] -= 1
            st.location = -1
            events_log.append((ev.time, ev.traveller, "exit", c, 0))
        else:
            c = ev.community
            avail[c].present_subs[st.subscription] += 1
            st.location = c
            fresh = on_traveller_enter(st, avail[c], channel_recognition)
            credit_deposit(c, fresh)
            events_log.append((ev.time, ev.traveller, "enter", c, len(fresh)))
        samples.append((ev.time, "global", global_hit()))

    for ev in ordered:
        while tick_i < len(ticks) and ticks[tick_i] <= ev.time:
            full_sample(ticks[tick_i])
            tick_i += 1
        if ev.kind == "enter" and expect_exit[ev.traveller]:
            # instant-travel enter sorted ahead of its own exit: hold it
            held[ev.traveller] = ev
            continue
        process(ev)
        expect_exit[ev.traveller] = not expect_exit[ev.traveller]
        if ev.kind == "exit" and ev.traveller in held:
            chained = held.pop(ev.traveller)
            process(chained)
            expect_exit[ev.traveller] = not expect_exit[ev.traveller]
    if held:
        raise HybridError("orphan enter events without matching exits")
    while tick_i < len(ticks):
        full_sample(ticks[tick_i])
        tick_i += 1

    res_ch = np.zeros(n_ch)
    for c in range(k):
        res_ch += avail[c].resident_subs * avail[c].counts
    with np.errstate(invalid="ignore", divide="ignore"):
        channel_final = np.where(subs_total > 0,
                                 (res_ch + trav_num_ch) / (subs_total * ipc), np.nan)
    comm_counts = np.stack([avail[c].counts for c in range(k)])

    return HybridResult(samples=samples, events_log=events_log,
                        availability=avail, travellers=travellers,
                        channel_final=channel_final,
                        community_channel_counts=comm_counts,
                        n_events=len(ordered))
