"""Per-node caches and the pairwise exchange protocol.

Each node keeps five caches:

* ``li``  -- items it generated itself (immutable),
* ``sc``  -- items of its subscribed channel, unbounded and never shrinking,
* ``oc``  -- altruistic cache of other channels' items, at most ``B`` entries,
* ``cc``  -- per-channel sighting counters in ``[0, R_c]``,
* ``ic``  -- per-item sighting counters in ``[0, R]``.

A channel (item) is recognised when its counter saturates. On every
encounter the counters of things *not* seen decay by one with probability
``forget**level``, which makes the event-driven simulation the exact
stochastic realisation of the mean-field chains.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .scenario import RecognitionParams


@dataclass
class NodeCaches:
    subscription: int
    li: frozenset[int] = frozenset()
    sc: set[int] = field(default_factory=set)
    oc: tuple[int, ...] = ()
    cc: dict[int, int] = field(default_factory=dict)
    ic: dict[int, int] = field(default_factory=dict)

    def copy(self) -> "NodeCaches":
        return NodeCaches(subscription=self.subscription, li=self.li,
                          sc=set(self.sc), oc=self.oc,
                          cc=dict(self.cc), ic=dict(self.ic))

    def view(self) -> "PeerView":
        """Immutable snapshot another node sees during an encounter."""
        return PeerView(subscription=self.subscription, li=self.li,
                        sc=frozenset(self.sc), oc=frozenset(self.oc))

    def holds(self) -> frozenset[int]:
        return self.li | self.sc | set(self.oc)


@dataclass(frozen=True)
class PeerView:
    subscription: int
    li: frozenset[int]
    sc: frozenset[int]
    oc: frozenset[int]

    @property
    def visible(self) -> frozenset[int]:
        return self.li | self.sc | self.oc


@dataclass(frozen=True)
class ExchangeOutcome:
    """Diff of one side of an encounter (debug/bookkeeping aid)."""

    sc_added: frozenset[int]
    oc_added: frozenset[int]
    oc_dropped: frozenset[int]


def update_recognition(caches: NodeCaches, peer: PeerView,
                       params: RecognitionParams, rng: random.Random) -> None:
    """Advance the sighting counters for one encounter (in place).

    The peer's subscription bumps that channel's counter; every item visible
    in the peer's caches bumps its item counter. Everything else tracked at
    level ``i >= 1`` decays by one with probability ``forget**i``.
    """
    r_c, r = params.channel_threshold, params.item_threshold
    alpha, gamma = params.channel_forget, params.item_forget
    cc, ic = caches.cc, caches.ic

    seen_ch = peer.subscription
    cc[seen_ch] = min(cc.get(seen_ch, 0) + 1, r_c)
    if alpha > 0.0:
        for ch, level in cc.items():
            if ch != seen_ch and level >= 1 and rng.random() < alpha ** level:
                cc[ch] = level - 1

    visible = peer.visible
    for a in visible:
        ic[a] = min(ic.get(a, 0) + 1, r)
    if gamma > 0.0:
        for a, level in ic.items():
            if level >= 1 and a not in visible and rng.random() < gamma ** level:
                ic[a] = level - 1


def fetch_subscribed(caches: NodeCaches, peer: PeerView, ipc: int) -> set[int]:
    """Copy every visible item of the node's own channel into ``sc``."""
    ch = caches.subscription
    added = {a for a in peer.visible if a // ipc == ch} - caches.sc
    caches.sc |= added
    return added


def select_oc_contents(caches: NodeCaches, peer: PeerView,
                       params: RecognitionParams, pre_ic: dict[int, int],
                       ipc: int) -> tuple[int, ...]:
    """Rebuild the bounded cache after an encounter.

    Candidates are the node's current entries plus the peer's ``oc`` and
    ``li`` items whose channel is recognised, excluding the node's own channel
    and its own items. A peer item whose counter had already saturated before
    the encounter is never fetched. Entries whose item counter fell back to
    zero leave the cache (they sit outside the queueing model's sub-queues).

    Ranking is ascending by current recognition level, peer-sourced before
    own within a level, then by item id; the first ``B`` survive.
    """
    r_c, r = params.channel_threshold, params.item_threshold
    cc, ic = caches.cc, caches.ic
    own = set(caches.oc)

    ranked: list[tuple[int, int, int]] = []
    for a in caches.oc:
        level = ic.get(a, 0)
        if level >= 1 and cc.get(a // ipc, 0) >= r_c:
            ranked.append((level, 1, a))
    sub = caches.subscription
    for a in peer.oc | peer.li:
        if a in own or a in caches.li:
            continue
        ch = a // ipc
        if ch == sub or cc.get(ch, 0) < r_c:
            continue
        if pre_ic.get(a, 0) >= r:
            continue
        ranked.append((ic.get(a, 0), 0, a))

    ranked.sort()
    new_oc = tuple(a for _, _, a in ranked[: params.oc_capacity])
    caches.oc = new_oc
    return new_oc


def apply_encounter(a: NodeCaches, b: NodeCaches, params: RecognitionParams,
                    ipc: int, rng: random.Random) -> None:
    """Mutate both sides of an encounter against each other's pre-encounter
    state. The exchange is simultaneous: each side sees the other's caches as
    they were before the meeting. Side ``a`` consumes random draws first."""
    view_a, view_b = a.view(), b.view()
    pre_ic_a, pre_ic_b = dict(a.ic), dict(b.ic)

    update_recognition(a, view_b, params, rng)
    fetch_subscribed(a, view_b, ipc)
    select_oc_contents(a, view_b, params, pre_ic_a, ipc)

    update_recognition(b, view_a, params, rng)
    fetch_subscribed(b, view_a, ipc)
    select_oc_contents(b, view_a, params, pre_ic_b, ipc)


def encounter(a: NodeCaches, b: NodeCaches, params: RecognitionParams,
              ipc: int, rng: random.Random) -> tuple[NodeCaches, NodeCaches]:
    """Pure form of :func:`apply_encounter`: returns updated copies."""
    a2, b2 = a.copy(), b.copy()
    apply_encounter(a2, b2, params, ipc, rng)
    return a2, b2


def exchange_outcome(before: NodeCaches, after: NodeCaches) -> ExchangeOutcome:
    return ExchangeOutcome(
        sc_added=frozenset(after.sc - before.sc),
        oc_added=frozenset(set(after.oc) - set(before.oc)),
        oc_dropped=frozenset(set(before.oc) - set(after.oc)),
    )


def check_cache_invariants(caches: NodeCaches, params: RecognitionParams,
                           ipc: int) -> list[str]:
    """Structural invariants; used by tests and the simulator's debug mode."""
    bad = []
    if len(caches.oc) > params.oc_capacity:
        bad.append("oc over capacity")
    if len(set(caches.oc)) != len(caches.oc):
        bad.append("duplicate items in oc")
    for a in caches.oc:
        if a // ipc == caches.subscription:
            bad.append(f"oc holds subscribed-channel item {a}")
        if a in caches.li:
            bad.append(f"oc holds local item {a}")
    for a in caches.sc:
        if a // ipc != caches.subscription:
            bad.append(f"sc holds foreign item {a}")
    for ch, level in caches.cc.items():
        if not 0 <= level <= params.channel_threshold:
            bad.append(f"cc[{ch}] out of range: {level}")
    for a, level in caches.ic.items():
        if not 0 <= level <= params.item_threshold:
            bad.append(f"ic[{a}] out of range: {level}")
    return bad
