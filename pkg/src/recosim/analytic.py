"""Mean-field model of content replication inside one community.

For a tagged item the model tracks four coupled chains, advanced once per
encounter of a tagged node:

* presence in the subscribed-channel cache (2 states, absorbing),
* channel recognition level (``R_c + 1`` states),
* item recognition level (``R + 1`` states),
* bounded-cache occupancy as a queueing network whose sub-queue ``i`` holds
  items cached at recognition level ``i`` (level 0 = outside the cache).

The chains are coupled through the replication fraction

    r = r0 + (1 - r0) * [Pop(c) * P(in sc) + (1 - Pop(c)) * P(in oc)]

which in turn drives the sighting probabilities. Items of one channel with
equal initial replication are symmetric, so they are aggregated into classes
and all per-item sums become class-size weighted sums; that is what keeps
millions of items tractable.

Steps map to seconds through the per-node encounter rate: ``t = step / rate``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class AnalyticError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Elementary transitions (reference implementations, also used by tests)
# ---------------------------------------------------------------------------

def _check_prob(name: str, x: float) -> None:
    if not 0.0 <= x <= 1.0:
        raise AnalyticError(f"{name} must be in [0, 1], got {x}")


def cc_transition_matrix(pop: float, alpha: float, r_c: int) -> np.ndarray:
    """Channel-recognition chain: up with the channel's popularity, down with
    probability ``alpha**i * (1 - pop)`` (forgetting slows with memory
    strength), reflecting at 0 and ``R_c``."""
    _check_prob("pop", pop)
    _check_prob("alpha", alpha)
    if r_c < 1:
        raise AnalyticError("r_c must be >= 1")
    m = np.zeros((r_c + 1, r_c + 1))
    for i in range(r_c + 1):
        up = pop if i < r_c else 0.0
        down = (alpha ** i) * (1.0 - pop) if i >= 1 else 0.0
        if i < r_c:
            m[i, i + 1] = up
        if i >= 1:
            m[i, i - 1] = down
        m[i, i] = 1.0 - up - down
    return m


def ic_transition_matrix(r: float, gamma: float, r_cap: int) -> np.ndarray:
    """Item-recognition chain: same shape as the channel chain with the item's
    replication fraction as sighting probability and discount ``gamma``."""
    _check_prob("r", r)
    _check_prob("gamma", gamma)
    if r_cap < 1:
        raise AnalyticError("r_cap must be >= 1")
    m = np.zeros((r_cap + 1, r_cap + 1))
    for i in range(r_cap + 1):
        up = r if i < r_cap else 0.0
        down = (gamma ** i) * (1.0 - r) if i >= 1 else 0.0
        if i < r_cap:
            m[i, i + 1] = up
        if i >= 1:
            m[i, i - 1] = down
        m[i, i] = 1.0 - up - down
    return m


def sc_step(psi: np.ndarray, r: float) -> np.ndarray:
    """Subscribed-cache chain: fetch with probability ``r``; state 1 absorbs."""
    _check_prob("r", r)
    psi = np.asarray(psi, dtype=np.float64)
    return np.array([psi[0] * (1.0 - r), psi[1] + psi[0] * r])


def oc_reorder_matrix(v_recognized: float, r: float, gamma: float,
                      r_cap: int) -> np.ndarray:
    """Step-1 matrix of the cache queueing network: internal reordering only.

    An entry leaves if its channel is no longer recognised (probability
    ``1 - v``) or, from level 1, if its counter decays to zero; otherwise it
    moves up on a sighting and down on a discounted miss. Nothing enters.
    """
    _check_prob("v_recognized", v_recognized)
    _check_prob("r", r)
    _check_prob("gamma", gamma)
    v = v_recognized
    m = np.zeros((r_cap + 1, r_cap + 1))
    m[0, 0] = 1.0
    for i in range(1, r_cap + 1):
        leave = (1.0 - v) + (v * gamma * (1.0 - r) if i == 1 else 0.0)
        back = v * (gamma ** i) * (1.0 - r) if i >= 2 else 0.0
        fwd = v * r if i < r_cap else 0.0
        m[i, 0] = leave
        if i >= 2:
            m[i, i - 1] = back
        if i < r_cap:
            m[i, i + 1] = fwd
        m[i, i] = 1.0 - leave - back - fwd
    return m


def oc_reorder_step(phi: np.ndarray, v_recognized: float, r: float,
                    gamma: float) -> np.ndarray:
    """Apply the reorder matrix to one class's occupancy vector."""
    phi = np.asarray(phi, dtype=np.float64)
    if abs(phi.sum() - 1.0) > 1e-9 or phi.min() < -1e-12:
        raise AnalyticError("phi is not a probability vector")
    return phi @ oc_reorder_matrix(v_recognized, r, gamma, len(phi) - 1)


@dataclass
class AdmissionWorkspace:
    """Per-level bookkeeping of the admission step (index = level; 0 unused).

    ``b_prime``: expected occupancy after reordering; ``n0``: eligible
    entrants; ``f``: free slots available to the level (``f[1] = B``, lower
    levels have absolute priority); ``b_next``: final occupancy.
    """

    b_prime: np.ndarray
    n0: np.ndarray
    f: np.ndarray
    b_next: np.ndarray


def oc_admission_step(phi_prime: np.ndarray, class_size: np.ndarray,
                      entry_mass: np.ndarray, capacity: int
                      ) -> tuple[np.ndarray, AdmissionWorkspace]:
    """Step 2 of the cache network: admissions and evictions under capacity.

    ``phi_prime`` is the (classes, R+1) post-reorder state; ``entry_mass[a,i]``
    is the probability that a class-``a`` item outside the cache enters at
    level ``i`` before capacity scaling. Free slots are handed to levels in
    ascending order; where entrants outnumber slots they are scaled by
    ``f/n0`` and old entries are evicted first (new items win ties).
    """
    phi_prime = np.asarray(phi_prime, dtype=np.float64)
    entry_mass = np.asarray(entry_mass, dtype=np.float64)
    sizes = np.asarray(class_size, dtype=np.float64)
    n_levels = phi_prime.shape[1]          # R + 1

    b_prime = np.zeros(n_levels)
    b_prime[1:] = (sizes[:, None] * phi_prime[:, 1:]).sum(axis=0)
    n0 = np.zeros(n_levels)
    n0[1:] = (sizes[:, None] * entry_mass[:, 1:] * phi_prime[:, [0]]).sum(axis=0)

    f = np.zeros(n_levels)
    b_next = np.zeros(n_levels)
    scale = np.ones(n_levels)
    removal = np.zeros(n_levels)
    free = float(capacity)
    for i in range(1, n_levels):
        f[i] = free
        b_next[i] = min(n0[i] + b_prime[i], f[i])
        if n0[i] > f[i]:
            scale[i] = f[i] / n0[i]        # n0 > f >= 0, so n0 > 0 here
            removal[i] = 1.0
        elif n0[i] + b_prime[i] > f[i]:
            removal[i] = 1.0 - (f[i] - n0[i]) / b_prime[i] if b_prime[i] > 0 else 0.0
        free -= b_next[i]

    enter = entry_mass[:, 1:] * scale[1:]
    phi_next = np.empty_like(phi_prime)
    phi_next[:, 1:] = phi_prime[:, 1:] * (1.0 - removal[1:]) \
        + phi_prime[:, [0]] * enter
    phi_next[:, 0] = phi_prime[:, 0] * (1.0 - enter.sum(axis=1)) \
        + (phi_prime[:, 1:] * removal[1:]).sum(axis=1)

    return phi_next, AdmissionWorkspace(b_prime=b_prime, n0=n0, f=f, b_next=b_next)


# ---------------------------------------------------------------------------
# Community model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ItemClass:
    """A group of symmetric items: same channel, same initial replication."""

    channel: int
    class_size: int
    r0: float


@dataclass(frozen=True)
class CommunityModelConfig:
    channel_threshold: int
    item_threshold: int
    channel_forget: float
    item_forget: float
    oc_capacity: int
    pop: np.ndarray                    # (channels,) popularity, sums to 1
    classes: tuple[ItemClass, ...]
    n_c: int                           # community size
    encounter_rate: float              # encounters per node per second
    epsilon: float = 1e-6
    window: int = 10
    max_steps: int = 1_000_000

    def check(self) -> None:
        if abs(float(np.sum(self.pop)) - 1.0) > 1e-9 or np.min(self.pop) < 0:
            raise AnalyticError("pop must be a distribution over channels")
        if self.encounter_rate <= 0:
            raise AnalyticError("encounter_rate must be > 0")
        if self.epsilon <= 0 or self.window < 1:
            raise AnalyticError("bad steady-state detector parameters")
        for cls in self.classes:
            if not 0.0 <= cls.r0 <= 1.0:
                raise AnalyticError("class r0 outside [0, 1]")
            if cls.class_size < 1:
                raise AnalyticError("class_size must be >= 1")
            if not 0 <= cls.channel < len(self.pop):
                raise AnalyticError("class channel out of range")


@dataclass
class CommunityModelState:
    v_chan: np.ndarray                 # (channels, R_c + 1)
    psi: np.ndarray                    # (classes, 2)
    v_item: np.ndarray                 # (classes, R + 1)
    phi: np.ndarray                    # (classes, R + 1)
    r: np.ndarray                      # (classes,)
    step: int = 0

    def p_sc(self) -> np.ndarray:
        return self.psi[:, 1].copy()

    def p_oc(self) -> np.ndarray:
        return self.phi[:, 1:].sum(axis=1)

    def occupancy(self, sizes: np.ndarray) -> float:
        """Expected number of cached items summed over all classes."""
        return float((sizes[:, None] * self.phi[:, 1:]).sum())


def initial_state(config: CommunityModelConfig) -> CommunityModelState:
    config.check()
    k = len(config.classes)
    v_chan = np.zeros((len(config.pop), config.channel_threshold + 1))
    v_chan[:, 0] = 1.0
    psi = np.zeros((k, 2))
    psi[:, 0] = 1.0
    v_item = np.zeros((k, config.item_threshold + 1))
    v_item[:, 0] = 1.0
    phi = np.zeros((k, config.item_threshold + 1))
    phi[:, 0] = 1.0
    r = np.array([cls.r0 for cls in config.classes], dtype=np.float64)
    return CommunityModelState(v_chan=v_chan, psi=psi, v_item=v_item, phi=phi, r=r)


def _counter_step(v: np.ndarray, up: np.ndarray, forget: float) -> np.ndarray:
    """Vectorised birth-death step shared by the channel and item chains:
    up with probability ``up`` (per row), down with ``forget**i * (1 - up)``."""
    n_levels = v.shape[1]
    levels = np.arange(n_levels)
    down = (forget ** levels)[None, :] * (1.0 - up)[:, None]
    down[:, 0] = 0.0
    upm = np.repeat(up[:, None], n_levels, axis=1)
    upm[:, -1] = 0.0
    new = v * (1.0 - upm - down)
    new[:, 1:] += v[:, :-1] * upm[:, :-1]
    new[:, :-1] += v[:, 1:] * down[:, 1:]
    return new


def _reorder_step(phi: np.ndarray, v_rec: np.ndarray, r: np.ndarray,
                  gamma: float) -> np.ndarray:
    """Vectorised version of :func:`oc_reorder_step` over all classes."""
    n_levels = phi.shape[1]
    levels = np.arange(n_levels)
    gpow = gamma ** levels
    miss = (1.0 - r)[:, None]
    leave = np.zeros_like(phi)
    leave[:, 1:] = (1.0 - v_rec)[:, None]
    leave[:, 1] += v_rec * gamma * (1.0 - r)
    back = v_rec[:, None] * gpow[None, :] * miss
    back[:, :2] = 0.0                      # level-1 decay is part of `leave`
    fwd = np.repeat((v_rec * r)[:, None], n_levels, axis=1)
    fwd[:, 0] = 0.0
    fwd[:, -1] = 0.0

    new = np.empty_like(phi)
    new[:, 0] = phi[:, 0] + (phi[:, 1:] * leave[:, 1:]).sum(axis=1)
    stay = 1.0 - leave - back - fwd
    new[:, 1:] = phi[:, 1:] * stay[:, 1:]
    new[:, 2:] += phi[:, 1:-1] * fwd[:, 1:-1]
    new[:, 1:-1] += phi[:, 2:] * back[:, 2:]
    return new


def model_step(config: CommunityModelConfig,
               state: CommunityModelState) -> CommunityModelState:
    """One encounter step. All classes advance from the time-t snapshot of
    ``r`` (synchronous update); the admission step couples them through the
    shared capacity."""
    cls_channel = np.array([c.channel for c in config.classes])
    cls_size = np.array([c.class_size for c in config.classes], dtype=np.float64)
    cls_r0 = np.array([c.r0 for c in config.classes])
    pop_cls = np.asarray(config.pop)[cls_channel]
    r_t = state.r

    v_chan = _counter_step(state.v_chan, np.asarray(config.pop, dtype=np.float64),
                           config.channel_forget)
    v_rec = v_chan[cls_channel, -1]

    v_item_pre = state.v_item
    v_item = _counter_step(v_item_pre, r_t, config.item_forget)

    psi = np.empty_like(state.psi)
    psi[:, 0] = state.psi[:, 0] * (1.0 - r_t)
    psi[:, 1] = state.psi[:, 1] + state.psi[:, 0] * r_t

    phi_prime = _reorder_step(state.phi, v_rec, r_t, config.item_forget)

    # Entry at level i needs: not self-generated, outside the cache, visible
    # at the encounter, channel recognised, and pre-encounter level i-1.
    entry = np.zeros_like(phi_prime)
    base = (1.0 - cls_r0) * r_t * v_rec
    entry[:, 1:] = base[:, None] * v_item_pre[:, :-1]
    phi, _ws = oc_admission_step(phi_prime, cls_size, entry, config.oc_capacity)

    r_new = cls_r0 + (1.0 - cls_r0) * (pop_cls * psi[:, 1]
                                       + (1.0 - pop_cls) * phi[:, 1:].sum(axis=1))

    return CommunityModelState(v_chan=v_chan, psi=psi, v_item=v_item, phi=phi,
                               r=r_new, step=state.step + 1)


@dataclass
class SteadyStateResult:
    r: np.ndarray                      # final replication per class
    p_sc: np.ndarray
    p_oc: np.ndarray
    steps: int
    converged: bool
    trace_steps: np.ndarray            # (T,)
    trace_r: np.ndarray                # (T, classes)
    trace_p_sc: np.ndarray
    trace_p_oc: np.ndarray
    encounter_rate: float

    def trace_seconds(self) -> np.ndarray:
        return self.trace_steps / self.encounter_rate


def run_to_steady_state(config: CommunityModelConfig,
                        state: CommunityModelState | None = None,
                        trace_stride: int = 1) -> SteadyStateResult:
    """Iterate until the replication of every class moves less than
    ``epsilon`` for ``window`` consecutive steps, or ``max_steps`` is hit
    (reported as non-converged, not an exception)."""
    if state is None:
        state = initial_state(config)
    else:
        config.check()
    steps = [state.step]
    rs = [state.r.copy()]
    scs = [state.p_sc()]
    ocs = [state.p_oc()]

    quiet = 0
    converged = False
    for _ in range(config.max_steps):
        new = model_step(config, state)
        delta = float(np.max(np.abs(new.r - state.r))) if len(new.r) else 0.0
        state = new
        quiet = quiet + 1 if delta < config.epsilon else 0
        if state.step % trace_stride == 0:
            steps.append(state.step)
            rs.append(state.r.copy())
            scs.append(state.p_sc())
            ocs.append(state.p_oc())
        if quiet >= config.window:
            converged = True
            break

    if steps[-1] != state.step:
        steps.append(state.step)
        rs.append(state.r.copy())
        scs.append(state.p_sc())
        ocs.append(state.p_oc())

    return SteadyStateResult(
        r=state.r.copy(), p_sc=state.p_sc(), p_oc=state.p_oc(),
        steps=state.step, converged=converged,
        trace_steps=np.array(steps), trace_r=np.array(rs),
        trace_p_sc=np.array(scs), trace_p_oc=np.array(ocs),
        encounter_rate=config.encounter_rate)


def channel_ranks(pop: np.ndarray) -> np.ndarray:
    """1-based popularity rank per channel (descending, ties by id)."""
    order = np.lexsort((np.arange(len(pop)), -np.asarray(pop)))
    ranks = np.empty(len(pop), dtype=np.int64)
    ranks[order] = np.arange(1, len(pop) + 1)
    return ranks


def config_from_scenario(scenario, community: int,
                         encounter_rate: float) -> CommunityModelConfig:
    """Model configuration for one community of a materialised scenario.

    Items of a channel fall into up to two classes: those initially held by a
    member of the community (``r0 = 1/n_c``) and the rest (``r0 = 0``).
    """
    spec = scenario.spec
    n_c = spec.nodes_per_community
    members = scenario.members(community)
    lo, hi = members.start, members.stop
    classes = []
    for ch in range(scenario.n_channels):
        items = scenario.items_of_channel(ch)
        holders = scenario.holder[items.start:items.stop]
        inside = int(np.sum((holders >= lo) & (holders < hi)))
        outside = len(items) - inside
        if inside:
            classes.append(ItemClass(channel=ch, class_size=inside, r0=1.0 / n_c))
        if outside:
            classes.append(ItemClass(channel=ch, class_size=outside, r0=0.0))
    rec = spec.recognition
    return CommunityModelConfig(
        channel_threshold=rec.channel_threshold,
        item_threshold=rec.item_threshold,
        channel_forget=rec.channel_forget,
        item_forget=rec.item_forget,
        oc_capacity=rec.oc_capacity,
        pop=scenario.pop[community].copy(),
        classes=tuple(classes),
        n_c=n_c,
        encounter_rate=encounter_rate,
        epsilon=spec.hybrid.epsilon,
        window=spec.hybrid.window,
        max_steps=spec.hybrid.max_steps)
