"""Experiment scenarios: population, interests, items and parameters.

Identifiers are dense non-negative integers in each namespace (nodes,
channels, items, communities). Node ids are blocked by community (community
``k`` owns ids ``[k*n, (k+1)*n)``) and item ids are blocked by channel, so a
channel's items form the contiguous range ``[c*ipc, (c+1)*ipc)``. That layout
lets the hybrid engine slice per-channel availability in O(1).

A scenario is described by a :class:`ScenarioSpec` (what you write in a config
file) and materialised into a :class:`Scenario` (per-node tables) by
:func:`generate_scenario`, which is a pure function of ``(spec, seed)``.

The on-disk format is a sectioned ``key = value`` text file with sections
``[scenario] [recognition] [mobility] [hybrid] [output]``. Unknown sections or
keys are an error. ``docs/scenario_schema.md`` documents every key.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import io
from dataclasses import dataclass, field

import numpy as np

from .seeding import generator


class ScenarioError(ValueError):
    """Invalid scenario parameters or config file."""


# ---------------------------------------------------------------------------
# Parameter blocks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RecognitionParams:
    """Thresholds and forgetting factors of the recognition protocol.

    ``channel_threshold`` / ``item_threshold`` are the counter values at which
    a channel / item counts as recognised. ``channel_forget`` and
    ``item_forget`` weight the probabilistic counter decay: a counter at level
    ``i`` drops by one with probability ``forget**i`` at every encounter where
    the channel (item) is not seen. ``oc_capacity`` is the bounded size of the
    altruistic cache.
    """

    channel_threshold: int = 10
    item_threshold: int = 10
    channel_forget: float = 0.0
    item_forget: float = 0.5
    oc_capacity: int = 5

    def check(self) -> list[str]:
        bad = []
        if self.channel_threshold < 1:
            bad.append("recognition: channel_threshold must be >= 1")
        if self.item_threshold < 1:
            bad.append("recognition: item_threshold must be >= 1")
        if not 0.0 <= self.channel_forget <= 1.0:
            bad.append("recognition: channel_forget outside [0, 1]")
        if not 0.0 <= self.item_forget <= 1.0:
            bad.append("recognition: item_forget outside [0, 1]")
        if self.oc_capacity < 1:
            bad.append("recognition: oc_capacity must be >= 1")
        return bad


@dataclass(frozen=True)
class MobilityConfig:
    """Contact generation and traveller movement parameters (units: m, m/s, s).

    ``pair_contact_rate`` is the per-pair Poisson contact rate used by the
    homogeneous-mixing mode; 0 means "derive from the geometric parameters".
    Node speed defaults to a pedestrian walking range; it is an assumption,
    not a measured value, and fully config-driven.
    """

    mode: str = "homogeneous"          # homogeneous | geometric
    area_side: float = 1000.0
    transmission_range: float = 20.0
    speed_min: float = 1.0
    speed_max: float = 1.86
    pause_time: float = 0.0
    mean_sojourn: float = 6000.0
    travel_time: str = "instant"       # instant | distance_over_speed
    in_transit_contacts: bool = False
    pair_contact_rate: float = 0.0

    def check(self) -> list[str]:
        bad = []
        if self.mode not in ("homogeneous", "geometric"):
            bad.append(f"mobility: unknown mode '{self.mode}'")
        if self.transmission_range <= 0:
            bad.append("mobility: transmission_range must be > 0")
        if self.mean_sojourn <= 0:
            bad.append("mobility: mean_sojourn must be > 0")
        if self.area_side <= 0:
            bad.append("mobility: area_side must be > 0")
        if self.speed_min < 0 or self.speed_max < self.speed_min:
            bad.append("mobility: need 0 <= speed_min <= speed_max")
        if self.travel_time not in ("instant", "distance_over_speed"):
            bad.append(f"mobility: unknown travel_time '{self.travel_time}'")
        if self.pair_contact_rate < 0:
            bad.append("mobility: pair_contact_rate must be >= 0")
        return bad


@dataclass(frozen=True)
class HybridConfig:
    """Hybrid-engine mode plus the steady-state detector of the mean-field model."""

    mode: str = "equal"                # equal | analytic
    epsilon: float = 1e-6
    window: int = 10
    max_steps: int = 1_000_000

    def check(self) -> list[str]:
        bad = []
        if self.mode not in ("equal", "analytic"):
            bad.append(f"hybrid: unknown mode '{self.mode}'")
        if self.epsilon <= 0:
            bad.append("hybrid: epsilon must be > 0")
        if self.window < 1:
            bad.append("hybrid: window must be >= 1")
        if self.max_steps < 1:
            bad.append("hybrid: max_steps must be >= 1")
        return bad


@dataclass(frozen=True)
class OutputConfig:
    sampling_interval: float = 500.0
    emit_events: bool = False
    channel_scopes: str = "auto"       # auto | all | ranks

    def check(self) -> list[str]:
        bad = []
        if self.sampling_interval <= 0:
            bad.append("output: sampling_interval must be > 0")
        if self.channel_scopes not in ("auto", "all", "ranks"):
            bad.append(f"output: unknown channel_scopes '{self.channel_scopes}'")
        return bad


@dataclass(frozen=True)
class ScenarioSpec:
    """High-level scenario parameters; everything a run needs, in one value."""

    name: str = "scenario"
    communities: int = 1
    nodes_per_community: int = 15
    channels: int = 3
    items_per_channel: int = 99
    zipf_s: float = 1.0
    subscription_scope: str = "community"   # community | global | uniform
    placement: str = "uniform_random"       # on_subscribers | uniform_random | per_community_quota
    placement_quota: int = 2
    travellers_per_community: int = 0
    traveller_destinations: str = "all_others"  # all_others | zipf_distance
    duration: float = 125_000.0
    base_seed: int = 42
    channel_recognition: bool = True
    recognition: RecognitionParams = field(default_factory=RecognitionParams)
    mobility: MobilityConfig = field(default_factory=MobilityConfig)
    hybrid: HybridConfig = field(default_factory=HybridConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    @property
    def n_nodes(self) -> int:
        return self.communities * self.nodes_per_community

    @property
    def n_items(self) -> int:
        return self.channels * self.items_per_channel

    def check(self) -> list[str]:
        bad = []
        if self.communities < 1:
            bad.append("scenario: communities must be >= 1")
        if self.nodes_per_community < 1:
            bad.append("scenario: nodes_per_community must be >= 1")
        if self.channels < 1:
            bad.append("scenario: channels must be >= 1")
        if self.items_per_channel < 1:
            bad.append("scenario: items_per_channel must be >= 1")
        if self.zipf_s <= 0:
            bad.append("scenario: zipf_s must be > 0")
        if self.subscription_scope not in ("community", "global", "uniform"):
            bad.append(f"scenario: unknown subscription_scope '{self.subscription_scope}'")
        if self.placement not in ("on_subscribers", "uniform_random", "per_community_quota"):
            bad.append(f"scenario: unknown placement '{self.placement}'")
        if self.placement == "per_community_quota":
            if self.placement_quota < 1:
                bad.append("scenario: placement_quota must be >= 1")
            elif self.items_per_channel != self.placement_quota * self.communities:
                bad.append(
                    "scenario: per_community_quota needs items_per_channel == "
                    "placement_quota * communities so every item has a holder"
                )
        if self.travellers_per_community < 0:
            bad.append("scenario: travellers_per_community must be >= 0")
        if self.travellers_per_community > self.nodes_per_community:
            bad.append("scenario: traveller count exceeds community size")
        if self.travellers_per_community > 0 and self.communities < 2:
            bad.append("scenario: travellers need at least two communities")
        if self.traveller_destinations not in ("all_others", "zipf_distance"):
            bad.append(f"scenario: unknown traveller_destinations '{self.traveller_destinations}'")
        if self.duration <= 0:
            bad.append("scenario: duration must be > 0")
        bad += self.recognition.check()
        bad += self.mobility.check()
        bad += self.hybrid.check()
        bad += self.output.check()
        return bad


# ---------------------------------------------------------------------------
# Config file schema
# ---------------------------------------------------------------------------

def _bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


# section -> key -> (attribute path, converter)
SCHEMA: dict[str, dict[str, tuple[str, type | object]]] = {
    "scenario": {
        "name": ("name", str),
        "communities": ("communities", int),
        "nodes_per_community": ("nodes_per_community", int),
        "channels": ("channels", int),
        "items_per_channel": ("items_per_channel", int),
        "zipf_s": ("zipf_s", float),
        "subscription_scope": ("subscription_scope", str),
        "placement": ("placement", str),
        "placement_quota": ("placement_quota", int),
        "travellers_per_community": ("travellers_per_community", int),
        "traveller_destinations": ("traveller_destinations", str),
        "duration": ("duration", float),
        "base_seed": ("base_seed", int),
        "channel_recognition": ("channel_recognition", _bool),
    },
    "recognition": {
        "channel_threshold": ("recognition.channel_threshold", int),
        "item_threshold": ("recognition.item_threshold", int),
        "channel_forget": ("recognition.channel_forget", float),
        "item_forget": ("recognition.item_forget", float),
        "oc_capacity": ("recognition.oc_capacity", int),
    },
    "mobility": {
        "mode": ("mobility.mode", str),
        "area_side": ("mobility.area_side", float),
        "transmission_range": ("mobility.transmission_range", float),
        "speed_min": ("mobility.speed_min", float),
        "speed_max": ("mobility.speed_max", float),
        "pause_time": ("mobility.pause_time", float),
        "mean_sojourn": ("mobility.mean_sojourn", float),
        "travel_time": ("mobility.travel_time", str),
        "in_transit_contacts": ("mobility.in_transit_contacts", _bool),
        "pair_contact_rate": ("mobility.pair_contact_rate", float),
    },
    "hybrid": {
        "mode": ("hybrid.mode", str),
        "epsilon": ("hybrid.epsilon", float),
        "window": ("hybrid.window", int),
        "max_steps": ("hybrid.max_steps", int),
    },
    "output": {
        "sampling_interval": ("output.sampling_interval", float),
        "emit_events": ("output.emit_events", _bool),
        "channel_scopes": ("output.channel_scopes", str),
    },
}


def parse_spec(text: str) -> ScenarioSpec:
    """Parse config text into a spec. Unknown sections/keys fail fast."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"),
                                       interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ScenarioError(f"malformed scenario file: {exc}") from exc

    updates: dict[str, dict] = {"": {}}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ScenarioError(f"unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                raise ScenarioError(f"unknown key '{key}' in section [{section}]")
            path, conv = SCHEMA[section][key]
            try:
                value = conv(raw)
            except ValueError as exc:
                raise ScenarioError(f"[{section}] {key}: {exc}") from exc
            if "." in path:
                block, attr = path.split(".")
                updates.setdefault(block, {})[attr] = value
            else:
                updates[""][path] = value

    spec = ScenarioSpec(**updates[""])
    for block in ("recognition", "mobility", "hybrid", "output"):
        if block in updates:
            spec = dataclasses.replace(
                spec, **{block: dataclasses.replace(getattr(spec, block), **updates[block])}
            )
    return spec


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def spec_to_text(spec: ScenarioSpec) -> str:
    """Canonical config text: fixed section/key order, so equal specs are
    byte-identical."""
    out = io.StringIO()
    for section, keys in SCHEMA.items():
        out.write(f"[{section}]\n")
        for key, (path, _conv) in keys.items():
            obj = spec
            for part in path.split("."):
                obj = getattr(obj, part)
            out.write(f"{key} = {_format_value(obj)}\n")
        out.write("\n")
    return out.getvalue()


def load_spec(path: str) -> ScenarioSpec:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_spec(fh.read())


def spec_hash(spec: ScenarioSpec) -> str:
    """Hash of the canonical serialisation; changes iff any scenario byte does."""
    return hashlib.sha256(spec_to_text(spec).encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# Popularity
# ---------------------------------------------------------------------------

def zipf_popularity(count: int, s: float = 1.0) -> np.ndarray:
    """Normalised Zipf weights: element k (1-based) proportional to k**-s.

    Strictly decreasing for s > 0 and summing to 1.
    """
    if count < 1:
        raise ScenarioError("zipf_popularity: count must be >= 1")
    if s <= 0:
        raise ScenarioError("zipf_popularity: s must be > 0")
    ranks = np.arange(1, count + 1, dtype=np.float64)
    weights = ranks ** (-s)
    return weights / weights.sum()


def largest_remainder(weights: np.ndarray, total: int) -> np.ndarray:
    """Integer counts summing to ``total`` proportional to ``weights``.

    Floors the exact quotas, then hands leftover units to the largest
    fractional remainders (ties by lower index). Deterministic.
    """
    quota = np.asarray(weights, dtype=np.float64) * total
    counts = np.floor(quota).astype(np.int64)
    leftover = total - int(counts.sum())
    if leftover > 0:
        frac = quota - counts
        order = np.lexsort((np.arange(len(frac)), -frac))
        counts[order[:leftover]] += 1
    return counts


# ---------------------------------------------------------------------------
# Materialised scenario
# ---------------------------------------------------------------------------

@dataclass
class Scenario:
    """Fully materialised population. Node ``i`` lives in community
    ``home[i]``, subscribes to ``subscription[i]``; item ``a`` belongs to
    channel ``a // items_per_channel`` and starts on node ``holder[a]``.

    ``pop[k, c]`` is the configured popularity of channel ``c`` in community
    ``k`` (rows sum to 1). ``destination[i]`` is -1 for non-travellers.
    """

    spec: ScenarioSpec
    home: np.ndarray
    subscription: np.ndarray
    is_traveller: np.ndarray
    destination: np.ndarray
    holder: np.ndarray
    pop: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.home)

    @property
    def n_communities(self) -> int:
        return self.spec.communities

    @property
    def n_channels(self) -> int:
        return self.spec.channels

    @property
    def items_per_channel(self) -> int:
        return self.spec.items_per_channel

    @property
    def n_items(self) -> int:
        return self.spec.channels * self.spec.items_per_channel

    def channel_of(self, item: int) -> int:
        return item // self.spec.items_per_channel

    def items_of_channel(self, channel: int) -> range:
        ipc = self.spec.items_per_channel
        return range(channel * ipc, (channel + 1) * ipc)

    def members(self, community: int) -> range:
        n = self.spec.nodes_per_community
        return range(community * n, (community + 1) * n)

    def subscriber_counts(self) -> np.ndarray:
        """(communities, channels) matrix of realised subscription counts."""
        k = self.n_communities
        counts = np.zeros((k, self.n_channels), dtype=np.int64)
        np.add.at(counts, (self.home, self.subscription), 1)
        return counts

    def traveller_ids(self) -> np.ndarray:
        return np.flatnonzero(self.is_traveller)

    def canonical_text(self) -> str:
        return spec_to_text(self.spec)

    def hash(self) -> str:
        return spec_hash(self.spec)


def generate_scenario(spec: ScenarioSpec, seed: int | None = None) -> Scenario:
    """Materialise a spec. Pure function of ``(spec, seed)``; ``seed`` defaults
    to ``spec.base_seed``."""
    problems = spec.check()
    if problems:
        raise ScenarioError("; ".join(problems))
    if seed is None:
        seed = spec.base_seed
    rng = generator(seed, "scenario")

    k, n, c = spec.communities, spec.nodes_per_community, spec.channels
    n_nodes = k * n
    zipf = zipf_popularity(c, spec.zipf_s)

    home = np.repeat(np.arange(k, dtype=np.int32), n)
    subscription = np.empty(n_nodes, dtype=np.int32)
    pop = np.empty((k, c), dtype=np.float64)

    if spec.subscription_scope == "community":
        # Interests rotate: the rank-1 channel of community i is rank-2 in
        # community i+1, and so on (cyclic shift of the rank order).
        for i in range(k):
            weights = zipf[(np.arange(c) + i) % c]
            pop[i] = weights
            counts = largest_remainder(weights, n)
            labels = np.repeat(np.arange(c, dtype=np.int32), counts)
            rng.shuffle(labels)
            subscription[i * n:(i + 1) * n] = labels
    else:
        # global: one skewed law over the whole population; uniform: equal
        # weights (what rotated interests aggregate to inside a shared cell)
        weights = zipf if spec.subscription_scope == "global" \
            else np.full(c, 1.0 / c)
        pop[:] = weights
        counts = largest_remainder(weights, n_nodes)
        labels = np.repeat(np.arange(c, dtype=np.int32), counts)
        rng.shuffle(labels)
        subscription[:] = labels

    is_traveller = np.zeros(n_nodes, dtype=bool)
    destination = np.full(n_nodes, -1, dtype=np.int32)
    t = spec.travellers_per_community
    if t > 0:
        if spec.traveller_destinations == "zipf_distance":
            from .mobility import grid_layout
            layout = grid_layout(k, spec.mobility.area_side)
        for i in range(k):
            travellers = np.sort(rng.choice(np.arange(i * n, (i + 1) * n), size=t,
                                            replace=False))
            is_traveller[travellers] = True
            others = np.array([j for j in range(k) if j != i], dtype=np.int64)
            if spec.traveller_destinations == "all_others":
                destination[travellers] = others[np.arange(t) % len(others)]
            else:
                # Rank other communities by centroid distance; pick rank r
                # with probability proportional to 1/r.
                dists = np.array([layout.centroid_distance(i, j) for j in others])
                ranked = others[np.lexsort((others, dists))]
                weights = zipf_popularity(len(ranked), 1.0)
                destination[travellers] = rng.choice(ranked, size=t, p=weights)

    holder = _place_items(spec, rng, subscription, home)

    return Scenario(spec=spec, home=home, subscription=subscription,
                    is_traveller=is_traveller, destination=destination,
                    holder=holder, pop=pop)


def _place_items(spec: ScenarioSpec, rng: np.random.Generator,
                 subscription: np.ndarray, home: np.ndarray) -> np.ndarray:
    c, ipc, k = spec.channels, spec.items_per_channel, spec.communities
    n_nodes = len(subscription)
    holder = np.empty(c * ipc, dtype=np.int32)

    if spec.placement == "uniform_random":
        holder[:] = rng.integers(0, n_nodes, size=c * ipc)
    elif spec.placement == "on_subscribers":
        for ch in range(c):
            subs = np.flatnonzero(subscription == ch)
            if len(subs) == 0:
                raise ScenarioError(
                    f"placement on_subscribers: channel {ch} has no subscribers")
            holder[ch * ipc:(ch + 1) * ipc] = rng.choice(subs, size=ipc)
    else:  # per_community_quota: deal q items of each channel to each community
        q = spec.placement_quota
        n = spec.nodes_per_community
        for ch in range(c):
            items = ch * ipc + rng.permutation(ipc)
            for i in range(k):
                chunk = items[i * q:(i + 1) * q]
                holder[chunk] = rng.integers(i * n, (i + 1) * n, size=q)
    return holder


def validate_scenario(s: Scenario) -> list[str]:
    """Check every structural invariant; returns violations (empty = valid).

    Never raises and never mutates: violations are data.
    """
    v: list[str] = list(s.spec.check())
    n_nodes, n_items = s.n_nodes, s.n_items
    k, n = s.spec.communities, s.spec.nodes_per_community

    if len(s.home) != n_nodes or len(s.subscription) != n_nodes:
        v.append("node tables do not match communities * nodes_per_community")
        return v

    expected_home = np.repeat(np.arange(k), n)
    if not np.array_equal(s.home, expected_home):
        v.append("node ids are not blocked by community")
    if s.subscription.min(initial=0) < 0 or s.subscription.max(initial=0) >= s.n_channels:
        v.append("subscription out of channel range")

    has_dest = s.destination >= 0
    if np.any(has_dest != s.is_traveller):
        v.append("destination must be present iff the node is a traveller")
    if np.any(s.destination[s.is_traveller] == s.home[s.is_traveller]):
        v.append("traveller destination equals home community")
    if np.any(s.destination >= k):
        v.append("traveller destination out of range")

    if len(s.holder) != n_items:
        v.append("holder table does not match channels * items_per_channel")
    else:
        missing = np.flatnonzero(s.holder < 0)
        for item in missing[:10]:
            v.append(f"item {int(item)} has no initial holder")
        if len(missing) > 10:
            v.append(f"... and {len(missing) - 10} more items without holders")
        if np.any(s.holder >= n_nodes):
            v.append("item holder out of node range")

    if s.pop.shape != (k, s.n_channels):
        v.append("popularity matrix has wrong shape")
    else:
        sums = s.pop.sum(axis=1)
        for i in np.flatnonzero(np.abs(sums - 1.0) > 1e-9)[:5]:
            v.append(f"popularity of community {int(i)} sums to {sums[i]:.6f}, not 1")
        if np.any(s.pop < -1e-12):
            v.append("negative popularity weight")

    return v
