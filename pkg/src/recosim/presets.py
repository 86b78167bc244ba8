"""Canonical experiment configurations.

Forgetting factors are free protocol parameters (the protocol only bounds
them to [0, 1]); the values below were calibrated so that the event-driven
and mean-field engines agree on the validation configurations. Traveller
sojourn defaults to 6000 s where a configuration does not pin it.
"""

from __future__ import annotations

import dataclasses

from .scenario import (HybridConfig, MobilityConfig, OutputConfig,
                       RecognitionParams, ScenarioSpec)

# Calibrated defaults: channels never stop being recognised once seen often
# (slow channel decay), items churn fast enough that the bounded cache keeps
# rebalancing toward under-replicated content.
DEFAULT_CHANNEL_FORGET = 0.25
DEFAULT_ITEM_FORGET = 0.8


def single_community_model_validation() -> ScenarioSpec:
    """45 nodes in one cell, 3 channels x 99 items, small bounded cache.

    The configuration used to study the single-community steady state
    (thresholds 5, cache of 3). Interests are group-rotated Zipf, which
    aggregates to uniform channel popularity inside the shared cell.
    """
    return ScenarioSpec(
        name="fig4",
        communities=1,
        nodes_per_community=45,
        channels=3,
        items_per_channel=99,
        subscription_scope="uniform",
        placement="uniform_random",
        travellers_per_community=0,
        duration=125_000.0,
        base_seed=42,
        recognition=RecognitionParams(channel_threshold=5, item_threshold=5,
                                      channel_forget=DEFAULT_CHANNEL_FORGET,
                                      item_forget=DEFAULT_ITEM_FORGET,
                                      oc_capacity=3),
        mobility=MobilityConfig(mode="homogeneous", area_side=1000.0),
    )


def validation(mean_sojourn: float = 6000.0) -> ScenarioSpec:
    """Three communities of 15 with two travellers each (thresholds 10,
    cache of 5); the small-scale scenario both engines can run."""
    return ScenarioSpec(
        name="table3",
        communities=3,
        nodes_per_community=15,
        channels=3,
        items_per_channel=99,
        subscription_scope="community",
        placement="uniform_random",
        travellers_per_community=2,
        traveller_destinations="all_others",
        duration=125_000.0,
        # seed picked so the random traveller draw has a commuting subscriber
        # for every channel, the regime the small-scale comparisons assume
        base_seed=2,
        recognition=RecognitionParams(channel_threshold=10, item_threshold=10,
                                      channel_forget=DEFAULT_CHANNEL_FORGET,
                                      item_forget=DEFAULT_ITEM_FORGET,
                                      oc_capacity=5),
        mobility=MobilityConfig(mode="homogeneous", area_side=1000.0,
                                mean_sojourn=mean_sojourn),
    )


def urban(oc_capacity: int = 10, items_per_channel: int = 100,
          placement: str = "uniform_random", placement_quota: int = 2
          ) -> ScenarioSpec:
    """City scale: 50 communities x 200 nodes, 50 channels, one outgoing
    traveller toward each other community."""
    return ScenarioSpec(
        name="urban",
        communities=50,
        nodes_per_community=200,
        channels=50,
        items_per_channel=items_per_channel,
        subscription_scope="community",
        placement=placement,
        placement_quota=placement_quota,
        travellers_per_community=49,
        traveller_destinations="all_others",
        duration=125_000.0,
        base_seed=42,
        recognition=RecognitionParams(channel_threshold=10, item_threshold=10,
                                      channel_forget=DEFAULT_CHANNEL_FORGET,
                                      item_forget=DEFAULT_ITEM_FORGET,
                                      oc_capacity=oc_capacity),
        mobility=MobilityConfig(mode="homogeneous", area_side=1000.0,
                                mean_sojourn=5000.0),
    )


def phase_transition_scaled() -> ScenarioSpec:
    """Scaled-down regional topology exhibiting the popularity phase
    transition: 50 communities x 200 nodes, 500 channels under a global Zipf
    law, sparse travellers with distance-skewed destinations."""
    return ScenarioSpec(
        name="phase",
        communities=50,
        nodes_per_community=200,
        channels=500,
        items_per_channel=100,
        subscription_scope="global",
        placement="on_subscribers",
        travellers_per_community=25,
        traveller_destinations="zipf_distance",
        duration=125_000.0,
        base_seed=42,
        recognition=RecognitionParams(channel_threshold=10, item_threshold=10,
                                      channel_forget=DEFAULT_CHANNEL_FORGET,
                                      item_forget=DEFAULT_ITEM_FORGET,
                                      oc_capacity=60),
        mobility=MobilityConfig(mode="homogeneous", area_side=10_000.0,
                                mean_sojourn=3000.0),
    )


def regional() -> ScenarioSpec:
    """Full regional scale (stretch): 250 communities x 10,000 nodes,
    10,000 channels x 500 items over 10,000 km^2."""
    return ScenarioSpec(
        name="regional",
        communities=250,
        nodes_per_community=10_000,
        channels=10_000,
        items_per_channel=500,
        subscription_scope="global",
        placement="on_subscribers",
        travellers_per_community=25,
        traveller_destinations="zipf_distance",
        duration=125_000.0,
        base_seed=42,
        recognition=RecognitionParams(channel_threshold=10, item_threshold=10,
                                      channel_forget=DEFAULT_CHANNEL_FORGET,
                                      item_forget=DEFAULT_ITEM_FORGET,
                                      oc_capacity=5000),
        mobility=MobilityConfig(mode="homogeneous", area_side=100_000.0),
    )


PRESETS = {
    "fig4": single_community_model_validation,
    "table3": validation,
    "urban": urban,
    "phase": phase_transition_scaled,
    "regional": regional,
}


def get_preset(name: str) -> ScenarioSpec:
    try:
        return PRESETS[name]()
    except KeyError:
        raise KeyError(f"unknown preset '{name}'; have {sorted(PRESETS)}") from None


def with_overrides(spec: ScenarioSpec, **kwargs) -> ScenarioSpec:
    """Convenience for tests and sweeps: replace top-level or nested fields
    (nested blocks take a dict of field overrides)."""
    nested = {}
    flat = {}
    for key, value in kwargs.items():
        if key in ("recognition", "mobility", "hybrid", "output") and isinstance(value, dict):
            nested[key] = value
        else:
            flat[key] = value
    spec = dataclasses.replace(spec, **flat)
    for block, fields in nested.items():
        spec = dataclasses.replace(
            spec, **{block: dataclasses.replace(getattr(spec, block), **fields)})
    return spec
