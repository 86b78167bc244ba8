import numpy as np
import pytest

from recosim import presets
from recosim.mobility import (MobilityError, build_layout, default_pair_rate,
                              generate_contact_trace,
                              generate_traveller_schedule, grid_layout,
                              nominal_encounter_rate)
from recosim.scenario import generate_scenario


class TestLayout:
    def test_three_communities_disjoint_cells(self):
        layout = grid_layout(3, 1000.0)
        assert layout.grid_dim == 2
        origins = {layout.cell_origin(c) for c in range(3)}
        assert len(origins) == 3

    def test_single_community_gets_whole_area(self):
        layout = grid_layout(1, 1000.0)
        assert layout.grid_dim == 1
        assert layout.cell_side == 1000.0

    def test_250_communities_on_16x16_grid(self):
        layout = grid_layout(250, 100_000.0)
        assert layout.grid_dim == 16
        assert layout.grid_dim ** 2 - 250 == 6  # six empty cells

    def test_rejects_impossible(self):
        with pytest.raises(MobilityError):
            grid_layout(0, 1000.0)

    def test_centroid_distance_symmetric(self):
        layout = grid_layout(9, 900.0)
        assert layout.centroid_distance(0, 8) == layout.centroid_distance(8, 0)
        assert layout.centroid_distance(0, 1) == pytest.approx(300.0)


class TestTravellerSchedule:
    def make(self, sojourn=6000.0, travel="instant", duration=None, seed=3):
        spec = presets.with_overrides(
            presets.validation(),
            mobility={"mean_sojourn": sojourn, "travel_time": travel})
        sc = generate_scenario(spec)
        layout = build_layout(sc)
        return sc, generate_traveller_schedule(sc, layout, seed, duration)

    def test_first_event_is_exit_from_home(self):
        sc, events = self.make()
        first = {}
        for ev in events:
            first.setdefault(ev.traveller, ev)
        for trav, ev in first.items():
            assert ev.kind == "exit"
            assert ev.community == int(sc.home[trav])

    def test_alternation_and_trip_consistency(self):
        sc, events = self.make(travel="distance_over_speed")
        per = {}
        for ev in events:
            per.setdefault(ev.traveller, []).append(ev)
        for trav, evs in per.items():
            places = {int(sc.home[trav]), int(sc.destination[trav])}
            for i, ev in enumerate(evs):
                assert ev.kind == ("exit" if i % 2 == 0 else "enter")
                assert ev.community in places
            times = [ev.time for ev in evs]
            assert times == sorted(times)

    def test_instant_travel_enter_equals_exit_time(self):
        _, events = self.make(travel="instant")
        pending = {}
        for ev in events:
            if ev.kind == "exit":
                pending[ev.traveller] = ev.time
            else:
                assert ev.time == pending.pop(ev.traveller)

    def test_expected_sojourn_count(self):
        # ~ duration / mean sojourns per traveller in expectation
        spec = presets.with_overrides(
            presets.validation(), communities=2, nodes_per_community=100,
            travellers_per_community=50,
            mobility={"mean_sojourn": 6000.0})
        sc = generate_scenario(spec)
        layout = build_layout(sc)
        events = generate_traveller_schedule(sc, layout, 5, 125_000.0)
        exits = sum(1 for ev in events if ev.kind == "exit")
        expected = 100 * 125_000.0 / 6000.0
        assert abs(exits - expected) / expected < 0.15

    def test_deterministic_per_seed(self):
        _, a = self.make(seed=9)
        _, b = self.make(seed=9)
        _, c = self.make(seed=10)
        assert a == b
        assert a != c


class TestHomogeneousTrace:
    def test_per_node_rate_matches_configuration(self):
        # 15 nodes, pair rate set for one contact per node per 100 s
        rate = 0.01 / 14
        spec = presets.with_overrides(
            presets.validation(), communities=1, nodes_per_community=15,
            travellers_per_community=0, duration=100_000.0,
            mobility={"pair_contact_rate": rate})
        sc = generate_scenario(spec)
        trace = generate_contact_trace(sc, build_layout(sc), 7)
        per_node = 2 * len(trace) / (15 * 100_000.0)
        assert abs(per_node - 0.01) / 0.01 < 0.05

    def test_sorted_and_deterministic(self):
        sc = generate_scenario(presets.validation())
        layout = build_layout(sc)
        a = generate_contact_trace(sc, layout, 11)
        b = generate_contact_trace(sc, layout, 11)
        assert a == b
        times = [ev.time for ev in a]
        assert times == sorted(times)

    def test_no_cross_community_contacts_without_travellers(self):
        spec = presets.with_overrides(presets.validation(),
                                      travellers_per_community=0)
        sc = generate_scenario(spec)
        trace = generate_contact_trace(sc, build_layout(sc), 13)
        assert trace, "expected some contacts"
        for ev in trace:
            assert sc.home[ev.node_a] == sc.home[ev.node_b]

    def test_travellers_mix_in_destination(self):
        sc = generate_scenario(presets.validation())
        trace = generate_contact_trace(sc, build_layout(sc), 13)
        crossings = [ev for ev in trace
                     if sc.home[ev.node_a] != sc.home[ev.node_b]]
        assert crossings, "travellers should meet non-home nodes"
        for ev in crossings:
            assert sc.is_traveller[ev.node_a] or sc.is_traveller[ev.node_b]


class TestGeometricTrace:
    def test_stationary_pair_contacts_once_at_zero(self):
        # two motionless nodes inside a 10 m cell with 20 m range: a single
        # edge-triggered contact at t=0
        spec = presets.with_overrides(
            presets.validation(), communities=1, nodes_per_community=2,
            channels=1, items_per_channel=2, travellers_per_community=0,
            duration=50.0,
            mobility={"mode": "geometric", "area_side": 10.0,
                      "speed_min": 0.0, "speed_max": 0.0})
        sc = generate_scenario(spec)
        trace = generate_contact_trace(sc, build_layout(sc), 17)
        assert len(trace) == 1
        assert trace[0].time == 0.0

    def test_moving_nodes_reconnect_after_separation(self):
        spec = presets.with_overrides(
            presets.validation(), communities=1, nodes_per_community=8,
            travellers_per_community=0, duration=20_000.0,
            mobility={"mode": "geometric", "area_side": 300.0})
        sc = generate_scenario(spec)
        trace = generate_contact_trace(sc, build_layout(sc), 19)
        pairs = {}
        for ev in trace:
            pairs.setdefault((ev.node_a, ev.node_b), []).append(ev.time)
        assert any(len(ts) > 1 for ts in pairs.values())

    def test_intercontact_tail_roughly_exponential(self):
        spec = presets.with_overrides(
            presets.validation(), communities=1, nodes_per_community=10,
            travellers_per_community=0, duration=40_000.0,
            mobility={"mode": "geometric", "area_side": 400.0})
        sc = generate_scenario(spec)
        trace = generate_contact_trace(sc, build_layout(sc), 23)
        pairs = {}
        for ev in trace:
            pairs.setdefault((ev.node_a, ev.node_b), []).append(ev.time)
        gaps = np.concatenate([np.diff(ts) for ts in pairs.values()
                               if len(ts) > 1])
        assert len(gaps) > 100
        cv = gaps.std() / gaps.mean()
        assert 0.5 < cv < 2.0  # qualitative: memoryless-like spread


class TestTransitContacts:
    def test_overlapping_transits_meet_once(self):
        spec = presets.with_overrides(
            presets.validation(), communities=2, nodes_per_community=10,
            travellers_per_community=1, duration=60_000.0,
            mobility={"mean_sojourn": 500.0,
                      "travel_time": "distance_over_speed",
                      "speed_min": 0.5, "speed_max": 0.6,
                      "in_transit_contacts": True})
        sc = generate_scenario(spec)
        trace = generate_contact_trace(sc, build_layout(sc), 29)
        travellers = set(int(t) for t in sc.traveller_ids())
        transit_meetings = [ev for ev in trace
                            if ev.node_a in travellers and ev.node_b in travellers]
        assert transit_meetings


class TestRates:
    def test_default_pair_rate_formula(self):
        # 2 * 1.3683 * range * (4/pi) * mean_speed / area
        rate = default_pair_rate(500.0, 20.0, 1.0, 1.86)
        expected = 2 * 1.3683 * 20.0 * (4 / np.pi) * 1.43 / 250_000.0
        assert rate == pytest.approx(expected)

    def test_nominal_encounter_rate_scales_with_membership(self):
        sc = generate_scenario(presets.validation())
        rate = nominal_encounter_rate(sc)
        assert rate == pytest.approx(
            default_pair_rate(500.0, 20.0, 1.0, 1.86) * 14)
