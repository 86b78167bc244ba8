import dataclasses
import os

import numpy as np
import pytest
from scipy import stats

from recosim import presets
from recosim.scenario import (ScenarioError, SCHEMA, generate_scenario,
                              largest_remainder, load_spec, parse_spec,
                              spec_hash, spec_to_text, validate_scenario,
                              zipf_popularity)


class TestZipf:
    def test_three_elements(self):
        # harmonic normalisation: 1/(1+1/2+1/3) etc.
        np.testing.assert_allclose(zipf_popularity(3, 1.0),
                                   [6 / 11, 3 / 11, 2 / 11], rtol=1e-12)

    def test_single_element(self):
        np.testing.assert_allclose(zipf_popularity(1, 1.0), [1.0])

    def test_large_against_direct_summation(self):
        w = zipf_popularity(10_000, 1.0)
        # independent oracle: plain python harmonic sum
        harmonic = sum(1.0 / k for k in range(1, 10_001))
        assert abs(w[0] - 1.0 / harmonic) < 1e-12
        assert abs(w.sum() - 1.0) < 1e-12

    def test_strictly_decreasing(self):
        w = zipf_popularity(50, 0.7)
        assert np.all(np.diff(w) < 0)

    def test_zero_count_rejected(self):
        with pytest.raises(ScenarioError):
            zipf_popularity(0, 1.0)


class TestLargestRemainder:
    def test_sums_to_total(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            w = rng.random(8)
            w /= w.sum()
            counts = largest_remainder(w, 123)
            assert counts.sum() == 123
            assert np.all(counts >= 0)

    def test_exact_proportions(self):
        counts = largest_remainder(np.array([0.5, 0.25, 0.25]), 8)
        assert list(counts) == [4, 2, 2]


class TestGenerate:
    def test_validation_population(self):
        sc = generate_scenario(presets.validation())
        assert sc.n_nodes == 45
        assert sc.spec.nodes_per_community == 15
        assert int(sc.is_traveller.sum()) == 6
        assert sc.n_items == 297
        assert validate_scenario(sc) == []

    def test_urban_population(self):
        sc = generate_scenario(presets.urban())
        assert sc.n_nodes == 10_000
        assert int(sc.is_traveller.sum()) == 2_450
        assert validate_scenario(sc) == []

    def test_deterministic(self):
        spec = presets.validation()
        a = generate_scenario(spec)
        b = generate_scenario(spec)
        assert np.array_equal(a.subscription, b.subscription)
        assert np.array_equal(a.holder, b.holder)
        assert np.array_equal(a.destination, b.destination)
        assert a.canonical_text() == b.canonical_text()

    def test_seed_changes_population(self):
        spec = presets.validation()
        a = generate_scenario(spec)
        b = generate_scenario(spec, seed=12345)
        assert not (np.array_equal(a.subscription, b.subscription)
                    and np.array_equal(a.holder, b.holder))

    def test_rotation_property(self):
        # the rank-1 channel of community i is the rank-2 channel of i+1
        sc = generate_scenario(presets.urban())
        k, c = sc.spec.communities, sc.spec.channels
        for i in range(k):
            top = int(np.argmax(sc.pop[i]))
            nxt = (i + 1) % k
            order = np.argsort(-sc.pop[nxt], kind="stable")
            assert order[1] == top

    def test_subscription_histogram_matches_weights(self):
        # chi-square goodness of fit on a 1e5-node community
        spec = presets.with_overrides(presets.validation(), communities=1,
                                      nodes_per_community=100_000,
                                      travellers_per_community=0)
        sc = generate_scenario(spec)
        observed = np.bincount(sc.subscription, minlength=3)
        expected = sc.pop[0] * 100_000
        chi2 = float(((observed - expected) ** 2 / expected).sum())
        p = 1.0 - stats.chi2.cdf(chi2, df=2)
        assert p > 0.01

    def test_traveller_overflow_rejected(self):
        spec = presets.with_overrides(presets.validation(),
                                      nodes_per_community=1,
                                      travellers_per_community=2)
        with pytest.raises(ScenarioError):
            generate_scenario(spec)

    def test_on_subscribers_places_on_subscribers(self):
        spec = presets.with_overrides(presets.validation(),
                                      placement="on_subscribers")
        sc = generate_scenario(spec)
        for item in range(0, sc.n_items, 13):
            holder = int(sc.holder[item])
            assert int(sc.subscription[holder]) == sc.channel_of(item)

    def test_quota_placement_puts_k_items_per_community(self):
        spec = presets.urban(placement="per_community_quota", placement_quota=2)
        sc = generate_scenario(spec)
        comm_of_item = sc.home[sc.holder]
        for ch in range(0, 50, 9):
            items = sc.items_of_channel(ch)
            per_comm = np.bincount(comm_of_item[items.start:items.stop],
                                   minlength=50)
            assert np.all(per_comm == 2)

    def test_quota_placement_needs_matching_counts(self):
        spec = presets.with_overrides(presets.urban(),
                                      placement="per_community_quota",
                                      items_per_channel=99)
        with pytest.raises(ScenarioError):
            generate_scenario(spec)

    def test_global_scope_skews_entire_population(self):
        spec = presets.phase_transition_scaled()
        sc = generate_scenario(spec)
        counts = np.bincount(sc.subscription, minlength=500)
        # rank-1 channel has roughly n_nodes * w1 subscribers
        w = zipf_popularity(500, 1.0)
        assert abs(counts[0] - sc.n_nodes * w[0]) <= 1
        assert counts[0] > 40 * counts[499]


class TestValidate:
    def test_missing_holder_named(self):
        sc = generate_scenario(presets.validation())
        sc.holder[17] = -1
        problems = validate_scenario(sc)
        assert any("item 17" in p for p in problems)

    def test_popularity_normalisation(self):
        sc = generate_scenario(presets.validation())
        sc.pop[1] *= 0.9
        problems = validate_scenario(sc)
        assert any("sums to" in p for p in problems)

    def test_destination_iff_traveller(self):
        sc = generate_scenario(presets.validation())
        trav = int(sc.traveller_ids()[0])
        sc.destination[trav] = -1
        assert any("iff" in p for p in validate_scenario(sc))


class TestConfigFile:
    def test_round_trip(self, tmp_path):
        spec = presets.validation()
        text = spec_to_text(spec)
        assert parse_spec(text) == spec
        path = tmp_path / "scenario.cfg"
        path.write_text(text)
        assert load_spec(str(path)) == spec

    def test_unknown_key_fails_fast(self):
        with pytest.raises(ScenarioError, match="unknown key"):
            parse_spec("[scenario]\nfrobnicate = 3\n")

    def test_unknown_section_fails_fast(self):
        with pytest.raises(ScenarioError, match="unknown section"):
            parse_spec("[wormholes]\nx = 1\n")

    def test_bad_value_reports_key(self):
        with pytest.raises(ScenarioError, match="communities"):
            parse_spec("[scenario]\ncommunities = banana\n")

    def test_hash_changes_iff_bytes_change(self):
        spec = presets.validation()
        h1 = spec_hash(spec)
        assert spec_hash(presets.validation()) == h1
        bumped = dataclasses.replace(spec, base_seed=spec.base_seed + 1)
        assert spec_hash(bumped) != h1

    def test_schema_documented(self):
        doc = os.path.join(os.path.dirname(__file__), "..", "docs",
                           "scenario_schema.md")
        text = open(doc, encoding="utf-8").read()
        for section, keys in SCHEMA.items():
            assert f"[{section}]" in text
            for key in keys:
                assert key in text, f"schema doc misses {section}.{key}"
