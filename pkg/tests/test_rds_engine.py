#!/usr/bin/env python3
"""Test script for the RDS recruitment simulator and referral forests"""

import os
import sys
import tempfile

import networkx as nx
import numpy as np
import pytest

# Add src to path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

from estimators import rds2_point
from graph_core import AttributedGraph, assign_attributes, erdos_renyi
from rds_engine import (ForestError, RdsConfig, ReferralForest, forest_from_dataset,
                        simulate_rds, wave_trajectory)
from survey_data import DatasetError, load_dataset, save_dataset, validate_dataset


def _population(seed=1):
    g = erdos_renyi(600, 6, seed=seed)
    return assign_attributes(g, 'gender', {'male': 0.6, 'female': 0.4}, seed=seed + 1)


def test_config_validation():
    print("Testing config validation...")
    assert RdsConfig().validate(1000)['valid']
    assert not RdsConfig(acceptance_prob=0.0).validate(1000)['valid']
    assert not RdsConfig(seed_selection='snowball').validate(1000)['valid']
    assert not RdsConfig(target_sample=2000).validate(1000)['valid']
    assert not RdsConfig(coupons_per_respondent=0).validate(1000)['valid']
    with pytest.raises(ForestError):
        simulate_rds(AttributedGraph(10), RdsConfig(target_sample=50))
    cfg = RdsConfig.from_dict({'n_seeds': 2, 'unused': 'x'})
    assert cfg.n_seeds == 2
    print("  ✓ invalid configs rejected")


def test_star_graph():
    print("Testing star graph recruitment...")
    star = AttributedGraph.from_networkx(nx.star_graph(5))
    saw_hub = False
    for seed in range(30):
        cfg = RdsConfig(n_seeds=1, coupons_per_respondent=None, acceptance_prob=1.0,
                        target_sample=6, rng_seed=seed)
        forest, ds = simulate_rds(star, cfg)
        assert len(forest) == 6 and len(forest.seeds()) == 1
        root = forest.seeds()[0]
        if root == 'n0':
            saw_hub = True
            assert forest.out_degree(root) == 5 and forest.max_wave == 1
        else:
            assert forest.max_wave == 2
    assert saw_hub
    print("  ✓ hub seed gives one tree with 5 children")


def test_path_graph_twenty_waves():
    print("Testing 21-node path...")
    path = AttributedGraph.from_networkx(nx.path_graph(21))
    found = False
    for seed in range(400):
        cfg = RdsConfig(n_seeds=1, coupons_per_respondent=1, acceptance_prob=1.0,
                        target_sample=21, rng_seed=seed)
        forest, _ = simulate_rds(path, cfg)
        if forest.seeds()[0] in ('n0', 'n20'):
            found = True
            assert forest.max_wave == 20
            assert len(forest.trees()) == 1
            break
    assert found
    print("  ✓ end seed gives max wave 20")


def test_shortfall_recorded():
    print("Testing shortfall...")
    g = AttributedGraph(10, edges=[(0, 1)])
    forest, ds = simulate_rds(g, RdsConfig(n_seeds=1, acceptance_prob=1.0, target_sample=5))
    assert len(ds) == 2
    assert forest.shortfall == 3
    print("  ✓ stalled recruitment reports shortfall 3")


def test_simulation_produces_valid_survey():
    print("Testing simulated survey...")
    g = _population()
    forest, ds = simulate_rds(g, RdsConfig(target_sample=300, rng_seed=4))
    assert len(ds) <= 300
    report = validate_dataset(ds)
    assert report.valid, report.violations[:3]
    rebuilt = forest_from_dataset(ds)
    assert rebuilt.parent == forest.parent
    assert all(0 <= r.referral_out_degree <= 3 for r in ds.records)
    degrees = g.degrees()
    genders = g.attribute('gender')
    for record in ds.records:
        node = int(record.respondent_id[1:])
        assert record.acquaintance_degree == degrees[node]
        assert record.gender == genders[node]
    assert sum(r.referral_out_degree for r in ds.records) == len(ds) - len(forest.seeds())
    print(f"  ✓ {len(ds)} records, {len(forest.seeds())} seeds, max wave {forest.max_wave}")


def test_unlimited_coupons_save():
    """Unlimited coupons save and reload when nobody recruits more than three"""
    print("Testing unlimited-coupon surveys on disk...")
    path_graph = AttributedGraph.from_networkx(nx.path_graph(12))
    cfg = RdsConfig(n_seeds=1, coupons_per_respondent=None, acceptance_prob=1.0,
                    target_sample=12, rng_seed=3)
    forest, ds = simulate_rds(path_graph, cfg)
    star = AttributedGraph.from_networkx(nx.star_graph(5))
    hub = None
    for seed in range(30):
        hub_forest, hub_ds = simulate_rds(star, RdsConfig(
            n_seeds=1, coupons_per_respondent=None, acceptance_prob=1.0,
            target_sample=6, rng_seed=seed))
        if hub_forest.seeds() == ['n0']:
            hub = hub_ds
            break
    assert hub is not None
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, 'survey.csv')
        save_dataset(ds, path, 'csv')
        again = load_dataset(path, 'csv')
        assert validate_dataset(again).valid
        assert forest_from_dataset(again).parent == forest.parent

        assert not validate_dataset(hub).valid
        with pytest.raises(DatasetError):
            save_dataset(hub, os.path.join(tmp, 'hub.csv'), 'csv')
        assert not os.path.exists(os.path.join(tmp, 'hub.csv'))
    print("  ✓ five-coupon hub refused instead of truncated")


def test_simulation_deterministic():
    g = _population()
    cfg = RdsConfig(target_sample=200, rng_seed=9)
    first, _ = simulate_rds(g, cfg)
    second, _ = simulate_rds(g, cfg)
    assert first.to_frame().equals(second.to_frame())


def test_forest_csv_round_trip():
    print("Testing forest export...")
    forest, _ = simulate_rds(_population(), RdsConfig(target_sample=150, rng_seed=2))
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, 'forest.csv')
        forest.write_csv(path)
        again = ReferralForest.read_csv(path)
    assert again.parent == forest.parent
    assert again.wave == forest.wave
    print("  ✓ respondent_id,parent_id,wave restored")


def test_forest_structure_and_cycle():
    forest = ReferralForest(['a', 'b', 'c', 'd'], {'b': 'a', 'c': 'a', 'd': 'c'})
    assert forest.seeds() == ['a']
    assert forest.children('a') == ['b', 'c']
    assert forest.wave == {'a': 0, 'b': 1, 'c': 1, 'd': 2}
    assert forest.root_of('d') == 'a'
    assert forest.trees() == [['a', 'b', 'c', 'd']]
    assert forest.edges() == [('a', 'b'), ('a', 'c'), ('c', 'd')]
    with pytest.raises(ForestError):
        ReferralForest(['a', 'b'], {'a': 'b', 'b': 'a'})
    with pytest.raises(ForestError):
        ReferralForest(['a'], {'a': 'zz'})


def test_wave_trajectory():
    print("Testing wave trajectory...")
    forest, ds = simulate_rds(_population(), RdsConfig(target_sample=250, rng_seed=6))
    table = wave_trajectory(forest, ds, 'gender=female')
    assert table['wave'].tolist() == list(range(forest.max_wave + 1))
    assert table['n'].is_monotonic_increasing
    final, n = rds2_point(ds, 'gender=female')
    assert table['n'].iloc[-1] == n
    assert table['estimate'].iloc[-1] == pytest.approx(final)
    print(f"  ✓ {len(table)} waves, final estimate {final:.3f}")


def main():
    """Run all tests"""
    print("=" * 60)
    print("RDS Engine - Component Tests")
    print("=" * 60)

    try:
        test_config_validation()
        test_star_graph()
        test_path_graph_twenty_waves()
        test_shortfall_recorded()
        test_simulation_produces_valid_survey()
        test_simulation_deterministic()
        test_unlimited_coupons_save()
        test_forest_csv_round_trip()
        test_forest_structure_and_cycle()
        test_wave_trajectory()

        print("\n" + "=" * 60)
        print("All tests completed successfully! 🎉")
        print("=" * 60)

    except Exception as e:
        print(f"\n❌ Test failed with error: {e}")
        import traceback
        traceback.print_exc()


if __name__ == '__main__':
    main()
