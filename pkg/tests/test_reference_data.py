#!/usr/bin/env python3
"""Test script for the synthetic 2024-style reference survey"""

import os
import sys

import pytest

# Add src to path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

from estimators import rds2_mean, rds2_point, subgroup_table
from rds_engine import forest_from_dataset
from reference_data import synthesize_reference_dataset
from survey_data import validate_dataset, zero_skip_summary
from tree_analysis import iso_census, mean_out_degree, referral_degree_distribution, wave_stats


def test_reference_validates():
    print("Testing reference dataset validity...")
    ds = synthesize_reference_dataset()
    report = validate_dataset(ds)
    assert report.valid, report.violations[:3]
    assert len(ds) == 1466
    assert ds.year_label == '2024' and ds.top_code == 20
    again = synthesize_reference_dataset()
    assert [r.respondent_id for r in again.records] == [r.respondent_id for r in ds.records]
    assert [r.close_friend_degree for r in again.records] == \
        [r.close_friend_degree for r in ds.records]
    print(f"  ✓ {report.summary()}")


def test_forest_shape():
    print("Testing referral forest shape...")
    forest = forest_from_dataset(synthesize_reference_dataset())
    assert len(forest.seeds()) == 310
    assert len(forest.edges()) == 1156
    max_wave, waves, per_tree = wave_stats(forest)
    assert max_wave == 20
    assert waves.sum() == 1466 and len(per_tree) == 310
    census = iso_census(forest)
    assert census.total == 310
    print(f"  ✓ 310 trees, {len(census.entries)} isomorphism classes, max wave {max_wave}")


def test_referral_mean_out_degree():
    forest = forest_from_dataset(synthesize_reference_dataset())
    mean = mean_out_degree(referral_degree_distribution(forest))
    assert abs(mean - 0.789) < 0.01


def test_zero_skip_fractions():
    print("Testing zero/skip margins...")
    table = zero_skip_summary(synthesize_reference_dataset()).set_index('network')
    expected = {'kinship': 0.82, 'close_friendship': 0.45, 'acquaintance': 0.12,
                'referral': 0.56}
    for network, share in expected.items():
        observed = table.loc[network, 'fraction_zero_or_skip']
        assert abs(observed - share) <= 0.01, (network, observed)
    print("  ✓ " + ", ".join(f"{k} {table.loc[k, 'fraction_zero_or_skip']:.3f}"
                             for k in expected))


def test_close_friendship_mean_in_published_interval():
    print("Testing close-friendship RDS-II mean...")
    ds = synthesize_reference_dataset()
    estimate, n = rds2_point(ds, 'close_friendship')
    assert 2.31 <= estimate <= 2.69
    assert estimate == pytest.approx(2.5, abs=0.2)
    print(f"  ✓ {estimate:.3f} over {n} respondents")


def test_female_close_friendship():
    ds = synthesize_reference_dataset()
    cells = subgroup_table(ds, 'gender', ['close_friendship'], B=100, rng_seed=1)
    female = next(c for c in cells if c.level == 'female')
    assert female.estimate is not None
    assert female.estimate.estimate == pytest.approx(2.58, abs=0.4)


def test_kinship_design_effect():
    """Kinship reports cluster within trees, so the design effect is large"""
    print("Testing kinship design effect...")
    ds = synthesize_reference_dataset()
    forest = forest_from_dataset(ds)
    est = rds2_mean(ds, 'kinship', forest=forest, B=300, rng_seed=2)
    assert est.design_effect is not None and est.design_effect > 5
    assert est.ci95[0] >= 0.0
    print(f"  ✓ design effect {est.design_effect:.1f}")


def main():
    """Run all tests"""
    print("=" * 60)
    print("Reference Data - Component Tests")
    print("=" * 60)

    try:
        test_reference_validates()
        test_forest_shape()
        test_referral_mean_out_degree()
        test_zero_skip_fractions()
        test_close_friendship_mean_in_published_interval()
        test_female_close_friendship()
        test_kinship_design_effect()

        print("\n" + "=" * 60)
        print("All tests completed successfully! 🎉")
        print("=" * 60)

    except Exception as e:
        print(f"\n❌ Test failed with error: {e}")
        import traceback
        traceback.print_exc()


if __name__ == '__main__':
    main()
