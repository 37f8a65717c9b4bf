#!/usr/bin/env python3
"""Test script for survey dataset loading, validation and saving"""

import json
import os
import sys
import tempfile

import numpy as np
import pandas as pd
import pytest

# Add src to path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

from survey_data import (AGE_BRACKETS, CSV_COLUMNS, ETHNICITIES, GENDERS, RACE_CATEGORIES,
                         SHELTER_STATUSES, TOP_CODES, DatasetError, DatasetLoader, SurveyDataset,
                         SurveyRecord, load_dataset, save_dataset, validate_dataset,
                         validate_file, zero_skip_summary)


def _row(rid, recruiter='', coupons=('', '', ''), friend='2', **extra):
    row = {c: '' for c in CSV_COLUMNS}
    row.update({'respondent_id': rid, 'recruiter_coupon': recruiter,
                'coupon1': coupons[0], 'coupon2': coupons[1], 'coupon3': coupons[2],
                'gender': 'male', 'acq_degree': '10', 'friend_degree': friend,
                'kin_degree': '0'})
    row.update(extra)
    return row


def _write_csv(rows, directory, name='survey.csv'):
    path = os.path.join(directory, name)
    pd.DataFrame(rows, columns=CSV_COLUMNS).to_csv(path, index=False)
    return path


def _small_rows():
    return [
        _row('A', coupons=('A1', 'A2', 'A3')),
        _row('B', recruiter='A1', coupons=('B1', 'B2', '')),
        _row('C', recruiter='A2', friend=''),
        _row('D', recruiter='B1', gender='Female', veteran='1'),
    ]


def test_load_well_formed():
    """A linked four-record file loads with parents and referral degrees"""
    print("Testing well-formed load...")
    with tempfile.TemporaryDirectory() as tmp:
        ds = load_dataset(_write_csv(_small_rows(), tmp))
    assert len(ds) == 4
    parents = ds.parent_map()
    assert parents == {'A': None, 'B': 'A', 'C': 'A', 'D': 'B'}
    assert [r.referral_out_degree for r in ds.records] == [2, 1, 0, 0]
    assert ds.records[2].close_friend_degree is None
    assert ds.records[3].gender == 'female'
    assert ds.records[3].veteran is True
    print("  ✓ linkage, skips and flags parsed")


def test_duplicate_coupon_reported_with_rows():
    print("Testing duplicate coupon...")
    rows = _small_rows()
    rows[2]['coupon1'] = 'A3'
    with tempfile.TemporaryDirectory() as tmp:
        report = validate_file(_write_csv(rows, tmp))
    assert not report.valid
    assert any("duplicate coupon 'A3' (rows 1, 3)" in v for v in report.violations)
    print(f"  ✓ {report.summary()}")


def test_duplicate_respondent_and_coupon_limit():
    print("Testing duplicate id and coupon limit...")
    ds = SurveyDataset(records=[
        SurveyRecord('A', own_coupons=['a', 'b', 'c', 'd']),
        SurveyRecord('A', own_coupons=['e']),
    ])
    report = validate_dataset(ds)
    assert any(v.startswith("coupon limit exceeded") for v in report.violations)
    assert any("duplicate respondent_id 'A' (rows 1, 2)" in v for v in report.violations)
    print("  ✓ both violations found in one pass")


def test_top_code_per_year():
    print("Testing top code...")
    assert TOP_CODES == {'2023': 15, '2024': 20}
    rows = _small_rows()
    rows[0]['friend_degree'] = '16'
    with tempfile.TemporaryDirectory() as tmp:
        path = _write_csv(rows, tmp)
        assert validate_file(path, top_code=20).valid
        report = validate_file(path, top_code=15, year_label='2023')
        assert not report.valid
        assert "exceeds top code 15" in report.violations[0]
        with pytest.raises(DatasetError):
            load_dataset(path, top_code=15, year_label='2023')
    print("  ✓ 16 accepted at 20, rejected at 15")


def test_negative_and_unknown_category():
    print("Testing negative degree and unknown category...")
    rows = _small_rows()
    rows[1]['acq_degree'] = '-3'
    rows[2]['race'] = 'martian'
    with tempfile.TemporaryDirectory() as tmp:
        report = validate_file(_write_csv(rows, tmp))
    assert any('negative' in v and '(row 2)' in v for v in report.violations)
    assert any("unknown race 'martian' (row 3)" in v for v in report.violations)
    print("  ✓ violations carry row numbers")


def test_orphan_policy():
    print("Testing orphan policy...")
    rows = _small_rows()
    rows[3]['recruiter_coupon'] = 'ZZ9'
    with tempfile.TemporaryDirectory() as tmp:
        path = _write_csv(rows, tmp)
        seeded = validate_file(path, orphan_policy='seed')
        rejected = validate_file(path, orphan_policy='reject')
        ds = load_dataset(path, orphan_policy='seed')
    assert seeded.valid and len(seeded.warnings) == 1 and seeded.orphan_count == 1
    assert not rejected.valid
    assert ds.parent_map()['D'] is None
    assert ds.seed_mask().tolist() == [True, False, False, True]
    print("  ✓ seed policy warns, reject policy fails")


def test_self_redeemed_coupon():
    ds = SurveyDataset(records=[SurveyRecord('A', recruiter_coupon='a1', own_coupons=['a1'])])
    report = validate_dataset(ds)
    assert any('redeemed their own coupon' in v for v in report.violations)


def test_cycle_detected():
    print("Testing referral cycle...")
    ds = SurveyDataset(records=[
        SurveyRecord('A', recruiter_coupon='b1', own_coupons=['a1']),
        SurveyRecord('B', recruiter_coupon='a1', own_coupons=['b1']),
    ])
    report = validate_dataset(ds)
    assert any('referral cycle' in v for v in report.violations)
    print("  ✓ cycle reported")


def test_header_mismatch():
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, 'bad.csv')
        with open(path, 'w') as f:
            f.write("id,coupon\nA,x\n")
        with pytest.raises(DatasetError):
            load_dataset(path)
        report = validate_file(path)
    assert not report.valid and 'header mismatch' in report.violations[0]


def test_save_and_reload_csv_and_json():
    print("Testing save/reload...")
    with tempfile.TemporaryDirectory() as tmp:
        ds = load_dataset(_write_csv(_small_rows(), tmp))
        for fmt in ('csv', 'json'):
            path = os.path.join(tmp, f"copy.{fmt}")
            save_dataset(ds, path, fmt)
            again = load_dataset(path, fmt)
            assert [r.respondent_id for r in again.records] == ['A', 'B', 'C', 'D']
            assert again.parent_map() == ds.parent_map()
            assert again.records[2].close_friend_degree is None
            assert again.records[3].veteran is True
        with open(os.path.join(tmp, 'copy.csv')) as f:
            assert f.readline().strip() == ','.join(CSV_COLUMNS)
    print("  ✓ csv and json reload to the same linkage")


def _random_dataset(n, seed):
    """Valid dataset with random linkage, categories, flags and skipped answers"""
    rng = np.random.default_rng(seed)

    def maybe(values):
        return None if rng.random() < 0.15 else values[int(rng.integers(len(values)))]

    def degree():
        return None if rng.random() < 0.2 else int(rng.integers(0, 16))

    records, unused = [], []
    for i in range(n):
        recruiter = None
        if unused and rng.random() < 0.7:
            recruiter = unused.pop(int(rng.integers(len(unused))))
        coupons = [f"C{i}-{j}" for j in range(int(rng.integers(0, 4)))]
        unused.extend(coupons)
        records.append(SurveyRecord(
            respondent_id=f"R{i:04d}", recruiter_coupon=recruiter, own_coupons=coupons,
            hub_id=maybe(['H1', 'H2', 'H3']), age_bracket=maybe(AGE_BRACKETS),
            gender=maybe(GENDERS), race=maybe(RACE_CATEGORIES['2024']),
            ethnicity=maybe(ETHNICITIES), shelter_status=maybe(SHELTER_STATUSES),
            veteran=maybe([True, False]), chronic=maybe([True, False]),
            mental_health=maybe([True, False]), substance_use=maybe([True, False]),
            disability=maybe([True, False]), acquaintance_degree=degree(),
            close_friend_degree=degree(), kinship_degree=degree()))
    ds = SurveyDataset(records=records)
    ds.refresh_referral_degrees()
    return ds


def test_random_round_trip_field_for_field():
    """load(save(ds)) == ds for a random 500-record dataset, and re-saves are byte-stable"""
    print("Testing 500-record round trip...")
    ds = _random_dataset(500, seed=17)
    assert validate_dataset(ds).valid
    with tempfile.TemporaryDirectory() as tmp:
        for fmt in ('csv', 'json'):
            first = os.path.join(tmp, f"first.{fmt}")
            second = os.path.join(tmp, f"second.{fmt}")
            save_dataset(ds, first, fmt)
            again = load_dataset(first, fmt)
            assert again.records == ds.records
            save_dataset(again, second, fmt)
            with open(first, 'rb') as a, open(second, 'rb') as b:
                assert a.read() == b.read(), fmt
    print("  ✓ csv and json equal field-for-field")


def test_json_year_sets_race_categories():
    """A 2023 JSON file is checked against the 2023 race list"""
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, 'survey.json')
        with open(path, 'w') as f:
            json.dump({'year_label': '2023',
                       'records': [{'respondent_id': 'A', 'race': 'hispanic_latino'}]}, f)
        loader = DatasetLoader()
        ds, report = loader.read(path, 'json')
    assert ds.year_label == '2023'
    assert loader.category_dictionaries['race'] == RACE_CATEGORIES['2023']
    assert any("unknown race 'hispanic_latino'" in v for v in report.violations)

    explicit = DatasetLoader(category_dictionaries={'race': RACE_CATEGORIES['2024']})
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, 'survey.json')
        with open(path, 'w') as f:
            json.dump({'year_label': '2023',
                       'records': [{'respondent_id': 'A', 'race': 'hispanic_latino'}]}, f)
        _, report = explicit.read(path, 'json')
    assert report.valid


def test_json_own_coupons_list():
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, 'survey.json')
        with open(path, 'w') as f:
            f.write('{"year_label": "2023", "records": ['
                    '{"respondent_id": "A", "own_coupons": ["a1", "a2"], "friend_degree": 3},'
                    '{"respondent_id": "B", "recruiter_coupon": "a2", "friend_degree": 0}]}')
        loader = DatasetLoader(top_code=15)
        ds = loader.load(path, 'json')
    assert ds.year_label == '2023'
    assert ds.parent_map()['B'] == 'A'
    assert loader.get_stats()['rows_read'] == 2


def test_value_aliases_and_indicators():
    print("Testing variable resolution...")
    record = SurveyRecord('A', gender='female', acquaintance_degree=12, veteran=False)
    ds = SurveyDataset(records=[record, SurveyRecord('B')])
    assert ds.value(record, 'acq_degree') == 12
    assert ds.value(record, 'acquaintance') == 12
    assert ds.value(record, 'gender=female') == 1.0
    assert ds.value(record, 'gender=male') == 0.0
    assert ds.value(record, 'veteran') == 0.0
    values = ds.numeric_values('gender=female')
    assert values[0] == 1.0 and np.isnan(values[1])
    with pytest.raises(DatasetError):
        ds.value(record, 'shoe_size')
    print("  ✓ aliases and attr=level indicators")


def test_zero_skip_summary():
    print("Testing zero/skip table...")
    with tempfile.TemporaryDirectory() as tmp:
        ds = load_dataset(_write_csv(_small_rows(), tmp))
    table = zero_skip_summary(ds).set_index('network')
    assert table.loc['kinship', 'fraction_zero_or_skip'] == 1.0
    assert table.loc['close_friendship', 'n_missing'] == 1
    assert table.loc['close_friendship', 'fraction_zero_or_skip'] == 0.25
    assert table.loc['referral', 'n_zero'] == 2
    print("  ✓ zero and skip shares")


def main():
    """Run all tests"""
    print("=" * 60)
    print("Survey Data - Component Tests")
    print("=" * 60)

    try:
        test_load_well_formed()
        test_duplicate_coupon_reported_with_rows()
        test_duplicate_respondent_and_coupon_limit()
        test_top_code_per_year()
        test_negative_and_unknown_category()
        test_orphan_policy()
        test_self_redeemed_coupon()
        test_cycle_detected()
        test_header_mismatch()
        test_save_and_reload_csv_and_json()
        test_random_round_trip_field_for_field()
        test_json_year_sets_race_categories()
        test_json_own_coupons_list()
        test_value_aliases_and_indicators()
        test_zero_skip_summary()

        print("\n" + "=" * 60)
        print("All tests completed successfully! 🎉")
        print("=" * 60)

    except Exception as e:
        print(f"\n❌ Test failed with error: {e}")
        import traceback
        traceback.print_exc()


if __name__ == '__main__':
    main()
