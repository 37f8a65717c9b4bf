#!/usr/bin/env python3
"""Test script for the command-line front end"""

import json
import os
import sys
import tempfile

import pandas as pd
import yaml

# Add repository root and src to path
ROOT = os.path.join(os.path.dirname(__file__), '..')
sys.path.insert(0, ROOT)
sys.path.insert(0, os.path.join(ROOT, 'src'))

from main import EXIT_INVALID, EXIT_OK, EXIT_RUNTIME, OUTPUT_DIR_ENV, main
from output_writer import TOOL_NAME, read_metadata, read_table
from survey_data import CSV_COLUMNS


# Small settings so every subcommand finishes quickly
TEST_CONFIG = {
    'estimate': {'networks': ['close_friendship', 'referral'], 'bootstrap_replicates': 100,
                 'wave_trajectory': 'close_friendship', 'rng_seed': 7},
    'fit': {'response': 'close_friend_degree', 'conditional_terms': ['gender'],
            'family': 'negbin', 'max_count': 20, 'rng_seed': 3},
    'simulate': {'population': {'n': 300, 'mean_degree': 6,
                                'attributes': {'gender': {'male': 0.69, 'female': 0.31}}},
                 'rds': {'n_seeds': 4, 'acceptance_prob': 0.7, 'target_sample': 100},
                 'rng_seed': 5},
    'ergm': {'n': 60, 'samples_per_phase': 30, 'rng_seed': 4},
    'power': {'n': 200, 'sample_sizes': [40], 'replicates': 50, 'bootstrap_replicates': 100,
              'rds': {'n_seeds': 4, 'acceptance_prob': 0.7}, 'rng_seed': 9},
    'logging': {'level': 'WARNING', 'file': None, 'console': True},
}


def _config(directory):
    path = os.path.join(directory, 'config.yaml')
    with open(path, 'w') as f:
        yaml.safe_dump(TEST_CONFIG, f)
    return path


def _run(directory, *args, output='out'):
    return main(['--config', _config(directory), '--output-dir',
                 os.path.join(directory, output), *args])


def _survey(directory, rows, name='survey.csv'):
    path = os.path.join(directory, name)
    full = [dict({c: '' for c in CSV_COLUMNS}, **row) for row in rows]
    pd.DataFrame(full, columns=CSV_COLUMNS).to_csv(path, index=False)
    return path


GOOD_ROWS = [
    {'respondent_id': 'A', 'coupon1': 'A1', 'coupon2': 'A2', 'friend_degree': '3',
     'acq_degree': '10', 'gender': 'male'},
    {'respondent_id': 'B', 'recruiter_coupon': 'A1', 'friend_degree': '0',
     'acq_degree': '5', 'gender': 'female'},
    {'respondent_id': 'C', 'recruiter_coupon': 'A2', 'friend_degree': '2',
     'acq_degree': '8', 'gender': 'female'},
]


def test_validate_exit_codes():
    print("Testing validate exit codes...")
    with tempfile.TemporaryDirectory() as tmp:
        good = _survey(tmp, GOOD_ROWS)
        assert _run(tmp, 'validate', good) == EXIT_OK

        duplicate = [dict(r) for r in GOOD_ROWS]
        duplicate[2]['coupon1'] = 'A1'
        assert _run(tmp, 'validate', _survey(tmp, duplicate, 'dup.csv')) == EXIT_INVALID

        orphan = [dict(r) for r in GOOD_ROWS]
        orphan[2]['recruiter_coupon'] = 'ZZ9'
        orphan_path = _survey(tmp, orphan, 'orphan.csv')
        assert _run(tmp, 'validate', orphan_path) == EXIT_OK
        with open(os.path.join(tmp, 'out', 'validation_report.json')) as f:
            report = json.load(f)['data']
        assert report['valid'] and report['orphan_count'] == 1
        assert len(report['warnings']) == 1
        assert _run(tmp, 'validate', '--orphan-policy', 'reject', orphan_path) == EXIT_INVALID

        assert _run(tmp, 'validate', os.path.join(tmp, 'missing.csv')) == EXIT_INVALID
        assert _run(tmp, 'estimate') == EXIT_INVALID
    print("  ✓ 0 for valid, 1 for violations")


def test_estimate_reference_with_metadata():
    print("Testing estimate --reference...")
    with tempfile.TemporaryDirectory() as tmp:
        assert _run(tmp, '--seed', '11', 'estimate', '--reference') == EXIT_OK
        path = os.path.join(tmp, 'out', 'estimates.csv')
        metadata = read_metadata(path)
        assert metadata['tool'] == TOOL_NAME
        assert metadata['command'] == 'estimate'
        assert metadata['rng_seed'] == '11'
        assert len(metadata['config_hash']) == 64
        table = read_table(path)
        assert list(table.columns) == ['panel', 'term', 'estimate', 'ci_low', 'ci_high', 'se',
                                       'de', 'n']
        row = table[(table['panel'] == 'All Respondents')
                    & (table['term'] == 'close_friendship')].iloc[0]
        assert 2.31 <= row['estimate'] <= 2.69
        assert os.path.exists(os.path.join(tmp, 'out', 'zero_skip.csv'))
        trajectory = read_table(os.path.join(tmp, 'out', 'wave_trajectory.csv'))
        assert trajectory['wave'].max() == 20
    print(f"  ✓ close friendship {row['estimate']:.3f}")


def test_estimate_is_deterministic():
    print("Testing byte-identical reruns...")
    with tempfile.TemporaryDirectory() as tmp:
        assert _run(tmp, 'estimate', '--reference', output='a') == EXIT_OK
        assert _run(tmp, '-j', '3', 'estimate', '--reference', output='b') == EXIT_OK
        for name in ('estimates.csv', 'zero_skip.csv', 'wave_trajectory.csv'):
            with open(os.path.join(tmp, 'a', name), 'rb') as f:
                first = f.read()
            with open(os.path.join(tmp, 'b', name), 'rb') as f:
                assert f.read() == first, name
    print("  ✓ identical bytes")


def test_json_format():
    with tempfile.TemporaryDirectory() as tmp:
        assert _run(tmp, '--format', 'json', 'mixing', '--reference') == EXIT_OK
        with open(os.path.join(tmp, 'out', 'mixing.json')) as f:
            document = json.load(f)
        assert document['metadata']['command'] == 'mixing'
        assert {row['recruiter'] for row in document['data']} == {'male', 'female'}


def test_trees_and_mixing_reference():
    print("Testing trees and mixing on the reference dataset...")
    with tempfile.TemporaryDirectory() as tmp:
        assert _run(tmp, 'trees', '--reference') == EXIT_OK
        census = read_table(os.path.join(tmp, 'out', 'iso_census.csv'))
        assert census['multiplicity'].sum() == 310
        waves = read_table(os.path.join(tmp, 'out', 'wave_histogram.csv'))
        assert len(waves) == 21 and waves['count'].sum() == 1466
        with open(os.path.join(tmp, 'out', 'iso_grid.json')) as f:
            assert len(json.load(f)['data']['classes']) == len(census)

        assert _run(tmp, 'mixing', '--reference') == EXIT_OK
        mixing = read_table(os.path.join(tmp, 'out', 'mixing.csv'))
        assert len(mixing) == 4
        totals = mixing.groupby('recruiter')['rate'].sum()
        assert ((totals - 1.0).abs() < 1e-9).all()
    print(f"  ✓ {len(census)} tree classes")


def test_fit_reference():
    print("Testing fit --reference...")
    with tempfile.TemporaryDirectory() as tmp:
        assert _run(tmp, 'fit', '--reference') == EXIT_OK
        selection = read_table(os.path.join(tmp, 'out', 'family_selection.csv'))
        assert sorted(selection['family']) == ['negbin', 'poisson', 'zinb', 'zip']
        assert selection['rank'].tolist() == [1, 2, 3, 4]
        with open(os.path.join(tmp, 'out', 'final_model.json')) as f:
            final = json.load(f)['data']
        assert final['spec']['family'] == 'negbin'
        with open(os.path.join(tmp, 'out', 'regression_table.txt')) as f:
            assert 'Count model (log link)' in f.read()
    print("  ✓ selection table and final model written")


def test_simulate_then_validate():
    print("Testing simulate -> validate...")
    with tempfile.TemporaryDirectory() as tmp:
        assert _run(tmp, 'simulate') == EXIT_OK
        out = os.path.join(tmp, 'out')
        for name in ('survey.csv', 'forest.csv', 'population.edges', 'simulation_summary.json'):
            assert os.path.exists(os.path.join(out, name)), name
        assert _run(tmp, 'validate', os.path.join(out, 'survey.csv'), output='check') == EXIT_OK

        assert _run(tmp, 'simulate', '--reference', output='ref') == EXIT_OK
        reference = os.path.join(tmp, 'ref', 'reference_survey.csv')
        assert _run(tmp, 'validate', reference, output='check') == EXIT_OK
        assert _run(tmp, 'trees', reference, output='check') == EXIT_OK
    print("  ✓ simulated and reference surveys validate")


def test_ergm_fit_command():
    with tempfile.TemporaryDirectory() as tmp:
        assert _run(tmp, 'ergm-fit') == EXIT_OK
        table = read_table(os.path.join(tmp, 'out', 'ergm_fit.csv'))
        assert table['statistic'].tolist() == ['edges', 'nodematch(gender=male)',
                                               'nodematch(gender=female)']
        assert table['target'].iloc[0] == 120.0


def test_power_independent_of_threads():
    print("Testing power output across thread counts...")
    with tempfile.TemporaryDirectory() as tmp:
        assert _run(tmp, '-j', '1', 'power', output='one') == EXIT_OK
        assert _run(tmp, '-j', '4', 'power', output='four') == EXIT_OK
        with open(os.path.join(tmp, 'one', 'power.csv'), 'rb') as f:
            first = f.read()
        with open(os.path.join(tmp, 'four', 'power.csv'), 'rb') as f:
            assert f.read() == first
        table = read_table(os.path.join(tmp, 'one', 'power.csv'))
        assert table['sample_size'].tolist() == [40]
    print("  ✓ identical tables for -j 1 and -j 4")


def test_output_dir_from_environment():
    with tempfile.TemporaryDirectory() as tmp:
        target = os.path.join(tmp, 'from_env')
        previous = os.environ.get(OUTPUT_DIR_ENV)
        os.environ[OUTPUT_DIR_ENV] = target
        try:
            assert main(['--config', _config(tmp), 'trees', '--reference']) == EXIT_OK
        finally:
            if previous is None:
                del os.environ[OUTPUT_DIR_ENV]
            else:
                os.environ[OUTPUT_DIR_ENV] = previous
        assert os.path.exists(os.path.join(target, 'iso_census.csv'))


def test_missing_config_uses_defaults():
    with tempfile.TemporaryDirectory() as tmp:
        code = main(['--config', os.path.join(tmp, 'absent.yaml'),
                     '--output-dir', os.path.join(tmp, 'out'), 'trees', '--reference'])
        assert code == EXIT_OK


def test_invalid_config_is_runtime_error():
    with tempfile.TemporaryDirectory() as tmp:
        for text in ("estimate: [unclosed\n", "- just\n- a list\n"):
            path = os.path.join(tmp, 'broken.yaml')
            with open(path, 'w') as f:
                f.write(text)
            code = main(['--config', path, '--output-dir', os.path.join(tmp, 'out'),
                         'trees', '--reference'])
            assert code == EXIT_RUNTIME, text


def main_tests():
    """Run all tests"""
    print("=" * 60)
    print("Command Line - Integration Tests")
    print("=" * 60)

    try:
        test_validate_exit_codes()
        test_estimate_reference_with_metadata()
        test_estimate_is_deterministic()
        test_json_format()
        test_trees_and_mixing_reference()
        test_fit_reference()
        test_simulate_then_validate()
        test_ergm_fit_command()
        test_power_independent_of_threads()
        test_output_dir_from_environment()
        test_missing_config_uses_defaults()
        test_invalid_config_is_runtime_error()

        print("\n" + "=" * 60)
        print("All tests completed successfully! 🎉")
        print("=" * 60)

    except Exception as e:
        print(f"\n❌ Test failed with error: {e}")
        import traceback
        traceback.print_exc()


if __name__ == '__main__':
    main_tests()
