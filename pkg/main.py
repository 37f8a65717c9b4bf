#!/usr/bin/env python3
"""
RDS Network Toolkit - Main Entry Point

Command-line front end for the peer-referral survey pipeline: dataset
validation, RDS-II estimation, count-model fitting, referral-tree analysis,
mixing matrices, RDS simulation, ERGM fitting and power analysis.
"""

import argparse
import copy
import os
import sys
from typing import Any, Dict, Optional

import numpy as np
import pandas as pd
import yaml

# Add src directory to Python path
sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)), 'src'))

from count_models import (FitOptions, ModelError, candidate_specs, family_selection,
                          frequency_diagnostic, render_regression_table, stepwise_backward,
                          trace_frame)
from ergm import (ErgmError, ErgmFitOptions, ErgmSpec, dyad_independent_theta,
                  fit_from_targets, graph_mixing, power_analysis, proportional_labels,
                  sample_dyad_independent, targets_from_mixing)
from estimators import EstimationError, estimate_table, mixing_matrix
from graph_core import (GraphError, assign_attributes, connectivity_report,
                        erdos_renyi, write_edge_list)
from logger import LoggerSetup, log_data_event, log_system_event
from output_writer import OutputError, OutputWriter
from rds_engine import ForestError, RdsConfig, forest_from_dataset, simulate_rds, wave_trajectory
from reference_data import synthesize_reference_dataset
from survey_data import (TOP_CODES, DatasetError, DatasetLoader, SurveyDataset, save_dataset,
                         validate_file, zero_skip_summary)
from tree_analysis import iso_census, mean_out_degree, referral_degree_distribution, wave_stats


EXIT_OK = 0
EXIT_INVALID = 1
EXIT_RUNTIME = 2

OUTPUT_DIR_ENV = 'RDSNET_OUTPUT_DIR'


class ConfigError(ValueError):
    """Raised when the configuration file cannot be parsed"""
    pass


DEFAULT_CONFIG: Dict[str, Any] = {
    'data': {'year_label': '2024', 'top_code': None, 'orphan_policy': 'seed'},
    'estimate': {'networks': ['close_friendship', 'acquaintance', 'kinship', 'referral'],
                 'weight_degree': 'acquaintance_degree', 'bootstrap_replicates': 500},
    'fit': {'response': 'close_friend_degree', 'conditional_terms': ['gender'],
            'criterion': 'aicc'},
    'trees': {'labeled': False, 'label_attrs': ['gender'], 'grid_columns': 10},
    'mixing': {'attribute': 'gender', 'drop_levels': ['other']},
    'simulate': {'population': {'n': 2000, 'mean_degree': 8,
                                'attributes': {'gender': {'male': 0.69, 'female': 0.31}}},
                 'rds': {}},
    'ergm': {'n': 500, 'attribute': 'gender', 'levels': ['male', 'female'],
             'shares': [0.69, 0.31], 'mean_degree': 4,
             'mixing_rates': [[0.79, 0.21], [0.60, 0.40]]},
    'power': {'n': 2000, 'attribute': 'gender', 'levels': ['male', 'female'],
              'shares': [0.69, 0.31], 'mean_degree': 4,
              'mixing_rates': [[0.79, 0.21], [0.60, 0.40]], 'estimand': 'gender=female',
              'sample_sizes': [100, 250, 500, 1000], 'replicates': 100,
              'bootstrap_replicates': 200, 'rds': {}},
    'logging': {'level': 'INFO', 'file_level': 'DEBUG', 'file': None, 'console': True},
    'output': {'dir': 'output', 'format': 'csv'},
}

# Subcommand -> config section
SECTIONS = {
    'validate': 'validate',
    'estimate': 'estimate',
    'fit': 'fit',
    'trees': 'trees',
    'mixing': 'mixing',
    'simulate': 'simulate',
    'ergm-fit': 'ergm',
    'power': 'power',
}


class RdsNetworkToolkit:
    """Main application class"""

    def __init__(self, config_path: str, args: argparse.Namespace):
        """Initialize the toolkit

        Args:
            config_path: Path to configuration file
            args: Parsed command-line arguments (overrides)
        """
        self.args = args
        self.config, notice = self._load_config(config_path)
        self._apply_overrides()

        # Setup logging
        log_config = self.config.get('logging', {})
        log_file = log_config.get('file')
        if log_file:
            log_dir = os.path.dirname(log_file)
            if log_dir:
                os.makedirs(log_dir, exist_ok=True)

        self.logger = LoggerSetup.setup_logging(
            console_level=log_config.get('level', 'INFO'),
            file_level=log_config.get('file_level', 'DEBUG'),
            log_file=log_file,
            console_enabled=log_config.get('console', True)
        )
        log_system_event(self.logger, notice, "debug" if 'loaded' in notice else "warning")

        self.threads = args.threads or os.cpu_count() or 1
        self.stats = {
            'commands_run': 0,
            'files_written': 0,
        }

    def _load_config(self, config_path: str):
        """Load configuration from YAML file, falling back to built-in defaults

        Returns:
            (configuration dictionary, notice to log once logging is up)
        """
        config = copy.deepcopy(DEFAULT_CONFIG)
        try:
            with open(config_path, 'r') as f:
                loaded = yaml.safe_load(f) or {}
        except FileNotFoundError:
            return config, f"Configuration file not found: {config_path}, using built-in defaults"
        except yaml.YAMLError as e:
            raise ConfigError(f"invalid YAML in configuration file: {e}")
        if not isinstance(loaded, dict):
            raise ConfigError(f"configuration file {config_path} must hold a mapping")
        for key, value in loaded.items():
            if isinstance(value, dict) and isinstance(config.get(key), dict):
                config[key].update(value)
            else:
                config[key] = value
        return config, f"Configuration loaded from {config_path}"

    def _apply_overrides(self):
        """Apply command-line flags on top of file values"""
        args = self.args
        logging_config = self.config.setdefault('logging', {})
        if args.log_level:
            logging_config['level'] = args.log_level
        if args.verbose:
            logging_config['level'] = 'DEBUG'

        output = self.config.setdefault('output', {})
        if args.output_dir:
            output['dir'] = args.output_dir
        elif os.environ.get(OUTPUT_DIR_ENV):
            output['dir'] = os.environ[OUTPUT_DIR_ENV]
        if args.format:
            output['format'] = args.format

        data = self.config.setdefault('data', {})
        for key in ('top_code', 'orphan_policy', 'year_label'):
            value = getattr(args, key, None)
            if value is not None:
                data[key] = value

    # --- helpers ----------------------------------------------------------

    def section(self, command: str) -> Dict[str, Any]:
        return dict(self.config.get(SECTIONS[command]) or {})

    def resolve_seed(self, section: Dict[str, Any]) -> int:
        """Seed from --seed, else from config, else freshly generated"""
        if self.args.seed is not None:
            return int(self.args.seed)
        if section.get('rng_seed') is not None:
            return int(section['rng_seed'])
        seed = int(np.random.SeedSequence().entropy % (2 ** 31))
        log_system_event(self.logger, f"No rng_seed configured, generated {seed}", "warning")
        return seed

    def writer(self, command: str, section: Dict[str, Any],
               rng_seed: Optional[int] = None) -> OutputWriter:
        output = self.config.get('output', {})
        effective = {'command': command, 'data': self.config.get('data', {}),
                     'section': section, 'rng_seed': rng_seed}
        return OutputWriter(output.get('dir', 'output'), output.get('format', 'csv'),
                            command, effective, rng_seed)

    def top_code(self) -> int:
        data = self.config.get('data', {})
        if data.get('top_code') is not None:
            return int(data['top_code'])
        return TOP_CODES.get(str(data.get('year_label', '2024')), 20)

    def load(self) -> SurveyDataset:
        """Dataset named on the command line, or the built-in reference survey"""
        if getattr(self.args, 'reference', False):
            log_data_event(self.logger, "Using the built-in reference dataset")
            return synthesize_reference_dataset()
        if not getattr(self.args, 'dataset', None):
            raise DatasetError("no dataset given (pass a path or --reference)")
        data = self.config.get('data', {})
        loader = DatasetLoader(top_code=self.top_code(),
                               orphan_policy=data.get('orphan_policy', 'seed'),
                               year_label=str(data.get('year_label', '2024')))
        return loader.load(self.args.dataset, _format_of(self.args.dataset))

    def _done(self, writer: OutputWriter):
        self.stats['commands_run'] += 1
        self.stats['files_written'] += writer.get_stats()['files_written']
        log_system_event(self.logger, f"Wrote {writer.get_stats()['files_written']} files to "
                                      f"{writer.output_dir}")

    # --- subcommands ------------------------------------------------------

    def cmd_validate(self) -> int:
        data = self.config.get('data', {})
        report = validate_file(self.args.dataset, _format_of(self.args.dataset),
                               top_code=self.top_code(),
                               orphan_policy=data.get('orphan_policy', 'seed'),
                               year_label=str(data.get('year_label', '2024')))
        print(report.summary())
        for violation in report.violations:
            print(f"  violation: {violation}")
        for warning in report.warnings:
            print(f"  warning: {warning}")
        writer = self.writer('validate', self.section('validate'))
        writer.write_document('validation_report', {
            'n_records': report.n_records,
            'valid': report.valid,
            'violations': report.violations,
            'warnings': report.warnings,
            'orphan_count': report.orphan_count,
        })
        self._done(writer)
        return EXIT_OK if report.valid else EXIT_INVALID

    def cmd_estimate(self) -> int:
        section = self.section('estimate')
        seed = self.resolve_seed(section)
        if self.args.by:
            section['by'] = self.args.by
        if self.args.bootstrap:
            section['bootstrap_replicates'] = self.args.bootstrap
        ds = self.load()
        forest = forest_from_dataset(ds)
        weight = section.get('weight_degree', 'acquaintance_degree')
        table = estimate_table(ds, section.get('networks', ['close_friendship']), weight,
                               forest=forest, B=int(section.get('bootstrap_replicates', 500)),
                               rng_seed=seed, by=section.get('by'))
        writer = self.writer('estimate', section, seed)
        writer.write_table('estimates', table)
        writer.write_table('zero_skip', zero_skip_summary(ds))
        if section.get('wave_trajectory'):
            writer.write_table('wave_trajectory',
                               wave_trajectory(forest, ds, section['wave_trajectory'], weight))
        print(table.to_string(index=False))
        self._done(writer)
        return EXIT_OK

    def cmd_fit(self) -> int:
        section = self.section('fit')
        seed = self.resolve_seed(section)
        if self.args.response:
            section['response'] = self.args.response
        if self.args.family:
            section['family'] = self.args.family
        ds = self.load()
        frame = ds.model_frame()
        opts = FitOptions.from_dict(dict(section, rng_seed=seed))
        response = section.get('response', 'close_friend_degree')
        terms = list(section.get('conditional_terms') or [])
        candidates = candidate_specs(response, terms, section.get('zero_terms'))

        selection = family_selection(frame, candidates, opts, threads=self.threads)
        family = section.get('family') or selection.iloc[0]['family']
        full = next(spec for spec in candidates if spec.family == family)
        final, trace = stepwise_backward(full, frame, section.get('criterion', 'aicc'), opts)

        writer = self.writer('fit', section, seed)
        writer.write_table('family_selection', selection)
        writer.write_table('stepwise_trace', trace_frame(trace))
        writer.write_table('coefficients', final.coefficient_table())
        writer.write_table('frequency_diagnostic',
                           frequency_diagnostic(final, frame, section.get('max_count')))
        writer.write_document('final_model', final.to_dict())
        text = render_regression_table(final)
        writer.write_text('regression_table', text)
        print(selection.to_string(index=False))
        print()
        print(text)
        if not final.converged:
            log_system_event(self.logger, "Final model did not converge", "warning")
        self._done(writer)
        return EXIT_OK

    def cmd_trees(self) -> int:
        section = self.section('trees')
        if self.args.labeled:
            section['labeled'] = True
        ds = self.load()
        forest = forest_from_dataset(ds)
        labeled = bool(section.get('labeled', False))
        census = iso_census(forest, labeled, section.get('label_attrs') if labeled else None)
        max_wave, histogram, per_tree = wave_stats(forest)
        degrees = referral_degree_distribution(forest)

        writer = self.writer('trees', section)
        writer.write_table('iso_census', census.to_frame())
        writer.write_table('wave_histogram', _histogram_frame('wave', histogram))
        writer.write_table('tree_depths', per_tree)
        writer.write_table('referral_degree', _histogram_frame('out_degree', degrees))
        writer.write_document('iso_grid', census.grid_layout(int(section.get('grid_columns', 10))))
        print(f"{census.total} trees, {len(census.entries)} isomorphism classes, "
              f"max wave {max_wave}, mean referral degree {mean_out_degree(degrees):.3f}")
        self._done(writer)
        return EXIT_OK

    def cmd_mixing(self) -> int:
        section = self.section('mixing')
        if self.args.attribute:
            section['attribute'] = self.args.attribute
        ds = self.load()
        forest = forest_from_dataset(ds)
        result = mixing_matrix(forest, ds, section.get('attribute', 'gender'),
                               section.get('drop_levels'))
        writer = self.writer('mixing', section)
        writer.write_table('mixing', result.to_frame())
        print(result.to_frame().to_string(index=False))
        self._done(writer)
        return EXIT_OK

    def cmd_simulate(self) -> int:
        section = self.section('simulate')
        if self.args.reference:
            writer = self.writer('simulate', {'reference': True})
            ds = synthesize_reference_dataset()
            path = writer.path('reference_survey', 'csv')
            save_dataset(ds, path, 'csv')
            writer.write_table('zero_skip', zero_skip_summary(ds))
            print(f"Reference dataset ({len(ds)} records) written to {path}")
            self._done(writer)
            return EXIT_OK

        seed = self.resolve_seed(section)
        population = section.get('population', {})
        g = erdos_renyi(int(population.get('n', 2000)), float(population.get('mean_degree', 8)),
                        seed)
        for k, (name, dist) in enumerate(sorted((population.get('attributes') or {}).items())):
            g = assign_attributes(g, name, dist, int(np.random.default_rng([seed, k + 1])
                                                     .integers(2 ** 31)))
        cfg = RdsConfig.from_dict(dict(section.get('rds') or {}, rng_seed=seed))
        forest, ds = simulate_rds(g, cfg, str(self.config.get('data', {}).get('year_label', '2024')))

        writer = self.writer('simulate', section, seed)
        try:
            save_dataset(ds, writer.path('survey', 'csv'), 'csv')
        except DatasetError as e:
            # unlimited coupons; forest.csv still carries the full linkage
            log_data_event(self.logger, f"Survey file skipped: {e}", "warning")
        forest.write_csv(writer.path('forest', 'csv'))
        write_edge_list(g, writer.path('population', 'edges'),
                        writer.path('population_attributes', 'csv'))
        report = connectivity_report(g)
        report.update({'sampled': len(ds), 'shortfall': forest.shortfall,
                       'max_wave': forest.max_wave})
        writer.write_document('simulation_summary', report)
        print(f"Sampled {len(ds)} of {g.n} nodes (shortfall {forest.shortfall}), "
              f"max wave {forest.max_wave}")
        self._done(writer)
        return EXIT_OK

    def _mixing_targets(self, section: Dict[str, Any]):
        levels = list(section.get('levels', ['male', 'female']))
        return targets_from_mixing(int(section['n']), float(section.get('mean_degree', 4)),
                                   section.get('attribute', 'gender'), levels,
                                   np.asarray(section.get('mixing_rates'), dtype=float))

    def _labels(self, section: Dict[str, Any]) -> Dict[str, list]:
        levels = list(section.get('levels', ['male', 'female']))
        shares = dict(zip(levels, section.get('shares', [1.0 / len(levels)] * len(levels))))
        return {section.get('attribute', 'gender'): proportional_labels(int(section['n']), shares)}

    def cmd_ergm(self) -> int:
        section = self.section('ergm-fit')
        seed = self.resolve_seed(section)
        statistics, targets = self._mixing_targets(section)
        opts = ErgmFitOptions.from_dict(dict(section, rng_seed=seed))
        result = fit_from_targets(statistics, targets, int(section['n']), opts=opts,
                                  labels=self._labels(section))
        g = sample_dyad_independent(result.spec, [seed, 9], template=result.spec.template())
        mixing = graph_mixing(g, section.get('attribute', 'gender'))

        writer = self.writer('ergm-fit', section, seed)
        writer.write_table('ergm_fit', result.to_frame())
        writer.write_table('ergm_mixing', mixing.to_frame())
        writer.write_document('ergm_spec', dict(result.spec.to_dict(),
                                                converged=result.converged,
                                                phases_run=result.phases_run,
                                                acceptance_rate=result.acceptance_rate))
        print(result.to_frame().to_string(index=False))
        if not result.converged:
            log_system_event(self.logger, "ERGM targets not matched within 2 MC SE", "warning")
        self._done(writer)
        return EXIT_OK

    def cmd_power(self) -> int:
        section = self.section('power')
        seed = self.resolve_seed(section)
        if self.args.replicates:
            section['replicates'] = self.args.replicates
        statistics, targets = self._mixing_targets(section)
        labels = self._labels(section)
        template = ErgmSpec(int(section['n']), statistics, np.zeros(len(statistics)),
                            labels=labels).template()
        # edges + nodematch is dyad-independent, so the moment solution is exact
        theta = dyad_independent_theta(template, statistics, targets)
        spec = ErgmSpec(int(section['n']), statistics, theta, labels=labels)
        grid = [RdsConfig.from_dict(dict(section.get('rds') or {}, target_sample=int(size)))
                for size in section.get('sample_sizes', [100, 250, 500, 1000])]
        table = power_analysis(spec, grid, section.get('estimand', 'gender=female'),
                               truth=section.get('truth'),
                               replicates=int(section.get('replicates', 100)),
                               rng_seed=seed, threads=self.threads,
                               B=int(section.get('bootstrap_replicates', 200)))
        writer = self.writer('power', section, seed)
        writer.write_table('power', table)
        print(table.to_string(index=False))
        self._done(writer)
        return EXIT_OK

    def run(self, command: str) -> int:
        handlers = {
            'validate': self.cmd_validate,
            'estimate': self.cmd_estimate,
            'fit': self.cmd_fit,
            'trees': self.cmd_trees,
            'mixing': self.cmd_mixing,
            'simulate': self.cmd_simulate,
            'ergm-fit': self.cmd_ergm,
            'power': self.cmd_power,
        }
        log_system_event(self.logger, f"Running '{command}' with {self.threads} threads")
        return handlers[command]()

    def get_stats(self) -> Dict[str, int]:
        return self.stats.copy()


def _format_of(path: str) -> str:
    return 'json' if path.lower().endswith('.json') else 'csv'


def _histogram_frame(label: str, counts: np.ndarray):
    return pd.DataFrame({label: np.arange(len(counts)), 'count': counts})


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description='RDS Network Toolkit')

    parser.add_argument(
        '--config', '-c',
        default='config/toolkit_config.yaml',
        help='Path to configuration file'
    )
    parser.add_argument(
        '--output-dir', '-o',
        help=f'Output directory (default: ${OUTPUT_DIR_ENV} or config output.dir)'
    )
    parser.add_argument(
        '--format', '-f',
        choices=['csv', 'json'],
        help='Table format'
    )
    parser.add_argument(
        '--threads', '-j',
        type=int,
        help='Worker threads for replicate-level parallelism (default: all cores)'
    )
    parser.add_argument(
        '--seed',
        type=int,
        help='Override rng_seed for randomized subcommands'
    )
    parser.add_argument(
        '--log-level', '-l',
        choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'],
        help='Override log level'
    )
    parser.add_argument(
        '--verbose', '-v',
        action='store_true',
        help='Enable verbose output (DEBUG level)'
    )

    sub = parser.add_subparsers(dest='command', required=True)

    def dataset_command(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument('dataset', nargs='?', help='Survey file (.csv or .json)')
        p.add_argument('--reference', action='store_true',
                       help='Use the built-in reference dataset')
        p.add_argument('--top-code', dest='top_code', type=int, help='Close-friend top code')
        p.add_argument('--orphan-policy', dest='orphan_policy', choices=['seed', 'reject'])
        p.add_argument('--year', dest='year_label', help='Survey year label')
        return p

    p = sub.add_parser('validate', help='Check a survey file')
    p.add_argument('dataset', help='Survey file (.csv or .json)')
    p.add_argument('--top-code', dest='top_code', type=int, help='Close-friend top code')
    p.add_argument('--orphan-policy', dest='orphan_policy', choices=['seed', 'reject'])
    p.add_argument('--year', dest='year_label', help='Survey year label')

    p = dataset_command('estimate', 'RDS-II estimate tables')
    p.add_argument('--by', help='Subgroup attribute')
    p.add_argument('--bootstrap', '-B', type=int, help='Bootstrap replicates')

    p = dataset_command('fit', 'Count-model selection and stepwise fit')
    p.add_argument('--response', help='Response degree variable')
    p.add_argument('--family', choices=['poisson', 'negbin', 'zip', 'zinb'])

    p = dataset_command('trees', 'Referral-tree census and wave statistics')
    p.add_argument('--labeled', action='store_true', help='Labeled isomorphism classes')

    p = dataset_command('mixing', 'Recruiter -> recruitee mixing matrix')
    p.add_argument('--attribute', help='Categorical attribute')

    p = sub.add_parser('simulate', help='Simulate RDS over a random population')
    p.add_argument('--reference', action='store_true',
                   help='Write the built-in reference dataset instead')

    sub.add_parser('ergm-fit', help='Fit ERGM parameters from mixing targets')

    p = sub.add_parser('power', help='RDS power analysis over ERGM populations')
    p.add_argument('--replicates', type=int, help='Replicates per configuration')
    return parser


def main(argv=None) -> int:
    """Main entry point"""
    args = build_parser().parse_args(argv)
    try:
        toolkit = RdsNetworkToolkit(args.config, args)
    except (ConfigError, DatasetError) as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_RUNTIME

    try:
        return toolkit.run(args.command)
    except DatasetError as e:
        log_system_event(toolkit.logger, f"Validation failed: {e}", "error")
        return EXIT_INVALID
    except (GraphError, ForestError, EstimationError, ModelError, ErgmError,
            OutputError, OSError, ValueError) as e:
        log_system_event(toolkit.logger, f"{type(e).__name__}: {e}", "error")
        return EXIT_RUNTIME


if __name__ == '__main__':
    sys.exit(main())
