"""RDS-II estimation, chain bootstrap variance and mixing matrices"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from logger import log_estimate_event
from rds_engine import ReferralForest, forest_from_dataset
from survey_data import NETWORKS, SurveyDataset


logger = logging.getLogger(__name__)

Z95 = 1.959963984540054
DEFAULT_WEIGHT = 'acquaintance_degree'
TABLE_COLUMNS = ['term', 'estimate', 'ci_low', 'ci_high', 'se', 'de', 'n']


class EstimationError(Exception):
    """Raised when an estimate has no usable data"""
    pass


@dataclass
class RdsEstimate:
    """Weighted population estimate; se/ci95/design_effect are None when n = 1"""
    estimate: float
    se: Optional[float]
    ci95: Optional[Tuple[float, float]]
    design_effect: Optional[float]
    n: int

    def as_row(self, term: str) -> Dict:
        low, high = self.ci95 if self.ci95 is not None else (None, None)
        return {'term': term, 'estimate': self.estimate, 'ci_low': low, 'ci_high': high,
                'se': self.se, 'de': self.design_effect, 'n': self.n}


@dataclass
class MixingMatrix:
    """Recruiter (rows) x recruitee (columns) counts and row-normalized rates"""
    categories: List[str]
    counts: np.ndarray
    rates: np.ndarray

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for a, source in enumerate(self.categories):
            for b, target in enumerate(self.categories):
                rows.append({'recruiter': source, 'recruitee': target,
                             'count': int(self.counts[a, b]), 'rate': float(self.rates[a, b])})
        return pd.DataFrame(rows, columns=['recruiter', 'recruitee', 'count', 'rate'])


def _network_field(name: str) -> str:
    return NETWORKS.get(name, name)


def rds_weights(ds: SurveyDataset, weight_degree: str = DEFAULT_WEIGHT) -> np.ndarray:
    """Degrees for inverse weighting; zero or missing values get the median positive degree"""
    raw = ds.numeric_values(weight_degree)
    positive = raw[np.isfinite(raw) & (raw > 0)]
    if positive.size == 0:
        raise EstimationError(f"all weights missing or zero for '{weight_degree}'")
    fill = float(np.median(positive))
    return np.where(np.isfinite(raw) & (raw > 0), raw, fill)


def _usable(ds: SurveyDataset, y: str, weight_degree: str, include_seeds: bool,
            mask: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(usable mask, y values, weight degrees) over all records"""
    values = ds.numeric_values(_network_field(y))
    weights = rds_weights(ds, weight_degree)
    usable = np.isfinite(values)
    if not include_seeds:
        usable &= ~ds.seed_mask()
    if mask is not None:
        usable &= mask
    return usable, values, weights


def _weighted_mean(values: np.ndarray, weights: np.ndarray) -> float:
    # scaled by the smallest degree so equal degrees give weights of exactly 1
    w = weights.min() / weights
    return float(np.sum(values * w) / np.sum(w))


def rds2_point(ds: SurveyDataset, y: str, weight_degree: str = DEFAULT_WEIGHT,
               include_seeds: bool = True, mask: Optional[np.ndarray] = None) -> Tuple[float, int]:
    """Point estimate sum(y/d)/sum(1/d) and the usable n; NaN when n = 0"""
    usable, values, weights = _usable(ds, y, weight_degree, include_seeds, mask)
    n = int(usable.sum())
    if n == 0:
        return float('nan'), 0
    return _weighted_mean(values[usable], weights[usable]), n


class ChainBootstrap:
    """Tree bootstrap that respects recruitment chains

    Seeds are resampled with replacement; every resampled node then has its
    recruits resampled with replacement from its observed children, so whole
    chains are regrown. Replicate ``b`` uses ``default_rng([rng_seed, b])``
    and the index arrays are drawn once and reused for every statistic.
    """

    def __init__(self, ds: SurveyDataset, forest: Optional[ReferralForest] = None,
                 B: int = 500, rng_seed: int = 0):
        if B < 100:
            raise EstimationError("bootstrap needs at least 100 replicates")
        self.ds = ds
        self.forest = forest if forest is not None else forest_from_dataset(ds)
        self.B = B
        self.rng_seed = rng_seed
        self.logger = logging.getLogger(__name__)

        # children in CSR layout over dataset rows
        row = ds.index_of()
        self._seeds = np.array([row[s] for s in self.forest.seeds()], dtype=np.int64)
        counts = np.zeros(len(ds.records), dtype=np.int64)
        flat = [[] for _ in range(len(ds.records))]
        for node in self.forest.nodes:
            kids = [row[k] for k in self.forest.children(node)]
            counts[row[node]] = len(kids)
            flat[row[node]] = kids
        self._ptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        self._flat = np.array([k for kids in flat for k in kids], dtype=np.int64)
        self._counts = counts
        self._replicates: Optional[List[np.ndarray]] = None

        self.stats = {
            'replicates_drawn': 0,
            'statistics_evaluated': 0,
            'failed_replicates': 0,
        }

    def _draw(self, b: int) -> np.ndarray:
        rng = np.random.default_rng([self.rng_seed, b])
        if self._seeds.size == 0:
            return np.zeros(0, dtype=np.int64)
        frontier = rng.choice(self._seeds, size=self._seeds.size, replace=True)
        generations = [frontier]
        while frontier.size:
            counts = self._counts[frontier]
            parents = np.repeat(frontier, counts)
            if parents.size == 0:
                break
            picks = (rng.random(parents.size) * np.repeat(counts, counts)).astype(np.int64)
            frontier = self._flat[self._ptr[parents] + picks]
            generations.append(frontier)
        return np.concatenate(generations)

    @property
    def replicates(self) -> List[np.ndarray]:
        if self._replicates is None:
            self._replicates = [self._draw(b) for b in range(self.B)]
            self.stats['replicates_drawn'] = self.B
        return self._replicates

    def evaluate(self, statistic: Callable[[np.ndarray], float]) -> np.ndarray:
        """Statistic over every replicate; raises if more than 10% fail"""
        values = np.empty(self.B)
        failures = 0
        for b, idx in enumerate(self.replicates):
            try:
                value = float(statistic(idx))
            except (ZeroDivisionError, ValueError, FloatingPointError, EstimationError):
                value = float('nan')
            if not np.isfinite(value):
                failures += 1
            values[b] = value
        self.stats['statistics_evaluated'] += 1
        self.stats['failed_replicates'] += failures
        if failures > 0.1 * self.B:
            raise EstimationError(f"statistic failed on {failures} of {self.B} bootstrap replicates")
        return values[np.isfinite(values)]

    def get_stats(self) -> Dict:
        return self.stats.copy()


def bootstrap_se(ds: SurveyDataset, forest: Optional[ReferralForest],
                 statistic: Callable[[np.ndarray], float], B: int = 500,
                 rng_seed: int = 0, sample_variance: Optional[Tuple[float, int]] = None,
                 bootstrap: Optional[ChainBootstrap] = None) -> Tuple[float, Optional[float]]:
    """Chain-bootstrap standard error and design effect of a statistic

    Args:
        ds: Dataset the statistic indexes into
        forest: Referral forest (built from ds when None)
        statistic: Function of an array of record indices
        B: Replicate count (>= 100)
        rng_seed: Seed for the replicate substreams
        sample_variance: (s^2, n) for the SRS reference variance
        bootstrap: Reusable resampler (overrides forest/B/rng_seed)

    Returns:
        (se, design_effect); design_effect is None without sample_variance
    """
    boot = bootstrap or ChainBootstrap(ds, forest, B, rng_seed)
    values = boot.evaluate(statistic)
    variance = float(np.var(values, ddof=1)) if values.size > 1 else 0.0
    se = float(np.sqrt(variance))
    design_effect = None
    if sample_variance is not None:
        s2, n = sample_variance
        design_effect = variance / (s2 / n) if s2 > 0 else 0.0
    return se, design_effect


def _estimate(ds: SurveyDataset, y: str, weight_degree: str, include_seeds: bool,
              mask: Optional[np.ndarray], bootstrap: Optional[ChainBootstrap],
              forest: Optional[ReferralForest], B: int, rng_seed: int,
              bounds: Tuple[float, float]) -> RdsEstimate:
    usable, values, weights = _usable(ds, y, weight_degree, include_seeds, mask)
    n = int(usable.sum())
    if n == 0:
        raise EstimationError(f"no usable records for '{y}'")
    estimate = _weighted_mean(values[usable], weights[usable])
    if n == 1:
        return RdsEstimate(estimate, None, None, None, 1)

    sample = values[usable]
    s2 = float(np.var(sample, ddof=1))
    if s2 == 0.0:
        return RdsEstimate(estimate, 0.0, (estimate, estimate), 0.0, n)

    def statistic(idx: np.ndarray) -> float:
        keep = idx[usable[idx]]
        if keep.size == 0:
            return float('nan')
        return _weighted_mean(values[keep], weights[keep])

    boot = bootstrap or ChainBootstrap(ds, forest, B, rng_seed)
    se, de = bootstrap_se(ds, None, statistic, sample_variance=(s2, n), bootstrap=boot)
    low = max(bounds[0], estimate - Z95 * se)
    high = min(bounds[1], estimate + Z95 * se)
    return RdsEstimate(estimate, se, (low, high), de, n)


def rds2_mean(ds: SurveyDataset, y: str, weight_degree: str = DEFAULT_WEIGHT,
              include_seeds: bool = True, forest: Optional[ReferralForest] = None,
              B: int = 500, rng_seed: int = 0, bootstrap: Optional[ChainBootstrap] = None,
              mask: Optional[np.ndarray] = None, nonnegative: bool = True) -> RdsEstimate:
    """RDS-II (inverse-degree weighted) mean with chain-bootstrap SE and DE

    The CI lower end is truncated at 0 when ``nonnegative`` (degree counts).
    """
    bounds = (0.0, np.inf) if nonnegative else (-np.inf, np.inf)
    return _estimate(ds, y, weight_degree, include_seeds, mask, bootstrap, forest,
                     B, rng_seed, bounds)


def rds2_proportion(ds: SurveyDataset, group_indicator: str,
                    weight_degree: str = DEFAULT_WEIGHT, include_seeds: bool = True,
                    forest: Optional[ReferralForest] = None, B: int = 500,
                    rng_seed: int = 0, bootstrap: Optional[ChainBootstrap] = None,
                    mask: Optional[np.ndarray] = None) -> RdsEstimate:
    """RDS-II proportion of a 0/1 indicator (``attr=level`` or a boolean flag)"""
    values = ds.numeric_values(_network_field(group_indicator))
    observed = values[np.isfinite(values)]
    if observed.size and not np.isin(observed, (0.0, 1.0)).all():
        raise EstimationError(f"'{group_indicator}' is not a 0/1 indicator")
    return _estimate(ds, group_indicator, weight_degree, include_seeds, mask, bootstrap,
                     forest, B, rng_seed, (0.0, 1.0))


@dataclass
class SubgroupCell:
    level: str
    network: str
    estimate: Optional[RdsEstimate]


def subgroup_table(ds: SurveyDataset, by: str, networks: Sequence[str],
                   weight_degree: str = DEFAULT_WEIGHT, include_seeds: bool = True,
                   forest: Optional[ReferralForest] = None, B: int = 500, rng_seed: int = 0,
                   bootstrap: Optional[ChainBootstrap] = None) -> List[SubgroupCell]:
    """One estimate per (level, network); cells without data have estimate None"""
    labels = np.array([None if v is None else str(v) for v in ds.categorical_values(by)],
                      dtype=object)
    if bootstrap is None and len(ds.records):
        bootstrap = ChainBootstrap(ds, forest, B, rng_seed)
    cells = []
    for level in ds.levels(by):
        mask = labels == level
        for network in networks:
            try:
                estimate = rds2_mean(ds, network, weight_degree, include_seeds,
                                     mask=mask, bootstrap=bootstrap)
            except EstimationError:
                estimate = None
            cells.append(SubgroupCell(level, network, estimate))
    return cells


def estimate_table(ds: SurveyDataset, networks: Sequence[str],
                   weight_degree: str = DEFAULT_WEIGHT, forest: Optional[ReferralForest] = None,
                   B: int = 500, rng_seed: int = 0, by: Optional[str] = None) -> pd.DataFrame:
    """Whole-sample (and optional subgroup) estimates in two panels

    Panels are "All Respondents" and "Seeds Removed"; one resampler is shared
    by every cell so the table is reproducible from (rng_seed, B).
    """
    forest = forest if forest is not None else forest_from_dataset(ds)
    boot = ChainBootstrap(ds, forest, B, rng_seed)
    rows = []
    for panel, include_seeds in (('All Respondents', True), ('Seeds Removed', False)):
        for network in networks:
            try:
                est = rds2_mean(ds, network, weight_degree, include_seeds, bootstrap=boot)
                rows.append(dict(panel=panel, **est.as_row(network)))
            except EstimationError as e:
                log_estimate_event(logger, f"{panel} {network}: {e}", "warning")
                rows.append(dict(panel=panel, **_absent_row(network)))
        if by is None:
            continue
        for cell in subgroup_table(ds, by, networks, weight_degree, include_seeds,
                                   bootstrap=boot):
            term = f"{cell.network} | {by}={cell.level}"
            row = cell.estimate.as_row(term) if cell.estimate else _absent_row(term)
            rows.append(dict(panel=panel, **row))
    log_estimate_event(logger, f"Estimated {len(rows)} table rows with B={B}")
    return pd.DataFrame(rows, columns=['panel'] + TABLE_COLUMNS)


def _absent_row(term: str) -> Dict:
    return {'term': term, 'estimate': None, 'ci_low': None, 'ci_high': None,
            'se': None, 'de': None, 'n': 0}


def mixing_from_pairs(pairs: Sequence[Tuple[str, str]],
                      categories: Optional[Sequence[str]] = None) -> MixingMatrix:
    """Mixing matrix from (recruiter level, recruitee level) pairs"""
    if not pairs:
        raise EstimationError("no usable referral edges for mixing matrix")
    if categories is None:
        seen: List[str] = []
        for a, b in pairs:
            for level in (a, b):
                if level not in seen:
                    seen.append(level)
        categories = seen
    categories = list(categories)
    lookup = {level: k for k, level in enumerate(categories)}
    counts = np.zeros((len(categories), len(categories)), dtype=np.int64)
    for a, b in pairs:
        counts[lookup[a], lookup[b]] += 1
    totals = counts.sum(axis=1, keepdims=True)
    rates = np.divide(counts, totals, out=np.zeros(counts.shape), where=totals > 0)
    return MixingMatrix(categories, counts, rates)


def mixing_matrix(f: ReferralForest, ds: SurveyDataset, attribute: str,
                  drop_levels: Optional[Sequence[str]] = None) -> MixingMatrix:
    """Recruiter -> recruitee mixing over edges with both attributes observed"""
    dropped = set(drop_levels or ())
    row = ds.index_of()
    labels = ds.categorical_values(attribute)
    pairs = []
    for recruiter, recruitee in f.edges():
        if recruiter not in row or recruitee not in row:
            continue
        a, b = labels[row[recruiter]], labels[row[recruitee]]
        if a is None or b is None:
            continue
        a, b = str(a), str(b)
        if a in dropped or b in dropped:
            continue
        pairs.append((a, b))
    ordered = [level for level in ds.levels(attribute)
               if level not in dropped and any(level in p for p in pairs)]
    return mixing_from_pairs(pairs, ordered if pairs else None)
