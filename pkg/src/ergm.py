"""ERGM simulation, fitting from target statistics and RDS power analysis

The statistic vocabulary is ``edges`` plus ``nodematch`` terms. Every term
only looks at the two endpoints of a dyad, so the change statistic of a dyad
is fixed by node labels; the sampler precomputes it once per chain.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import optimize, special

from estimators import (EstimationError, MixingMatrix, mixing_from_pairs,
                        rds2_mean, rds2_proportion)
from graph_core import (AttributedGraph, ChangeStatistics, GraphError,
                        assign_attributes, parse_statistic)
from logger import log_ergm_event
from rds_engine import RdsConfig, simulate_rds
from survey_data import VARIABLE_ALIASES


logger = logging.getLogger(__name__)

BLOCK = 65536
Z95 = 1.959963984540054


class ErgmError(Exception):
    """Raised for invalid ERGM specifications or infeasible targets"""
    pass


@dataclass
class ErgmSpec:
    """Model over graphs with ``n`` nodes: P(g) proportional to exp(theta . s(g))

    Node labels come from ``labels`` when given, else are drawn i.i.d. from
    ``attr_dists``.
    """
    n: int
    statistics: List[str]
    theta: np.ndarray
    attr_dists: Dict[str, Dict[str, float]] = field(default_factory=dict)
    labels: Dict[str, List[Optional[str]]] = field(default_factory=dict)

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        if not self.statistics:
            raise ErgmError("ERGM needs at least one statistic")
        if len(set(self.statistics)) != len(self.statistics):
            raise ErgmError("ERGM statistics must be unique")
        if self.theta.shape != (len(self.statistics),):
            raise ErgmError(f"theta has {self.theta.size} entries for "
                            f"{len(self.statistics)} statistics")
        if not np.isfinite(self.theta).all():
            raise ErgmError("theta must be finite")
        for name in self.statistics:
            try:
                parse_statistic(name)
            except GraphError as e:
                raise ErgmError(str(e))

    def template(self, seed: Any = 0) -> AttributedGraph:
        """Edgeless graph carrying the node labels"""
        g = AttributedGraph(self.n)
        for name, labels in self.labels.items():
            g.set_attribute(name, labels)
        rng = np.random.default_rng(seed)
        for name, dist in self.attr_dists.items():
            if name not in self.labels:
                g = assign_attributes(g, name, dist, int(rng.integers(2 ** 31)))
        return g

    def to_dict(self) -> Dict[str, Any]:
        return {'n': self.n, 'statistics': list(self.statistics),
                'theta': [float(t) for t in self.theta],
                'attr_dists': self.attr_dists}


def proportional_labels(n: int, distribution: Dict[str, float]) -> List[str]:
    """Deterministic labels with counts rounded by largest remainder"""
    levels = list(distribution)
    raw = np.array([distribution[k] for k in levels], dtype=float) * n
    counts = np.floor(raw).astype(int)
    for k in np.argsort(-(raw - counts), kind='stable')[: n - counts.sum()]:
        counts[k] += 1
    return [level for level, c in zip(levels, counts) for _ in range(c)]


def _dyad_index(i: np.ndarray, j: np.ndarray, n: int) -> np.ndarray:
    lo, hi = np.minimum(i, j), np.maximum(i, j)
    return lo * (2 * n - lo - 1) // 2 + (hi - lo - 1)


class ErgmSampler:
    """Metropolis-Hastings chain with uniform dyad-toggle proposals

    The chain state is a boolean vector over dyads in ``triu_indices`` order.
    One sampler owns its state; independent chains use separate samplers.
    """

    def __init__(self, graph: AttributedGraph, statistics: Sequence[str],
                 theta: np.ndarray, rng: np.random.Generator):
        self.template = graph
        self.n = graph.n
        self.statistics = list(statistics)
        self.rng = rng
        self.logger = logging.getLogger(__name__)

        self.rows, self.cols = np.triu_indices(self.n, k=1)
        self.change = ChangeStatistics(graph, self.statistics)
        self.dyad_change = self.change.dyad_matrix(self.rows, self.cols)
        self.state = np.zeros(self.rows.size, dtype=bool)
        edges = graph.edge_array()
        if len(edges):
            self.state[_dyad_index(edges[:, 0], edges[:, 1], self.n)] = True
        self.current = self.dyad_change.T @ self.state.astype(float)
        self.set_theta(theta)

        self.stats = {
            'proposals': 0,
            'accepted': 0,
        }

    @property
    def n_dyads(self) -> int:
        return int(self.rows.size)

    def set_theta(self, theta: np.ndarray):
        self.theta = np.asarray(theta, dtype=float)
        self.weight = self.dyad_change @ self.theta

    def run(self, n_proposals: int, callback: Optional[Callable[[np.ndarray], None]] = None):
        """Advance the chain; ``callback(state)`` after every proposal if given"""
        if self.n_dyads == 0:
            return
        remaining = int(n_proposals)
        while remaining > 0:
            size = min(remaining, BLOCK)
            remaining -= size
            dyads = self.rng.integers(0, self.n_dyads, size=size)
            log_u = np.log(self.rng.random(size))
            if callback is None:
                self._apply_block(dyads, log_u)
            else:
                self._apply_sequential(dyads, log_u, callback)
            self.stats['proposals'] += size

    def _accept(self, dyads: np.ndarray, log_u: np.ndarray):
        present = self.state[dyads]
        log_ratio = np.where(present, -self.weight[dyads], self.weight[dyads])
        accepted = log_u < log_ratio
        flips = dyads[accepted]
        signs = np.where(present[accepted], -1.0, 1.0)
        self.state[flips] = ~self.state[flips]
        self.current += self.dyad_change[flips].T @ signs
        self.stats['accepted'] += int(accepted.sum())

    def _apply_block(self, dyads: np.ndarray, log_u: np.ndarray):
        # Proposals on distinct dyads commute; repeats are applied in draw order
        order = np.argsort(dyads, kind='stable')
        ordered = dyads[order]
        starts = np.r_[0, np.flatnonzero(np.diff(ordered)) + 1]
        sizes = np.diff(np.r_[starts, ordered.size])
        rank = np.arange(ordered.size) - np.repeat(starts, sizes)
        for k in range(int(rank.max()) + 1):
            picked = order[rank == k]
            self._accept(dyads[picked], log_u[picked])

    def _apply_sequential(self, dyads: np.ndarray, log_u: np.ndarray,
                          callback: Callable[[np.ndarray], None]):
        for d, u in zip(dyads.tolist(), log_u.tolist()):
            present = self.state[d]
            log_ratio = -self.weight[d] if present else self.weight[d]
            if u < log_ratio:
                self.state[d] = not present
                self.current += self.dyad_change[d] * (-1.0 if present else 1.0)
                self.stats['accepted'] += 1
            callback(self.state)

    def sample_statistics(self, n_samples: int, thin: int) -> np.ndarray:
        """(n_samples, k) statistics recorded every ``thin`` proposals"""
        out = np.empty((n_samples, len(self.statistics)))
        for t in range(n_samples):
            self.run(thin)
            out[t] = self.current
        return out

    def graph(self) -> AttributedGraph:
        """Materialize the current state as an AttributedGraph"""
        g = self.template.copy()
        for i, j in g.edges():
            g.remove_edge(i, j)
        on = np.flatnonzero(self.state)
        for i, j in zip(self.rows[on].tolist(), self.cols[on].tolist()):
            g.add_edge(i, j)
        return g

    @property
    def acceptance_rate(self) -> float:
        return self.stats['accepted'] / self.stats['proposals'] if self.stats['proposals'] else 0.0

    def get_stats(self) -> Dict[str, int]:
        return self.stats.copy()


def default_chain_lengths(n: int, burn_in: Optional[int] = None,
                          thin: Optional[int] = None) -> Tuple[int, int]:
    """Burn-in 10 sweeps and thinning 1 sweep, a sweep being n(n-1)/2 proposals"""
    sweep = max(n * (n - 1) // 2, 1)
    return (10 * sweep if burn_in is None else burn_in,
            sweep if thin is None else thin)


def mcmc_sample(spec: ErgmSpec, burn_in: Optional[int] = None, thin: Optional[int] = None,
                n_samples: int = 100, rng_seed: int = 0,
                graph: Optional[AttributedGraph] = None) -> List[AttributedGraph]:
    """Draw ``n_samples`` graphs after ``burn_in`` proposals, every ``thin`` proposals"""
    burn_in, thin = default_chain_lengths(spec.n, burn_in, thin)
    if burn_in < 0 or thin <= 0:
        raise ErgmError("burn_in must be nonnegative and thin positive")
    rng = np.random.default_rng(rng_seed)
    start = graph if graph is not None else spec.template([rng_seed, 0])
    sampler = ErgmSampler(start, spec.statistics, spec.theta, rng)
    sampler.run(burn_in)
    graphs = []
    for _ in range(n_samples):
        sampler.run(thin)
        graphs.append(sampler.graph())
    log_ergm_event(logger, f"Drew {n_samples} graphs, acceptance {sampler.acceptance_rate:.3f}",
                   "debug")
    return graphs


def sample_dyad_independent(spec: ErgmSpec, rng_seed: Any = 0,
                            template: Optional[AttributedGraph] = None) -> AttributedGraph:
    """Exact draw: each dyad present independently with expit(theta . delta)"""
    rng = np.random.default_rng(rng_seed)
    base = template if template is not None else spec.template(rng.integers(2 ** 31))
    rows, cols = np.triu_indices(spec.n, k=1)
    change = ChangeStatistics(base, spec.statistics).dyad_matrix(rows, cols)
    on = rng.random(rows.size) < special.expit(change @ spec.theta)
    g = base.copy()
    for i, j in zip(rows[on].tolist(), cols[on].tolist()):
        g.add_edge(i, j)
    return g


# --- fitting from target statistics -----------------------------------------

@dataclass
class ErgmFitOptions:
    phases: int = 3
    gain: float = 0.1
    samples_per_phase: int = 100
    rng_seed: int = 0
    max_phases: int = 6
    burn_in: Optional[int] = None
    thin: Optional[int] = None

    @classmethod
    def from_dict(cls, values: Optional[Dict[str, Any]]) -> 'ErgmFitOptions':
        values = values or {}
        return cls(**{k: v for k, v in values.items() if k in cls.__dataclass_fields__})


@dataclass
class ErgmFit:
    spec: ErgmSpec
    targets: np.ndarray
    achieved: np.ndarray
    mc_se: np.ndarray
    converged: bool
    phases_run: int
    trajectory: List[np.ndarray]
    acceptance_rate: float

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            'statistic': self.spec.statistics,
            'theta': self.spec.theta,
            'target': self.targets,
            'achieved': self.achieved,
            'mc_se': self.mc_se,
        })


def check_targets(g: AttributedGraph, statistics: Sequence[str], targets: np.ndarray):
    """Raise ErgmError unless every target is attainable on the labeled graph"""
    rows, cols = np.triu_indices(g.n, k=1)
    capacity = ChangeStatistics(g, statistics).dyad_matrix(rows, cols).sum(axis=0)
    edges_target = dict(zip(statistics, targets)).get('edges')
    for name, target, cap in zip(statistics, targets, capacity):
        if not 0 <= target <= cap:
            raise ErgmError(f"target {target} for {name} outside [0, {cap:.0f}]")
        if name != 'edges' and edges_target is not None and target > edges_target:
            raise ErgmError(f"target for {name} exceeds the edges target")


def dyad_independent_theta(g: AttributedGraph, statistics: Sequence[str],
                           targets: np.ndarray) -> np.ndarray:
    """theta whose dyad-independent expectation equals the targets

    Solves the convex problem max theta.t - sum_d log(1 + exp(theta.delta_d))
    over dyad classes that share a change vector.
    """
    rows, cols = np.triu_indices(g.n, k=1)
    change = ChangeStatistics(g, statistics).dyad_matrix(rows, cols)
    patterns, counts = np.unique(change, axis=0, return_counts=True)
    targets = np.asarray(targets, dtype=float)

    def objective(theta):
        eta = patterns @ theta
        value = np.sum(counts * np.logaddexp(0.0, eta)) - theta @ targets
        grad = patterns.T @ (counts * special.expit(eta)) - targets
        return value, grad

    result = optimize.minimize(objective, np.zeros(len(statistics)), jac=True, method='BFGS',
                               options={'gtol': 1e-8, 'maxiter': 1000})
    return np.clip(result.x, -30.0, 30.0)


def _mc_se(samples: np.ndarray) -> np.ndarray:
    """Standard error of the mean with a lag-1 autocorrelation correction"""
    m = samples.shape[0]
    sd = samples.std(axis=0, ddof=1)
    se = sd / np.sqrt(m)
    centered = samples - samples.mean(axis=0)
    denom = np.sum(centered ** 2, axis=0)
    rho = np.divide(np.sum(centered[1:] * centered[:-1], axis=0), denom,
                    out=np.zeros(samples.shape[1]), where=denom > 0)
    rho = np.clip(rho, 0.0, 0.95)
    return se * np.sqrt((1 + rho) / (1 - rho))


def fit_from_targets(statistics: Sequence[str], targets: Sequence[float], n: int,
                     attr_dists: Optional[Dict[str, Dict[str, float]]] = None,
                     opts: Optional[ErgmFitOptions] = None,
                     labels: Optional[Dict[str, List[Optional[str]]]] = None) -> ErgmFit:
    """Stochastic-approximation fit of theta to expected target statistics

    Starts from the dyad-independent solution, scales updates by the inverse
    pilot variance, decays the gain as gain/(phase+1) and averages theta over
    the last phase. Extra phases run until simulated means sit within 2 MC
    standard errors of every target or ``max_phases`` is reached.
    """
    opts = opts or ErgmFitOptions()
    targets = np.asarray(targets, dtype=float)
    if targets.shape != (len(statistics),):
        raise ErgmError("targets must align with statistics")
    spec = ErgmSpec(n, list(statistics), np.zeros(len(statistics)),
                    dict(attr_dists or {}), dict(labels or {}))
    g = spec.template([opts.rng_seed, 0])
    check_targets(g, spec.statistics, targets)

    theta = dyad_independent_theta(g, spec.statistics, targets)
    rng = np.random.default_rng([opts.rng_seed, 1])
    start = sample_dyad_independent(replace(spec, theta=theta), [opts.rng_seed, 2], template=g)
    sampler = ErgmSampler(start, spec.statistics, theta, rng)
    burn_in, thin = default_chain_lengths(n, opts.burn_in, opts.thin)
    sampler.run(burn_in)

    pilot = sampler.sample_statistics(opts.samples_per_phase, thin)
    scale = 1.0 / np.maximum(pilot.var(axis=0, ddof=1), 1.0)

    trajectory = [theta.copy()]
    phase = 0
    converged = False
    achieved, mc_se = pilot.mean(axis=0), _mc_se(pilot)
    while phase < opts.max_phases:
        gain = opts.gain / (phase + 1)
        averaged = np.zeros_like(theta)
        for _ in range(opts.samples_per_phase):
            sampler.run(thin)
            theta = theta - gain * scale * (sampler.current - targets)
            sampler.set_theta(theta)
            averaged += theta
        if phase >= opts.phases - 1:
            theta = averaged / opts.samples_per_phase
            sampler.set_theta(theta)
        trajectory.append(theta.copy())
        phase += 1
        if phase < opts.phases:
            continue

        draws = sampler.sample_statistics(opts.samples_per_phase, thin)
        achieved, mc_se = draws.mean(axis=0), _mc_se(draws)
        if np.all(np.abs(achieved - targets) <= 2 * mc_se + 1e-9):
            converged = True
            break

    fitted = replace(spec, theta=theta)
    if not converged:
        log_ergm_event(logger, f"Targets not matched within 2 MC SE after {phase} phases",
                       "warning")
    log_ergm_event(logger, f"Fitted theta {np.round(theta, 4).tolist()} in {phase} phases")
    return ErgmFit(fitted, targets, achieved, mc_se, converged, phase, trajectory,
                   sampler.acceptance_rate)


def stationary_distribution(rates: np.ndarray) -> np.ndarray:
    """Left eigenvector of a row-stochastic matrix for eigenvalue 1"""
    k = rates.shape[0]
    system = np.vstack([rates.T - np.eye(k), np.ones(k)])
    rhs = np.r_[np.zeros(k), 1.0]
    pi, *_ = np.linalg.lstsq(system, rhs, rcond=None)
    return np.clip(pi, 0.0, None) / np.clip(pi, 0.0, None).sum()


def targets_from_mixing(n: int, mean_degree: float, attribute: str,
                        categories: Sequence[str], rates: np.ndarray) -> Tuple[List[str], np.ndarray]:
    """Edges and per-level homophily targets implied by recruiter->recruitee rates

    Each level's share of edge endpoints is the stationary distribution of the
    rate matrix, so within-level edges are rates[a, a] * share[a] * edges.
    """
    rates = np.asarray(rates, dtype=float)
    if rates.shape != (len(categories), len(categories)):
        raise ErgmError("rates must be square over the categories")
    if not np.allclose(rates.sum(axis=1), 1.0, atol=1e-9):
        raise ErgmError("mixing rates must be row-stochastic")
    edges = mean_degree * n / 2.0
    share = stationary_distribution(rates)
    statistics = ['edges'] + [f"nodematch({attribute}={level})" for level in categories]
    targets = np.r_[edges, [rates[a, a] * share[a] * edges for a in range(len(categories))]]
    return statistics, targets


def graph_mixing(g: AttributedGraph, attribute: str) -> MixingMatrix:
    """Mixing over both orientations of every undirected edge"""
    labels = g.attribute(attribute)
    pairs = []
    for i, j in g.edges():
        a, b = labels[i], labels[j]
        if a is None or b is None:
            continue
        pairs.append((a, b))
        pairs.append((b, a))
    seen = {a for a, _ in pairs}
    return mixing_from_pairs(pairs, [level for level in g.attribute_levels(attribute)
                                     if level in seen])


# --- power analysis ---------------------------------------------------------

def population_value(g: AttributedGraph, estimand: str) -> float:
    """Population truth for ``attr=level`` shares or the mean degree"""
    if '=' in estimand:
        attr, level = (s.strip() for s in estimand.split('=', 1))
        labels = g.attribute(attr)
        return float(np.mean([label == level for label in labels])) if g.n else float('nan')
    if VARIABLE_ALIASES.get(estimand, estimand) == 'acquaintance_degree' or estimand == 'degree':
        return float(g.degrees().mean()) if g.n else float('nan')
    raise ErgmError(f"no population value for estimand '{estimand}'")


@dataclass
class _Replicate:
    estimate: Optional[float]
    low: Optional[float]
    high: Optional[float]
    truth: float
    shortfall: bool
    n: int


def power_analysis(spec: ErgmSpec, rds_cfg_grid: Sequence[RdsConfig], estimand: str,
                   truth: Optional[float] = None, replicates: int = 100, rng_seed: int = 0,
                   threads: int = 1, population: Optional[AttributedGraph] = None,
                   B: int = 200) -> pd.DataFrame:
    """Bias, RMSE, CI width and coverage of RDS-II per recruitment config

    Each replicate draws a population from ``spec`` (or reuses ``population``),
    runs the RDS simulation and estimates ``estimand``. With ``truth=None`` the
    realized population value is the truth and a finite population correction
    is applied, so a census has zero width.
    """
    if replicates < 50:
        raise ErgmError("power analysis needs at least 50 replicates")
    proportion = '=' in estimand
    variable = 'acquaintance_degree' if estimand == 'degree' else estimand

    def one(task: Tuple[int, int]) -> _Replicate:
        c, r = task
        base = rds_cfg_grid[c]
        g = population if population is not None else \
            sample_dyad_independent(spec, [rng_seed, c, r, 0])
        cfg = replace(base, rng_seed=int(np.random.default_rng([rng_seed, c, r, 1])
                                         .integers(2 ** 31)),
                      target_sample=min(base.target_sample, g.n))
        forest, ds = simulate_rds(g, cfg)
        realized = population_value(g, estimand) if truth is None else truth
        try:
            estimator = rds2_proportion if proportion else rds2_mean
            est = estimator(ds, variable, forest=forest, B=B,
                            rng_seed=int(np.random.default_rng([rng_seed, c, r, 2])
                                         .integers(2 ** 31)))
        except EstimationError:
            return _Replicate(None, None, None, realized, forest.shortfall > 0, len(ds))
        se = est.se or 0.0
        if truth is None:
            se *= np.sqrt(max(0.0, 1.0 - len(ds) / g.n))
        upper = 1.0 if proportion else np.inf
        low = max(0.0, est.estimate - Z95 * se)
        high = min(upper, est.estimate + Z95 * se)
        return _Replicate(est.estimate, low, high, realized, forest.shortfall > 0, len(ds))

    tasks = [(c, r) for c in range(len(rds_cfg_grid)) for r in range(replicates)]
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        results = list(pool.map(one, tasks))

    rows = []
    for c, cfg in enumerate(rds_cfg_grid):
        block = results[c * replicates:(c + 1) * replicates]
        done = [x for x in block if x.estimate is not None]
        shortfall_rate = float(np.mean([x.shortfall for x in block]))
        errors = np.array([x.estimate - x.truth for x in done])
        rows.append({
            'sample_size': cfg.target_sample,
            'mean_n': float(np.mean([x.n for x in block])),
            'bias': float(errors.mean()) if done else None,
            'rmse': float(np.sqrt(np.mean(errors ** 2))) if done else None,
            'ci_width': float(np.mean([x.high - x.low for x in done])) if done else None,
            'coverage': float(np.mean([x.low <= x.truth <= x.high for x in done])) if done else None,
            'shortfall_rate': shortfall_rate,
            'flagged': shortfall_rate > 0.5,
        })
        if shortfall_rate > 0.5:
            log_ergm_event(logger, f"target_sample {cfg.target_sample}: shortfall in "
                                   f"{shortfall_rate:.0%} of replicates", "warning")
    return pd.DataFrame(rows, columns=['sample_size', 'mean_n', 'bias', 'rmse', 'ci_width',
                                       'coverage', 'shortfall_rate', 'flagged'])
