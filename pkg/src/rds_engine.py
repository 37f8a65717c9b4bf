"""Coupon-based RDS recruitment simulation and referral forests"""

import logging
from collections import deque
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from graph_core import AttributedGraph
from logger import log_rds_event
from survey_data import (BOOLEAN_FLAGS, CATEGORICAL_FIELDS, MAX_COUPONS,
                         SurveyDataset, SurveyRecord)


logger = logging.getLogger(__name__)

SEED_SELECTIONS = ('uniform', 'degree_proportional')


class ForestError(Exception):
    """Raised when referral linkage cannot form a forest"""
    pass


@dataclass
class RdsConfig:
    """Recruitment protocol parameters

    ``coupons_per_respondent=None`` means unlimited coupons. ``acceptance_prob``
    defaults to 0.5, an arbitrary experimental choice.
    """
    n_seeds: int = 6
    seed_selection: str = 'degree_proportional'
    coupons_per_respondent: Optional[int] = 3
    acceptance_prob: float = 0.5
    target_sample: int = 500
    max_waves: Optional[int] = None
    rng_seed: int = 0

    @classmethod
    def from_dict(cls, values: Dict[str, Any]) -> 'RdsConfig':
        known = {k: v for k, v in values.items() if k in cls.__dataclass_fields__}
        return cls(**known)

    def validate(self, population: int) -> Dict[str, Any]:
        """Check the config against a population size

        Returns:
            {'valid': bool, 'reason': str or None}
        """
        if self.seed_selection not in SEED_SELECTIONS:
            return {'valid': False, 'reason': f"unknown seed_selection '{self.seed_selection}'"}
        if self.n_seeds < 1:
            return {'valid': False, 'reason': "n_seeds must be at least 1"}
        if self.coupons_per_respondent is not None and self.coupons_per_respondent < 1:
            return {'valid': False, 'reason': "coupons_per_respondent must be at least 1"}
        if not 0.0 < self.acceptance_prob <= 1.0:
            return {'valid': False, 'reason': "acceptance_prob must lie in (0, 1]"}
        if self.target_sample < 1 or self.target_sample > population:
            return {'valid': False,
                    'reason': f"target_sample {self.target_sample} outside 1..{population}"}
        if self.max_waves is not None and self.max_waves < 0:
            return {'valid': False, 'reason': "max_waves must be nonnegative"}
        return {'valid': True, 'reason': None}


class ReferralForest:
    """Recruiter -> recruitee forest rooted at seeds

    Args:
        nodes: Respondent ids in canonical order
        parent: Map id -> recruiter id (None for seeds)
        attributes: Optional per-node attribute dicts
        shortfall: Target sample minus achieved sample (simulation only)
    """

    def __init__(self, nodes: List[str], parent: Dict[str, Optional[str]],
                 attributes: Optional[Dict[str, Dict[str, Any]]] = None,
                 shortfall: int = 0):
        self.nodes = list(nodes)
        self.index = {node: k for k, node in enumerate(self.nodes)}
        if len(self.index) != len(self.nodes):
            raise ForestError("duplicate node ids in forest")
        self.parent = {node: parent.get(node) for node in self.nodes}
        self.attributes = attributes or {node: {} for node in self.nodes}
        self.shortfall = shortfall

        self._children: Dict[str, List[str]] = {node: [] for node in self.nodes}
        for node in self.nodes:
            p = self.parent[node]
            if p is None:
                continue
            if p not in self.index:
                raise ForestError(f"recruiter '{p}' of '{node}' is not in the forest")
            self._children[p].append(node)

        self.wave: Dict[str, int] = {}
        self._root: Dict[str, str] = {}
        queue = deque()
        for node in self.seeds():
            self.wave[node] = 0
            self._root[node] = node
            queue.append(node)
        while queue:
            node = queue.popleft()
            for child in self._children[node]:
                self.wave[child] = self.wave[node] + 1
                self._root[child] = self._root[node]
                queue.append(child)
        unreached = [node for node in self.nodes if node not in self.wave]
        if unreached:
            raise ForestError(
                f"referral cycle detected: {len(unreached)} nodes unreachable from seeds "
                f"(first: '{unreached[0]}')")

    def __len__(self) -> int:
        return len(self.nodes)

    def seeds(self) -> List[str]:
        return [node for node in self.nodes if self.parent[node] is None]

    def children(self, node: str) -> List[str]:
        return list(self._children[node])

    def out_degree(self, node: str) -> int:
        return len(self._children[node])

    def root_of(self, node: str) -> str:
        return self._root[node]

    def edges(self) -> List[Tuple[str, str]]:
        """(recruiter, recruitee) pairs in node order"""
        return [(self.parent[node], node) for node in self.nodes if self.parent[node] is not None]

    def trees(self) -> List[List[str]]:
        """Node lists per tree in BFS order, one per seed"""
        out = []
        for seed in self.seeds():
            members = []
            queue = deque([seed])
            while queue:
                node = queue.popleft()
                members.append(node)
                queue.extend(self._children[node])
            out.append(members)
        return out

    @property
    def max_wave(self) -> int:
        return max(self.wave.values()) if self.wave else 0

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            'respondent_id': self.nodes,
            'parent_id': [self.parent[node] for node in self.nodes],
            'wave': [self.wave[node] for node in self.nodes],
        })

    def write_csv(self, path: str):
        self.to_frame().to_csv(path, index=False, lineterminator='\n')

    @classmethod
    def read_csv(cls, path: str) -> 'ReferralForest':
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
        if list(frame.columns[:2]) != ['respondent_id', 'parent_id']:
            raise ForestError(f"{path}: expected columns respondent_id,parent_id,wave")
        nodes = frame['respondent_id'].tolist()
        parent = {rid: (pid or None) for rid, pid in zip(nodes, frame['parent_id'])}
        return cls(nodes, parent)


def _record_attributes(record: SurveyRecord) -> Dict[str, Any]:
    attrs = {name: getattr(record, name) for name in CATEGORICAL_FIELDS + ('hub_id',)}
    for name in BOOLEAN_FLAGS:
        value = getattr(record, name)
        attrs[name] = None if value is None else str(value)
    return attrs


def forest_from_dataset(ds: SurveyDataset) -> ReferralForest:
    """Build the referral forest from coupon linkage (orphans become seeds)"""
    parents = ds.parent_map()
    nodes = [r.respondent_id for r in ds.records]
    attributes = {r.respondent_id: _record_attributes(r) for r in ds.records}
    forest = ReferralForest(nodes, parents, attributes)
    log_rds_event(logger, f"Forest: {len(forest)} nodes, {len(forest.seeds())} seeds, "
                          f"max wave {forest.max_wave}", "debug")
    return forest


def _select_seeds(g: AttributedGraph, cfg: RdsConfig, count: int,
                  rng: np.random.Generator) -> np.ndarray:
    if cfg.seed_selection == 'degree_proportional':
        degrees = g.degrees().astype(float)
        if np.count_nonzero(degrees) >= count:
            return rng.choice(g.n, size=count, replace=False, p=degrees / degrees.sum())
        log_rds_event(logger, "Too few connected nodes for degree-proportional seeds, "
                              "falling back to uniform", "warning")
    return rng.choice(g.n, size=count, replace=False)


def _flag(label: Optional[str]) -> Optional[bool]:
    if label is None:
        return None
    return str(label).strip().lower() in ('1', 'true', 'yes')


def simulate_rds(g: AttributedGraph, cfg: RdsConfig,
                 year_label: str = '2024') -> Tuple[ReferralForest, SurveyDataset]:
    """Run without-replacement coupon recruitment over ``g``

    The frontier is processed FIFO. Each recruiter hands coupons to uniformly
    chosen unsampled neighbors; each coupon is redeemed with
    ``acceptance_prob``. Stops at ``target_sample`` or when the frontier
    empties (the gap is recorded as ``forest.shortfall``).
    """
    check = cfg.validate(g.n)
    if not check['valid']:
        raise ForestError(f"invalid RDS config: {check['reason']}")

    rng = np.random.default_rng(cfg.rng_seed)
    n_seeds = min(cfg.n_seeds, cfg.target_sample)
    seeds = _select_seeds(g, cfg, n_seeds, rng)

    sampled = set()
    order: List[int] = []
    parent: Dict[int, Optional[int]] = {}
    wave: Dict[int, int] = {}
    for s in seeds.tolist():
        sampled.add(s)
        order.append(s)
        parent[s] = None
        wave[s] = 0

    queue = deque(order)
    while queue and len(order) < cfg.target_sample:
        node = queue.popleft()
        if cfg.max_waves is not None and wave[node] >= cfg.max_waves:
            continue
        candidates = [v for v in g.neighbors(node) if v not in sampled]
        if not candidates:
            continue
        k = len(candidates) if cfg.coupons_per_respondent is None \
            else min(cfg.coupons_per_respondent, len(candidates))
        offered = rng.choice(np.array(candidates), size=k, replace=False)
        for v in offered.tolist():
            if len(order) >= cfg.target_sample:
                break
            if rng.random() < cfg.acceptance_prob:
                sampled.add(v)
                order.append(v)
                parent[v] = node
                wave[v] = wave[node] + 1
                queue.append(v)

    shortfall = cfg.target_sample - len(order)
    if shortfall > 0:
        log_rds_event(logger, f"Recruitment stalled at {len(order)} of {cfg.target_sample} "
                              f"(shortfall {shortfall})", "warning")

    ids = {v: f"n{v}" for v in order}
    children: Dict[int, List[int]] = {v: [] for v in order}
    for v in order:
        if parent[v] is not None:
            children[parent[v]].append(v)

    degrees = g.degrees()
    attr_values = {name: g.attribute(name) for name in g.attribute_names}
    records = []
    coupon_of: Dict[int, str] = {}
    for v in order:
        rid = ids[v]
        n_coupons = max(len(children[v]), min(cfg.coupons_per_respondent or MAX_COUPONS, MAX_COUPONS))
        own = [f"{rid}-c{k}" for k in range(n_coupons)]
        for k, child in enumerate(children[v]):
            coupon_of[child] = own[k]
        record = SurveyRecord(respondent_id=rid, own_coupons=own,
                              acquaintance_degree=int(degrees[v]))
        for name, labels in attr_values.items():
            if name in CATEGORICAL_FIELDS or name == 'hub_id':
                setattr(record, name, labels[v])
            elif name in BOOLEAN_FLAGS:
                setattr(record, name, _flag(labels[v]))
        records.append(record)
    for record, v in zip(records, order):
        record.recruiter_coupon = coupon_of.get(v)
        record.referral_out_degree = len(children[v])

    over_limit = sum(1 for r in records if len(r.own_coupons) > MAX_COUPONS)
    if over_limit:
        log_rds_event(logger, f"{over_limit} respondents recruited more than {MAX_COUPONS}; "
                              f"the survey cannot be saved, use the forest export", "warning")

    ds = SurveyDataset(year_label=year_label, records=records)
    forest = ReferralForest(
        [ids[v] for v in order],
        {ids[v]: (ids[parent[v]] if parent[v] is not None else None) for v in order},
        {ids[v]: dict({'node': v}, **{name: labels[v] for name, labels in attr_values.items()})
         for v in order},
        shortfall=max(shortfall, 0),
    )
    log_rds_event(logger, f"Sampled {len(order)} respondents from {len(seeds)} seeds, "
                          f"max wave {forest.max_wave}", "debug")
    return forest, ds


def wave_trajectory(f: ReferralForest, ds: SurveyDataset, variable: str,
                    weight_degree: str = 'acquaintance_degree') -> pd.DataFrame:
    """Cumulative RDS-II estimate over records with wave <= w, for every w

    Returns:
        DataFrame with columns wave, n, estimate (estimate is NaN where no
        record up to that wave has a usable value)
    """
    from estimators import EstimationError, rds2_point

    waves = np.array([f.wave.get(r.respondent_id, -1) for r in ds.records])
    if len(ds.records) == 0 or np.isnan(ds.numeric_values(variable)).all():
        raise EstimationError(f"variable '{variable}' has no non-missing values")
    rows = []
    for w in range(f.max_wave + 1):
        mask = (waves >= 0) & (waves <= w)
        estimate, n = rds2_point(ds, variable, weight_degree, mask=mask)
        rows.append({'wave': w, 'n': n, 'estimate': estimate})
    return pd.DataFrame(rows, columns=['wave', 'n', 'estimate'])
