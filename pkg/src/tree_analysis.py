"""Referral-tree structure: canonical codes, isomorphism census, wave statistics"""

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from logger import log_tree_event
from rds_engine import ForestError, ReferralForest


logger = logging.getLogger(__name__)

_SPECIAL = '\\():|'
_MISSING_LABEL = '\\0'


class TreeError(ForestError):
    """Raised when a tree cannot be built or labeled"""
    pass


@dataclass
class RootedTree:
    """Rooted tree; child order is storage order only"""
    root: str
    children: Dict[str, List[str]]
    labels: Optional[Dict[str, Tuple[Any, ...]]] = None

    @classmethod
    def from_parents(cls, parents: Sequence[int],
                     labels: Optional[Sequence[Tuple[Any, ...]]] = None) -> 'RootedTree':
        """Build from a parent array where exactly one entry is -1"""
        roots = [i for i, p in enumerate(parents) if p < 0]
        if len(roots) != 1:
            raise TreeError(f"parent array has {len(roots)} roots")
        children: Dict[str, List[str]] = {str(i): [] for i in range(len(parents))}
        for i, p in enumerate(parents):
            if p >= 0:
                children[str(p)].append(str(i))
        tree_labels = {str(i): tuple(l) for i, l in enumerate(labels)} if labels is not None else None
        return cls(str(roots[0]), children, tree_labels)

    def nodes(self) -> List[str]:
        """Nodes in BFS order from the root"""
        out = []
        queue = deque([self.root])
        while queue:
            node = queue.popleft()
            out.append(node)
            queue.extend(self.children.get(node, ()))
        return out

    @property
    def size(self) -> int:
        return len(self.nodes())

    def depth(self) -> int:
        depth = {self.root: 0}
        for node in self.nodes():
            for child in self.children.get(node, ()):
                depth[child] = depth[node] + 1
        return max(depth.values())


def _escape(value: Any) -> str:
    if value is None:
        return _MISSING_LABEL
    return ''.join('\\' + ch if ch in _SPECIAL else ch for ch in str(value))


def _label_text(label: Tuple[Any, ...]) -> str:
    return '|'.join(_escape(v) for v in label)


def subtree_codes(t: RootedTree, labeled: bool = False) -> Dict[str, str]:
    """Canonical code of every subtree (iterative post-order)"""
    if labeled and t.labels is None:
        raise TreeError("labeled code requested for an unlabeled tree")
    codes: Dict[str, str] = {}
    for node in reversed(t.nodes()):
        inner = ''.join(sorted(codes[c] for c in t.children.get(node, ())))
        if labeled:
            codes[node] = f"({_label_text(t.labels[node])}:{inner})"
        else:
            codes[node] = f"({inner})"
    return codes


def canonical_code(t: RootedTree, labeled: bool = False) -> str:
    """AHU canonical string; equal iff rooted (labeled) isomorphic"""
    return subtree_codes(t, labeled)[t.root]


def trees_from_forest(f: ReferralForest,
                      label_attrs: Optional[Sequence[str]] = None) -> List[RootedTree]:
    """One RootedTree per seed, labels are tuples of ``label_attrs`` values"""
    trees = []
    missing = []
    for members in f.trees():
        children = {node: f.children(node) for node in members}
        labels = None
        if label_attrs:
            labels = {}
            for node in members:
                attrs = f.attributes.get(node, {})
                absent = [a for a in label_attrs if a not in attrs]
                if absent:
                    missing.append(f"{node} ({', '.join(absent)})")
                    continue
                labels[node] = tuple(attrs[a] for a in label_attrs)
        trees.append(RootedTree(members[0], children, labels))
    if missing:
        shown = '; '.join(missing[:20])
        raise TreeError(f"label attributes missing on {len(missing)} nodes: {shown}")
    return trees


@dataclass
class IsoClass:
    code: str
    multiplicity: int
    example: RootedTree


@dataclass
class IsoClassTable:
    entries: List[IsoClass] = field(default_factory=list)
    labeled: bool = False

    @property
    def total(self) -> int:
        return sum(e.multiplicity for e in self.entries)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [{'code': e.code, 'multiplicity': e.multiplicity, 'size': e.example.size,
              'depth': e.example.depth()} for e in self.entries],
            columns=['code', 'multiplicity', 'size', 'depth'])

    def grid_layout(self, columns: int = 10) -> Dict[str, Any]:
        """Plot-ready small multiples: node coordinates and edges per class"""
        panels = []
        for k, entry in enumerate(self.entries):
            nodes, edges = _layout(entry.example, self.labeled)
            panels.append({'code': entry.code, 'multiplicity': entry.multiplicity,
                           'row': k // columns, 'col': k % columns,
                           'nodes': nodes, 'edges': edges})
        return {'columns': columns, 'labeled': self.labeled, 'classes': panels}


def _layout(t: RootedTree, labeled: bool) -> Tuple[List[Dict[str, Any]], List[List[int]]]:
    """Layered layout in canonical child order; leaves get consecutive x"""
    codes = subtree_codes(t, labeled and t.labels is not None)
    order: List[str] = []
    queue = deque([t.root])
    depth = {t.root: 0}
    ordered_children: Dict[str, List[str]] = {}
    while queue:
        node = queue.popleft()
        order.append(node)
        kids = sorted(t.children.get(node, ()), key=lambda c: codes[c])
        ordered_children[node] = kids
        for child in kids:
            depth[child] = depth[node] + 1
            queue.append(child)
    local = {node: k for k, node in enumerate(order)}

    x: Dict[str, float] = {}
    next_leaf = [0.0]

    def place(node):
        stack = [(node, False)]
        while stack:
            current, done = stack.pop()
            kids = ordered_children[current]
            if not kids:
                x[current] = next_leaf[0]
                next_leaf[0] += 1.0
            elif done:
                x[current] = float(np.mean([x[c] for c in kids]))
            else:
                stack.append((current, True))
                stack.extend((c, False) for c in reversed(kids))

    place(t.root)
    nodes = []
    for node in order:
        entry = {'id': local[node], 'x': x[node], 'y': -depth[node]}
        if labeled and t.labels is not None:
            entry['label'] = list(t.labels[node])
        nodes.append(entry)
    edges = [[local[node], local[child]] for node in order for child in ordered_children[node]]
    return nodes, edges


def iso_census(f: ReferralForest, labeled: bool = False,
               label_attrs: Optional[Sequence[str]] = None) -> IsoClassTable:
    """Group trees by canonical code, most frequent first then by code"""
    if labeled and not label_attrs:
        raise TreeError("labeled census needs at least one label attribute")
    trees = trees_from_forest(f, label_attrs if labeled else None)
    counts: Dict[str, int] = {}
    examples: Dict[str, RootedTree] = {}
    for tree in trees:
        code = canonical_code(tree, labeled)
        counts[code] = counts.get(code, 0) + 1
        examples.setdefault(code, tree)
    entries = [IsoClass(code, counts[code], examples[code])
               for code in sorted(counts, key=lambda c: (-counts[c], c))]
    log_tree_event(logger, f"{len(trees)} trees in {len(entries)} isomorphism classes")
    return IsoClassTable(entries, labeled)


def wave_stats(f: ReferralForest) -> Tuple[int, np.ndarray, pd.DataFrame]:
    """(max wave, node count per wave, per-tree seed/size/depth table)"""
    waves = np.array([f.wave[node] for node in f.nodes], dtype=np.int64)
    histogram = np.bincount(waves, minlength=1) if waves.size else np.zeros(1, dtype=np.int64)
    rows = []
    for members in f.trees():
        rows.append({'seed': members[0], 'size': len(members),
                     'depth': max(f.wave[m] for m in members)})
    per_tree = pd.DataFrame(rows, columns=['seed', 'size', 'depth'])
    return f.max_wave, histogram, per_tree


def referral_degree_distribution(f: ReferralForest) -> np.ndarray:
    """Counts of recruiters by out-degree; index k = number of recruits"""
    degrees = np.array([f.out_degree(node) for node in f.nodes], dtype=np.int64)
    if degrees.size == 0:
        return np.zeros(4, dtype=np.int64)
    return np.bincount(degrees, minlength=4)


def mean_out_degree(histogram: np.ndarray) -> float:
    total = histogram.sum()
    return float(np.dot(np.arange(histogram.size), histogram) / total) if total else 0.0
