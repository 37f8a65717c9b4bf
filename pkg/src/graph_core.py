"""Undirected attributed population graph with ERGM-style statistics"""

import logging
import re
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple

import networkx as nx
import numpy as np
import pandas as pd

from logger import log_graph_event


logger = logging.getLogger(__name__)

_NODEMATCH = re.compile(r'^nodematch\(\s*([A-Za-z_][\w]*)\s*(?:=\s*([^)]+?)\s*)?\)$')


class GraphError(Exception):
    """Raised for invalid graph construction or unknown statistics"""
    pass


class AttributedGraph:
    """Simple undirected graph over nodes 0..n-1 with categorical node attributes

    Edges are kept twice: a set of canonical ``(i, j)`` pairs with ``i < j`` for
    O(1) membership tests, and per-node neighbor sets for walks.
    Attributes are dense integer codes (``-1`` = missing) plus a level list.
    """

    def __init__(self, n: int, edges: Optional[Iterable[Tuple[int, int]]] = None,
                 attributes: Optional[Mapping[str, Sequence[Optional[str]]]] = None):
        if n < 0:
            raise GraphError("node count must be nonnegative")
        self.n = int(n)
        self._edges: Set[Tuple[int, int]] = set()
        self._neighbors: List[Set[int]] = [set() for _ in range(self.n)]
        self._levels: Dict[str, List[str]] = {}
        self._codes: Dict[str, np.ndarray] = {}
        for i, j in edges or ():
            self.add_edge(i, j)
        for name, labels in (attributes or {}).items():
            self.set_attribute(name, labels)

    # --- edges -----------------------------------------------------------

    def _canonical(self, i: int, j: int) -> Tuple[int, int]:
        i, j = int(i), int(j)
        if i == j:
            raise GraphError(f"self-loop on node {i}")
        if not (0 <= i < self.n and 0 <= j < self.n):
            raise GraphError(f"dyad ({i}, {j}) outside 0..{self.n - 1}")
        return (i, j) if i < j else (j, i)

    def has_edge(self, i: int, j: int) -> bool:
        return self._canonical(i, j) in self._edges

    def add_edge(self, i: int, j: int):
        pair = self._canonical(i, j)
        if pair not in self._edges:
            self._edges.add(pair)
            self._neighbors[pair[0]].add(pair[1])
            self._neighbors[pair[1]].add(pair[0])

    def remove_edge(self, i: int, j: int):
        pair = self._canonical(i, j)
        if pair in self._edges:
            self._edges.discard(pair)
            self._neighbors[pair[0]].discard(pair[1])
            self._neighbors[pair[1]].discard(pair[0])

    def toggle(self, i: int, j: int) -> bool:
        """Flip dyad (i, j); returns True if the edge is present afterwards"""
        pair = self._canonical(i, j)
        if pair in self._edges:
            self.remove_edge(*pair)
            return False
        self.add_edge(*pair)
        return True

    def edges(self) -> List[Tuple[int, int]]:
        return sorted(self._edges)

    def edge_array(self) -> np.ndarray:
        """(m, 2) int array of canonical edges in sorted order"""
        if not self._edges:
            return np.zeros((0, 2), dtype=np.int64)
        return np.array(self.edges(), dtype=np.int64)

    @property
    def n_edges(self) -> int:
        return len(self._edges)

    def degree(self, i: int) -> int:
        return len(self._neighbors[i])

    def degrees(self) -> np.ndarray:
        return np.array([len(s) for s in self._neighbors], dtype=np.int64)

    def neighbors(self, i: int) -> List[int]:
        return sorted(self._neighbors[i])

    def density(self) -> float:
        pairs = self.n * (self.n - 1) / 2
        return self.n_edges / pairs if pairs else 0.0

    # --- attributes ------------------------------------------------------

    @property
    def attribute_names(self) -> List[str]:
        return list(self._levels)

    def set_attribute(self, name: str, labels: Sequence[Optional[str]],
                      levels: Optional[Sequence[str]] = None):
        if len(labels) != self.n:
            raise GraphError(f"attribute '{name}' has {len(labels)} labels for {self.n} nodes")
        known = list(levels) if levels is not None else []
        for label in labels:
            if label is not None and label not in known:
                known.append(label)
        lookup = {level: k for k, level in enumerate(known)}
        self._levels[name] = known
        self._codes[name] = np.array(
            [-1 if label is None else lookup[label] for label in labels], dtype=np.int64)

    def set_attribute_codes(self, name: str, codes: np.ndarray, levels: Sequence[str]):
        codes = np.asarray(codes, dtype=np.int64)
        if codes.shape != (self.n,):
            raise GraphError(f"attribute '{name}' code array has shape {codes.shape}")
        self._levels[name] = list(levels)
        self._codes[name] = codes.copy()

    def _require(self, name: str):
        if name not in self._levels:
            raise GraphError(f"unknown attribute '{name}'")

    def attribute(self, name: str) -> List[Optional[str]]:
        self._require(name)
        levels = self._levels[name]
        return [levels[c] if c >= 0 else None for c in self._codes[name]]

    def attribute_codes(self, name: str) -> np.ndarray:
        self._require(name)
        return self._codes[name]

    def attribute_levels(self, name: str) -> List[str]:
        self._require(name)
        return list(self._levels[name])

    def level_code(self, name: str, level: str) -> int:
        levels = self.attribute_levels(name)
        return levels.index(level) if level in levels else -2

    # --- conversion ------------------------------------------------------

    def copy(self) -> 'AttributedGraph':
        g = AttributedGraph(self.n)
        g._edges = set(self._edges)
        g._neighbors = [set(s) for s in self._neighbors]
        g._levels = {k: list(v) for k, v in self._levels.items()}
        g._codes = {k: v.copy() for k, v in self._codes.items()}
        return g

    def to_networkx(self) -> nx.Graph:
        G = nx.Graph()
        G.add_nodes_from(range(self.n))
        G.add_edges_from(self._edges)
        for name in self._levels:
            nx.set_node_attributes(G, dict(enumerate(self.attribute(name))), name)
        return G

    @classmethod
    def from_networkx(cls, G: nx.Graph, attributes: Optional[Sequence[str]] = None) -> 'AttributedGraph':
        """Relabel nodes 0..n-1 in ``G.nodes()`` order and copy named attributes"""
        if G.is_directed():
            raise GraphError("population graphs are undirected")
        nodes = list(G.nodes())
        index = {node: k for k, node in enumerate(nodes)}
        g = cls(len(nodes))
        for u, v in G.edges():
            if u != v:
                g.add_edge(index[u], index[v])
        for name in attributes or ():
            labels = [G.nodes[node].get(name) for node in nodes]
            g.set_attribute(name, [None if x is None else str(x) for x in labels])
        return g

    def __repr__(self):
        return f"AttributedGraph(n={self.n}, edges={self.n_edges}, attributes={self.attribute_names})"


@dataclass
class GraphStatistics:
    """Exact summary of a graph for a list of statistic names"""
    edges: int
    nodematch_counts: Dict[str, int] = field(default_factory=dict)
    mean_degree: float = 0.0
    degree_histogram: np.ndarray = field(default_factory=lambda: np.zeros(1, dtype=np.int64))
    names: List[str] = field(default_factory=list)

    def vector(self) -> np.ndarray:
        """Values aligned to ``names``"""
        out = []
        for name in self.names:
            out.append(self.edges if name == 'edges' else self.nodematch_counts[name])
        return np.array(out, dtype=float)


def parse_statistic(name: str) -> Tuple[str, Optional[str], Optional[str]]:
    """Split a statistic name into (kind, attribute, level)

    ``edges`` -> ('edges', None, None); ``nodematch(gender)`` ->
    ('nodematch', 'gender', None); ``nodematch(gender=female)`` ->
    ('nodematch', 'gender', 'female').
    """
    name = name.strip()
    if name == 'edges':
        return 'edges', None, None
    match = _NODEMATCH.match(name)
    if not match:
        raise GraphError(f"unknown statistic '{name}'")
    return 'nodematch', match.group(1), match.group(2)


def _match_mask(g: AttributedGraph, attr: str, level: Optional[str],
                left: np.ndarray, right: np.ndarray) -> np.ndarray:
    codes = g.attribute_codes(attr)
    a, b = codes[left], codes[right]
    if level is None:
        return (a == b) & (a >= 0)
    code = g.level_code(attr, level)
    return (a == code) & (b == code)


def compute_statistics(g: AttributedGraph, spec: Sequence[str]) -> GraphStatistics:
    """Exact counts for each named statistic (plus edges, mean degree, histogram)"""
    pairs = g.edge_array()
    degrees = g.degrees()
    stats = GraphStatistics(
        edges=g.n_edges,
        mean_degree=float(degrees.mean()) if g.n else 0.0,
        degree_histogram=np.bincount(degrees, minlength=1) if g.n else np.zeros(1, dtype=np.int64),
        names=list(spec),
    )
    for name in spec:
        kind, attr, level = parse_statistic(name)
        if kind == 'edges':
            continue
        if len(pairs) == 0:
            g._require(attr)
            stats.nodematch_counts[name] = 0
            continue
        mask = _match_mask(g, attr, level, pairs[:, 0], pairs[:, 1])
        stats.nodematch_counts[name] = int(mask.sum())
    return stats


class ChangeStatistics:
    """Compiled change-statistic evaluator for one graph and statistic list

    Holds direct references to the graph's attribute code arrays so a
    delta costs one comparison per statistic.
    """

    def __init__(self, g: AttributedGraph, spec: Sequence[str]):
        self.graph = g
        self.names = list(spec)
        self._terms = []
        for name in self.names:
            kind, attr, level = parse_statistic(name)
            if kind == 'edges':
                self._terms.append((0, None, 0))
            elif level is None:
                self._terms.append((1, g.attribute_codes(attr), 0))
            else:
                self._terms.append((2, g.attribute_codes(attr), g.level_code(attr, level)))
        self.size = len(self._terms)

    def delta(self, i: int, j: int, present: Optional[bool] = None) -> np.ndarray:
        """s(g with dyad toggled) - s(g); ``present`` skips the edge lookup"""
        if present is None:
            present = self.graph.has_edge(i, j)
        sign = -1.0 if present else 1.0
        out = np.zeros(self.size)
        for k, (kind, codes, code) in enumerate(self._terms):
            if kind == 0:
                out[k] = sign
            elif kind == 1:
                if codes[i] >= 0 and codes[i] == codes[j]:
                    out[k] = sign
            elif codes[i] == code and codes[j] == code:
                out[k] = sign
        return out

    def dyad_matrix(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        """Change from adding each dyad (rows[d], cols[d]) as a (D, k) array"""
        out = np.empty((len(rows), self.size))
        for k, (kind, codes, code) in enumerate(self._terms):
            if kind == 0:
                out[:, k] = 1.0
            elif kind == 1:
                out[:, k] = (codes[rows] == codes[cols]) & (codes[rows] >= 0)
            else:
                out[:, k] = (codes[rows] == code) & (codes[cols] == code)
        return out


def toggle_edge_delta(g: AttributedGraph, i: int, j: int, spec: Sequence[str]) -> np.ndarray:
    """Change-statistic vector for toggling dyad (i, j); g is not modified"""
    if i == j:
        raise GraphError("toggle requires two distinct nodes")
    return ChangeStatistics(g, spec).delta(i, j)


def erdos_renyi(n: int, mean_degree: float, seed: int) -> AttributedGraph:
    """Bernoulli random graph with p = mean_degree / (n - 1)

    Args:
        n: Node count
        mean_degree: Expected degree, 0 <= mean_degree <= n - 1
        seed: RNG seed

    Returns:
        AttributedGraph with no attributes
    """
    if n < 0:
        raise GraphError("node count must be nonnegative")
    if mean_degree < 0 or (n > 1 and mean_degree > n - 1) or (n <= 1 and mean_degree > 0):
        raise GraphError(f"infeasible mean degree {mean_degree} for n={n}")
    g = AttributedGraph(n)
    if n < 2:
        return g
    p = mean_degree / (n - 1)
    rng = np.random.default_rng(seed)
    rows, cols = np.triu_indices(n, k=1)
    keep = rng.random(rows.size) < p
    for i, j in zip(rows[keep].tolist(), cols[keep].tolist()):
        g.add_edge(i, j)
    log_graph_event(logger, f"Erdos-Renyi n={n} p={p:.5f}: {g.n_edges} edges", "debug")
    return g


def assign_attributes(g: AttributedGraph, attr: str, distribution: Mapping[str, float],
                      seed: int) -> AttributedGraph:
    """Copy of ``g`` with i.i.d. categorical labels drawn from ``distribution``"""
    if not distribution:
        raise GraphError("empty attribute distribution")
    levels = list(distribution)
    probs = np.array([float(distribution[k]) for k in levels])
    if np.any(probs < 0) or not np.isfinite(probs).all() or abs(probs.sum() - 1.0) > 1e-12:
        raise GraphError(f"invalid distribution for '{attr}': probabilities must sum to 1")
    rng = np.random.default_rng(seed)
    codes = rng.choice(len(levels), size=g.n, p=probs / probs.sum())
    out = g.copy()
    out.set_attribute_codes(attr, codes, levels)
    return out


def connectivity_report(g: AttributedGraph) -> Dict[str, int]:
    """Component count, largest component size and isolate count"""
    G = g.to_networkx()
    sizes = [len(c) for c in nx.connected_components(G)] if g.n else []
    return {
        'n_nodes': g.n,
        'n_edges': g.n_edges,
        'n_components': len(sizes),
        'largest_component': max(sizes) if sizes else 0,
        'isolates': nx.number_of_isolates(G),
    }


def write_edge_list(g: AttributedGraph, path: str, attribute_path: Optional[str] = None):
    """Write ``n=<count>`` then ``i j`` per edge; attributes go to a sidecar CSV"""
    with open(path, 'w') as f:
        f.write(f"n={g.n}\n")
        for i, j in g.edges():
            f.write(f"{i} {j}\n")
    if attribute_path:
        rows = []
        for name in g.attribute_names:
            for node, value in enumerate(g.attribute(name)):
                if value is not None:
                    rows.append({'node': node, 'attr': name, 'value': value})
        pd.DataFrame(rows, columns=['node', 'attr', 'value']).to_csv(
            attribute_path, index=False, lineterminator='\n')


def read_edge_list(path: str, attribute_path: Optional[str] = None) -> AttributedGraph:
    with open(path, 'r') as f:
        lines = [line.strip() for line in f if line.strip()]
    if not lines or not lines[0].startswith('n='):
        raise GraphError(f"{path}: missing 'n=<count>' header")
    try:
        g = AttributedGraph(int(lines[0][2:]))
        for line in lines[1:]:
            i, j = line.split()
            g.add_edge(int(i), int(j))
    except ValueError as e:
        raise GraphError(f"{path}: malformed edge line ({e})")
    if attribute_path:
        frame = pd.read_csv(attribute_path, dtype={'value': str}, keep_default_na=False)
        for name, block in frame.groupby('attr', sort=False):
            labels: List[Optional[str]] = [None] * g.n
            for node, value in zip(block['node'], block['value']):
                labels[int(node)] = value
            g.set_attribute(name, labels)
    return g
