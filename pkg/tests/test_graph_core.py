#!/usr/bin/env python3
"""Test script for attributed graphs, statistics and generators"""

import os
import sys
import tempfile

import networkx as nx
import numpy as np
import pytest

# Add src to path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

from graph_core import (AttributedGraph, ChangeStatistics, GraphError, assign_attributes,
                        compute_statistics, connectivity_report, erdos_renyi,
                        parse_statistic, read_edge_list, toggle_edge_delta, write_edge_list)


SPEC = ['edges', 'nodematch(gender)', 'nodematch(gender=female)']


def _triangle_plus():
    g = AttributedGraph(5, edges=[(0, 1), (1, 2), (0, 2), (3, 4)])
    g.set_attribute('gender', ['male', 'male', 'female', 'female', 'female'])
    return g


def test_basic_edges():
    print("Testing edge bookkeeping...")
    g = _triangle_plus()
    assert g.n_edges == 4
    assert g.has_edge(2, 0)
    assert g.degrees().tolist() == [2, 2, 2, 1, 1]
    assert g.neighbors(2) == [0, 1]
    assert g.toggle(0, 3) is True and g.toggle(3, 0) is False
    with pytest.raises(GraphError):
        g.add_edge(1, 1)
    with pytest.raises(GraphError):
        g.add_edge(0, 5)
    print("  ✓ canonical undirected storage")


def test_parse_statistic():
    assert parse_statistic('edges') == ('edges', None, None)
    assert parse_statistic('nodematch(race)') == ('nodematch', 'race', None)
    assert parse_statistic('nodematch(gender=female)') == ('nodematch', 'gender', 'female')
    with pytest.raises(GraphError):
        parse_statistic('triangles')


def test_compute_statistics():
    print("Testing exact statistics...")
    stats = compute_statistics(_triangle_plus(), SPEC)
    assert stats.edges == 4
    assert stats.nodematch_counts['nodematch(gender)'] == 2
    assert stats.nodematch_counts['nodematch(gender=female)'] == 1
    assert stats.vector().tolist() == [4.0, 2.0, 1.0]
    assert stats.mean_degree == pytest.approx(8 / 5)
    assert stats.degree_histogram.tolist() == [0, 2, 3]
    print(f"  ✓ {stats.vector().tolist()}")


def test_change_statistics_match_recount():
    """delta(i, j) equals s(g with dyad toggled) - s(g) for every dyad"""
    print("Testing change statistics against recount...")
    g = _triangle_plus()
    change = ChangeStatistics(g, SPEC)
    before = compute_statistics(g, SPEC).vector()
    for i in range(g.n):
        for j in range(i + 1, g.n):
            delta = change.delta(i, j)
            h = g.copy()
            h.toggle(i, j)
            np.testing.assert_array_equal(delta, compute_statistics(h, SPEC).vector() - before)
            np.testing.assert_array_equal(delta, toggle_edge_delta(g, i, j, SPEC))
    rows, cols = np.triu_indices(g.n, k=1)
    adds = change.dyad_matrix(rows, cols)
    for d, (i, j) in enumerate(zip(rows, cols)):
        np.testing.assert_array_equal(adds[d], np.abs(change.delta(i, j)))
    print("  ✓ all 10 dyads agree")


def test_missing_labels_never_match():
    g = AttributedGraph(3, edges=[(0, 1), (1, 2)])
    g.set_attribute('gender', [None, None, 'male'])
    assert compute_statistics(g, ['nodematch(gender)']).nodematch_counts['nodematch(gender)'] == 0


def test_unknown_attribute():
    with pytest.raises(GraphError):
        compute_statistics(AttributedGraph(3), ['nodematch(race)'])


def test_erdos_renyi():
    print("Testing Erdos-Renyi generator...")
    g = erdos_renyi(2000, 8, seed=11)
    assert abs(g.degrees().mean() - 8) < 0.3
    h = erdos_renyi(2000, 8, seed=11)
    assert g.edges() == h.edges()
    assert erdos_renyi(10, 0, seed=1).n_edges == 0
    assert erdos_renyi(5, 4, seed=1).n_edges == 10
    for n, k in ((10, -1), (10, 10), (1, 0.5)):
        with pytest.raises(GraphError):
            erdos_renyi(n, k, seed=0)
    print(f"  ✓ mean degree {g.degrees().mean():.3f}")


def test_assign_attributes():
    print("Testing attribute assignment...")
    g = erdos_renyi(3000, 4, seed=3)
    labeled = assign_attributes(g, 'group', {'yes': 0.3, 'no': 0.7}, seed=5)
    share = np.mean([x == 'yes' for x in labeled.attribute('group')])
    assert abs(share - 0.3) < 0.03
    assert 'group' not in g.attribute_names
    assert labeled.edges() == g.edges()
    with pytest.raises(GraphError):
        assign_attributes(g, 'group', {'yes': 0.3, 'no': 0.6}, seed=5)
    print(f"  ✓ share {share:.3f}")


def test_networkx_round_trip_and_connectivity():
    print("Testing networkx interop...")
    G = nx.random_regular_graph(4, 50, seed=2)
    nx.set_node_attributes(G, {v: 'a' if v % 2 else 'b' for v in G.nodes()}, 'kind')
    g = AttributedGraph.from_networkx(G, ['kind'])
    assert g.n_edges == 100
    assert set(g.degrees().tolist()) == {4}
    report = connectivity_report(g)
    assert report['n_nodes'] == 50 and report['isolates'] == 0
    back = g.to_networkx()
    assert back.number_of_edges() == 100
    split = connectivity_report(AttributedGraph(4, edges=[(0, 1)]))
    assert split['n_components'] == 3 and split['largest_component'] == 2
    assert split['isolates'] == 2
    print("  ✓ regular graph imported")


def test_edge_list_io():
    print("Testing edge list io...")
    g = _triangle_plus()
    with tempfile.TemporaryDirectory() as tmp:
        edges, attrs = os.path.join(tmp, 'g.edges'), os.path.join(tmp, 'g.csv')
        write_edge_list(g, edges, attrs)
        h = read_edge_list(edges, attrs)
        with open(edges) as f:
            assert f.readline().strip() == 'n=5'
        bad = os.path.join(tmp, 'bad.edges')
        with open(bad, 'w') as f:
            f.write("0 1\n")
        with pytest.raises(GraphError):
            read_edge_list(bad)
    assert h.edges() == g.edges()
    assert h.attribute('gender') == g.attribute('gender')
    print("  ✓ edges and attributes restored")


def main():
    """Run all tests"""
    print("=" * 60)
    print("Graph Core - Component Tests")
    print("=" * 60)

    try:
        test_basic_edges()
        test_parse_statistic()
        test_compute_statistics()
        test_change_statistics_match_recount()
        test_missing_labels_never_match()
        test_unknown_attribute()
        test_erdos_renyi()
        test_assign_attributes()
        test_networkx_round_trip_and_connectivity()
        test_edge_list_io()

        print("\n" + "=" * 60)
        print("All tests completed successfully! 🎉")
        print("=" * 60)

    except Exception as e:
        print(f"\n❌ Test failed with error: {e}")
        import traceback
        traceback.print_exc()


if __name__ == '__main__':
    main()
