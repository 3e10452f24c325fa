import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from distloc.harness.config import load_config
from distloc.network import (LocalizationParams, TopologyError, bfs_distances, build_topology,
                             graph_diameter, node_view, path_sum, selection_matrix, tree_path,
                             truth_from_positions)
from distloc.oracles import random_tree


def test_chain_neighbors():
    t = build_topology([1, 2, 3], [(1, 2), (2, 3)])
    assert set(t.neighbors(2)) == {1, 3}
    assert t.is_tree


def test_disconnected_rejected():
    with pytest.raises(TopologyError, match="disconnected"):
        build_topology([1, 2], [])


def test_bad_edges_rejected():
    with pytest.raises(TopologyError, match="self-loop"):
        build_topology([1, 2], [(1, 1), (1, 2)])
    with pytest.raises(TopologyError, match="unknown"):
        build_topology([1, 2], [(1, 3)])


def test_duplicate_edge_kept_once():
    t = build_topology([1, 2], [(1, 2), (2, 1)])
    assert t.edges == ((1, 2),)
    assert t.directed_edges == ((1, 2), (2, 1))


def test_preset_tree_valid():
    cfg = load_config("fig2a")
    t = build_topology(cfg.network.nodes, cfg.network.edges)
    assert len(t) == 11 and t.is_tree
    assert graph_diameter(t) == 5


def test_truth_from_positions():
    th = truth_from_positions({1: (0, 0), 2: (3, 4)})
    np.testing.assert_array_equal(th[(1, 2)], [-3, 0, -4, 0])
    np.testing.assert_array_equal(th[(2, 1)], [3, 0, 4, 0])
    th = truth_from_positions({1: (1, 1), 2: (1, 1)})
    np.testing.assert_array_equal(th[(1, 2)], np.zeros(4))


def test_path_sum_examples():
    t = build_topology([1, 2, 3], [(1, 2), (2, 3)])
    th = truth_from_positions({1: (0, 0), 2: (1, 2), 3: (-4, 5)})
    np.testing.assert_array_equal(path_sum(th, [1]), np.zeros(4))
    np.testing.assert_allclose(path_sum(th, [1, 2, 3], t), th[(1, 3)])


def test_path_sum_around_cycle_is_zero():
    th = truth_from_positions({1: (0, 0), 2: (1, 2), 3: (-4, 5), 4: (2, -7)})
    np.testing.assert_allclose(path_sum(th, [1, 2, 3, 4, 1]), np.zeros(4), atol=1e-12)


def test_path_sum_rejects_non_edges():
    t = build_topology([1, 2, 3], [(1, 2), (2, 3)])
    th = truth_from_positions({1: (0, 0), 2: (1, 2), 3: (-4, 5)})
    with pytest.raises(ValueError, match="broken path"):
        path_sum(th, [1, 3], t)


def test_diameter_examples():
    assert graph_diameter(build_topology([1], [])) == 0
    assert graph_diameter(build_topology([1, 2, 3, 4], [(1, 2), (2, 3), (3, 4)])) == 3


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 12), st.integers(0, 2**31 - 1))
def test_diameter_matches_all_pairs_bfs(n, seed):
    t = random_tree(np.random.default_rng(seed), n)
    brute = max(d for v in t.nodes for d in bfs_distances(t, v).values())
    assert graph_diameter(t) == brute


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 10), st.integers(0, 2**31 - 1))
def test_tree_path_sum_equals_truth(n, seed):
    rng = np.random.default_rng(seed)
    t = random_tree(rng, n)
    pos = {v: rng.uniform(-10, 10, 2) for v in t.nodes}
    full = truth_from_positions(pos)
    edges_only = truth_from_positions(pos, pairs=t.directed_edges)
    for i in t.nodes:
        view = node_view(edges_only, t, i)
        for j in t.nodes:
            if i != j:
                np.testing.assert_allclose(path_sum(edges_only, tree_path(t, i, j), t), full[(i, j)],
                                           atol=1e-12)
                np.testing.assert_allclose(view[j], full[(i, j)], atol=1e-12)


def test_mask_zeroes_fixed_components():
    p = LocalizationParams({(1, 2): [1, 2, 3, 4]})
    np.testing.assert_array_equal(p[(1, 2)], [1, 0, 3, 0])
    assert p[(2, 2)].tolist() == [0, 0, 0, 0]
    with pytest.raises(ValueError):
        p.set((1, 1), [1, 0, 0, 0])


def test_array_round_trip_and_antisymmetry():
    t = build_topology([1, 2, 3], [(1, 2), (2, 3)])
    th = truth_from_positions({1: (0, 0), 2: (1, 2), 3: (-4, 5)}, pairs=t.directed_edges)
    arr = th.to_array(t)
    back = LocalizationParams.from_array(t, arr)
    np.testing.assert_array_equal(back.to_array(t), arr)
    for v in th.antisymmetry_residual().values():
        np.testing.assert_array_equal(v, 0)


def test_selection_matrix():
    E = selection_matrix((0, 2), 4)
    np.testing.assert_array_equal(E.T @ np.array([1, 2, 3, 4]), [1, 3])
