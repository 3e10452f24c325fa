import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from distloc.messaging import (aggregate, coverage_counts, init_messages, pass_messages, plan_for,
                               run_rounds)
from distloc.model import linear_position_observation
from distloc.network import LocalizationParams, build_topology, graph_diameter, truth_from_positions
from distloc.oracles import direct_sums, random_spd, random_theta, random_tree


def _terms(t, F, Fdot):
    return {v: (F[k], Fdot[k]) for k, v in enumerate(t.nodes)}


def test_init_mddot_is_f_theta():
    t = build_topology([1, 2], [(1, 2)])
    th = LocalizationParams({(1, 2): [1, 0, 2, 0], (2, 1): [-1, 0, -2, 0]})
    board = init_messages(t, _terms(t, np.array([np.eye(4)] * 2), np.zeros((2, 4))), th)
    # message 1 -> 2 carries F^1 theta^{2,1}
    np.testing.assert_array_equal(board.triple(1, 2).mddot, [-1, 0, -2, 0])
    np.testing.assert_array_equal(board.triple(2, 1).mddot, [1, 0, 2, 0])


def test_zero_theta_gives_zero_mddot():
    t = build_topology([1, 2, 3], [(1, 2), (2, 3)])
    board = init_messages(t, _terms(t, np.array([np.eye(4)] * 3), np.ones((3, 4))),
                          LocalizationParams.zeros(t))
    assert not board.mddot.any()


def test_position_observation_information():
    obs = linear_position_observation(1.0, 0.5)
    F = obs.C.T @ np.linalg.inv(obs.R) @ obs.C
    expected = np.zeros((4, 4))
    expected[0, 0] = expected[2, 2] = 4.0
    np.testing.assert_allclose(F, expected)


def test_single_node_aggregate():
    t = build_topology([7], [])
    F, Fdot = random_spd(np.random.default_rng(0), 4, 1), np.ones((1, 4))
    board = init_messages(t, (F, Fdot), np.zeros((0, 4)))
    sF, sFd, sFt = aggregate(board, 7, (F, Fdot))
    np.testing.assert_array_equal(sF, F[0])
    np.testing.assert_array_equal(sFd, Fdot[0])
    np.testing.assert_array_equal(sFt, np.zeros(4))


def test_chain_sum_counts_nodes():
    t = build_topology([1, 2, 3], [(1, 2), (2, 3)])
    F, Fdot = np.array([np.eye(4)] * 3), np.zeros((3, 4))
    th = LocalizationParams.zeros(t)
    board = run_rounds(init_messages(t, (F, Fdot), th), 2, (F, Fdot), th)
    sF, _, _ = aggregate(board, 1, (F, Fdot))
    np.testing.assert_array_equal(sF, 3 * np.eye(4))


def test_round1_triples_retained():
    t = build_topology([1, 2, 3], [(1, 2), (2, 3)])
    F, Fdot = np.array([np.eye(4)] * 3), np.zeros((3, 4))
    th = LocalizationParams.zeros(t)
    board = run_rounds(init_messages(t, (F, Fdot), th), 2, (F, Fdot), th)
    np.testing.assert_array_equal(board.triple(2, 1, round1=True).m, np.eye(4))
    np.testing.assert_array_equal(board.triple(2, 1).m, 2 * np.eye(4))


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 8), st.integers(0, 2**31 - 1))
def test_aggregation_random_trees(n, seed):
    rng = np.random.default_rng(seed)
    t = random_tree(rng, n)
    F, Fdot = random_spd(rng, 4, n), rng.standard_normal((n, 4))
    theta = random_theta(rng, t, free=range(4))
    board = run_rounds(init_messages(t, (F, Fdot), theta), graph_diameter(t), (F, Fdot), theta)
    for r in t.nodes:
        for got, want in zip(aggregate(board, r, (F, Fdot)), direct_sums(t, F, Fdot, theta, r)):
            assert np.abs(got - want).max() < 1e-12


def test_frozen_aggregate_on_chain():
    # values from the direct-sum oracle, frozen
    t = build_topology([1, 2, 3], [(1, 2), (2, 3)])
    F = np.array([np.diag([1.0, 2, 3, 4]), np.diag([2.0, 1, 1, 1]), np.diag([0.5, 0.5, 0.5, 0.5])])
    Fdot = np.array([[1.0, 0, 0, 0], [0, 1.0, 0, 0], [0, 0, 1.0, 0]])
    th = truth_from_positions({1: (0, 0), 2: (1, 2), 3: (4, -1)}, pairs=t.directed_edges)
    board = run_rounds(init_messages(t, (F, Fdot), th), 2, (F, Fdot), th)
    sF, sFd, sFt = aggregate(board, 1, (F, Fdot))
    np.testing.assert_allclose(sF, np.diag([3.5, 3.5, 4.5, 5.5]))
    np.testing.assert_allclose(sFd, [1, 1, 1, 0])
    np.testing.assert_allclose(sFt, [-4.0, 0.0, -1.5, 0.0])


def test_coverage_grows_and_never_double_counts_on_trees():
    t = random_tree(np.random.default_rng(5), 8)
    plan = plan_for(t)
    prev = None
    for K in range(1, graph_diameter(t) + 1):
        c = coverage_counts(plan, K)
        assert c.max() == 1
        if prev is not None:
            assert np.all(c >= prev)
        prev = c
    np.testing.assert_array_equal(prev, np.ones_like(prev))


def test_coverage_double_counts_on_cycle():
    t = build_topology([1, 2, 3], [(1, 2), (2, 3), (3, 1)])
    assert coverage_counts(plan_for(t), 3).max() > 1


def test_rounds_independent_of_edge_order():
    rng = np.random.default_rng(3)
    a = build_topology([1, 2, 3, 4], [(1, 2), (2, 3), (2, 4)])
    b = build_topology([1, 2, 3, 4], [(2, 4), (3, 2), (1, 2)])
    F, Fdot = random_spd(rng, 4, 4), rng.standard_normal((4, 4))
    pos = {v: rng.uniform(-3, 3, 2) for v in a.nodes}
    ta = truth_from_positions(pos, pairs=a.directed_edges)
    tb = truth_from_positions(pos, pairs=b.directed_edges)
    for r in a.nodes:
        ba = run_rounds(init_messages(a, (F, Fdot), ta), 2, (F, Fdot), ta)
        bb = run_rounds(init_messages(b, (F, Fdot), tb), 2, (F, Fdot), tb)
        for x, y in zip(aggregate(ba, r, (F, Fdot)), aggregate(bb, r, (F, Fdot))):
            np.testing.assert_allclose(x, y, atol=1e-12)


def test_pass_messages_rejects_k0():
    import pytest
    t = build_topology([1, 2], [(1, 2)])
    with pytest.raises(ValueError):
        pass_messages(plan_for(t), np.zeros((2, 4, 4)), np.zeros((2, 4)), np.zeros((2, 4)), 0)
