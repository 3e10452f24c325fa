"""Synchronous K-round message passing over the sensor graph.

Messages live in arrays indexed by directed edge (order of
``Topology.directed_edges``). For the edge e = (i -> j):

    m_k[e]   = F^i    + sum_{p in ne(i) minus j} m_{k-1}[p -> i]
    mdot_k[e] = Fdot^i + sum_{p in ne(i) minus j} mdot_{k-1}[p -> i]
    mddot_k[e] = m_k[e] theta^{j,i} + sum_{p in ne(i) minus j} mddot_{k-1}[p -> i]

The neighbor sums are a fixed 0/1 matrix applied to the previous round, so
every round-k value depends only on round k-1.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Mapping, Tuple

import numpy as np

from .network import LocalizationParams, Topology


@dataclass(frozen=True)
class MessageTriple:
    m: np.ndarray
    mdot: np.ndarray
    mddot: np.ndarray


class MessagePlan:
    """Index structures for one topology.

    ``src``/``dst``/``rev`` give, per directed edge, its endpoints and the
    index of the opposite direction. ``exclude`` is the (E, E) matrix
    selecting the messages p -> i with p != j feeding edge i -> j, and
    ``incoming`` the (N, E) matrix summing all messages into a node.
    """

    def __init__(self, t: Topology):
        self.topology = t
        idx = t.index
        dedges = t.directed_edges
        self.n_nodes = len(t.nodes)
        self.n_edges = len(dedges)
        self.edge_index = {e: k for k, e in enumerate(dedges)}
        self.src = np.array([idx[i] for i, _ in dedges], dtype=int)
        self.dst = np.array([idx[j] for _, j in dedges], dtype=int)
        self.rev = np.array([self.edge_index[(j, i)] for i, j in dedges], dtype=int)
        E = self.n_edges
        feeds = (self.dst[None, :] == self.src[:, None]) & (self.src[None, :] != self.dst[:, None])
        self.exclude = feeds.astype(float)
        incoming = np.zeros((self.n_nodes, E))
        incoming[self.dst, np.arange(E)] = 1.0
        self.incoming = incoming


@lru_cache(maxsize=64)
def _plan_cached(t: Topology) -> MessagePlan:
    return MessagePlan(t)


def plan_for(t: Topology) -> MessagePlan:
    return _plan_cached(t)


class MessageBoard:
    """Messages of the current round plus a copy of round 1."""

    def __init__(self, plan: MessagePlan, k: int, m, mdot, mddot, m1=None, mdot1=None, mddot1=None):
        self.plan = plan
        self.k = k
        self.m = m
        self.mdot = mdot
        self.mddot = mddot
        self.m1 = m if m1 is None else m1
        self.mdot1 = mdot if mdot1 is None else mdot1
        self.mddot1 = mddot if mddot1 is None else mddot1

    @property
    def topology(self) -> Topology:
        return self.plan.topology

    def triple(self, i, j, round1: bool = False) -> MessageTriple:
        """Message sent from node ``i`` to node ``j``."""
        e = self.plan.edge_index[(i, j)]
        if round1:
            return MessageTriple(self.m1[e].copy(), self.mdot1[e].copy(), self.mddot1[e].copy())
        return MessageTriple(self.m[e].copy(), self.mdot[e].copy(), self.mddot[e].copy())

    def incoming(self, r) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Sums over neighbors j of (m, mdot, mddot)[j -> r]."""
        v = self.topology.index[r]
        w = self.plan.incoming[v]
        return (np.tensordot(w, self.m, axes=1), w @ self.mdot, w @ self.mddot)


def _stack_local_terms(plan: MessagePlan, local_terms) -> Tuple[np.ndarray, np.ndarray]:
    if isinstance(local_terms, tuple) and len(local_terms) == 2 and isinstance(local_terms[0], np.ndarray):
        F, Fdot = local_terms
        return np.asarray(F, dtype=float), np.asarray(Fdot, dtype=float)
    missing = [v for v in plan.topology.nodes if v not in local_terms]
    if missing:
        raise KeyError(f"missing local terms for nodes {missing}")
    F = np.array([np.asarray(local_terms[v][0], dtype=float) for v in plan.topology.nodes])
    Fdot = np.array([np.asarray(local_terms[v][1], dtype=float) for v in plan.topology.nodes])
    return F, Fdot


def _theta_array(plan: MessagePlan, params) -> np.ndarray:
    if isinstance(params, LocalizationParams):
        return params.to_array(plan.topology)
    return np.asarray(params, dtype=float)


def init_arrays(plan: MessagePlan, F: np.ndarray, Fdot: np.ndarray, theta: np.ndarray):
    m = F[plan.src]
    mdot = Fdot[plan.src]
    mddot = np.einsum("eab,eb->ea", m, theta[plan.rev])
    return m, mdot, mddot


def round_arrays(plan: MessagePlan, F, Fdot, theta, m, mdot, mddot):
    P = plan.exclude
    m_new = F[plan.src] + np.tensordot(P, m, axes=1)
    mdot_new = Fdot[plan.src] + P @ mdot
    mddot_new = np.einsum("eab,eb->ea", m_new, theta[plan.rev]) + P @ mddot
    return m_new, mdot_new, mddot_new


def pass_messages(plan: MessagePlan, F, Fdot, theta, K: int):
    """Array kernel: returns round-1 and round-K (m, mdot, mddot)."""
    if K < 1:
        raise ValueError("K must be >= 1")
    first = init_arrays(plan, F, Fdot, theta)
    cur = first
    for _ in range(2, K + 1):
        cur = round_arrays(plan, F, Fdot, theta, *cur)
    return first, cur


def coverage_counts(plan: MessagePlan, K: int) -> np.ndarray:
    """(N, N) counts: entry [r, v] is how often node v's local term enters node r's sum after K rounds.

    Indicator vectors are sent through the ``mdot`` channel. On a tree with
    K >= diameter every entry is 1; on cyclic graphs entries above 1 mark
    double counting and zeros mark nodes not reached.
    """
    N = plan.n_nodes
    F = np.zeros((N, 1, 1))
    Fdot = np.eye(N)
    if plan.n_edges == 0:
        return Fdot.copy()
    _, (_, mdot, _) = pass_messages(plan, F, Fdot, np.zeros((plan.n_edges, 1)), K)
    return Fdot + plan.incoming @ mdot


def init_messages(topology: Topology, local_terms, params) -> MessageBoard:
    """Round-1 board: m = F^i, mdot = Fdot^i, mddot = F^i theta^{j,i} on each i -> j.

    ``local_terms`` maps node -> (F, Fdot) or is a pair of stacked arrays.
    """
    plan = plan_for(topology)
    F, Fdot = _stack_local_terms(plan, local_terms)
    m, mdot, mddot = init_arrays(plan, F, Fdot, _theta_array(plan, params))
    return MessageBoard(plan, 1, m, mdot, mddot)


def run_rounds(board: MessageBoard, K: int, local_terms, params) -> MessageBoard:
    """Advance ``board`` synchronously until round ``K``."""
    if K < 1:
        raise ValueError("K must be >= 1")
    plan = board.plan
    F, Fdot = _stack_local_terms(plan, local_terms)
    theta = _theta_array(plan, params)
    cur = (board.m, board.mdot, board.mddot)
    for _ in range(board.k + 1, K + 1):
        cur = round_arrays(plan, F, Fdot, theta, *cur)
    return MessageBoard(plan, max(K, board.k), *cur, board.m1, board.mdot1, board.mddot1)


def aggregate(board: MessageBoard, r, local_terms) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(sum F, sum Fdot, sum F theta^{r,v}) as reconstructed at node ``r``.

    Exact on a tree once the board has run for at least the diameter.
    """
    plan = board.plan
    F, Fdot = _stack_local_terms(plan, local_terms)
    v = board.topology.index[r]
    m_in, mdot_in, mddot_in = board.incoming(r)
    return F[v] + m_in, Fdot[v] + mdot_in, mddot_in
