"""Sensor graph topology and inter-node localization parameters."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Dict, Hashable, Iterable, Mapping, Sequence, Tuple

import numpy as np

Node = Hashable
Edge = Tuple[Node, Node]


class TopologyError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Topology:
    """Undirected, connected graph without self-loops.

    Each undirected edge is stored once in ``edges`` and exposed in both
    directions through ``directed_edges``; ``index`` maps node ids to
    contiguous integers used by the array kernels.
    """

    nodes: Tuple[Node, ...]
    edges: Tuple[Edge, ...]
    adjacency: Dict[Node, Tuple[Node, ...]] = field(repr=False)

    @property
    def index(self) -> Dict[Node, int]:
        return {v: k for k, v in enumerate(self.nodes)}

    @property
    def directed_edges(self) -> Tuple[Edge, ...]:
        out = []
        for i, j in self.edges:
            out.append((i, j))
            out.append((j, i))
        return tuple(out)

    def neighbors(self, i: Node) -> Tuple[Node, ...]:
        return self.adjacency[i]

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def is_tree(self) -> bool:
        return len(self.edges) == len(self.nodes) - 1


def build_topology(nodes: Iterable[Node], edge_list: Iterable[Sequence[Node]]) -> Topology:
    nodes = tuple(nodes)
    if len(set(nodes)) != len(nodes):
        raise TopologyError("duplicate node ids")
    if not nodes:
        raise TopologyError("topology needs at least one node")
    known = set(nodes)
    adj: Dict[Node, list] = {v: [] for v in nodes}
    edges = []
    seen = set()
    for e in edge_list:
        i, j = e
        if i not in known or j not in known:
            raise TopologyError(f"edge ({i!r}, {j!r}) references an unknown node")
        if i == j:
            raise TopologyError(f"self-loop at node {i!r}")
        key = frozenset((i, j))
        if key in seen:
            continue
        seen.add(key)
        edges.append((i, j))
        adj[i].append(j)
        adj[j].append(i)
    # connectivity
    start = nodes[0]
    reached = {start}
    queue = deque([start])
    while queue:
        u = queue.popleft()
        for w in adj[u]:
            if w not in reached:
                reached.add(w)
                queue.append(w)
    if len(reached) != len(nodes):
        missing = sorted(map(str, known - reached))
        raise TopologyError(f"graph is disconnected; unreachable from {start!r}: {missing}")
    return Topology(nodes=nodes, edges=tuple(edges),
                    adjacency={v: tuple(adj[v]) for v in nodes})


def bfs_distances(t: Topology, source: Node) -> Dict[Node, int]:
    dist = {source: 0}
    queue = deque([source])
    while queue:
        u = queue.popleft()
        for w in t.adjacency[u]:
            if w not in dist:
                dist[w] = dist[u] + 1
                queue.append(w)
    return dist


def bfs_parents(t: Topology, root: Node) -> Dict[Node, Node]:
    """Breadth-first spanning tree rooted at ``root`` (root maps to itself).

    Neighbors are visited in adjacency order, so the tree is deterministic.
    """
    parent = {root: root}
    queue = deque([root])
    while queue:
        u = queue.popleft()
        for w in t.adjacency[u]:
            if w not in parent:
                parent[w] = u
                queue.append(w)
    return parent


def graph_diameter(t: Topology) -> int:
    return max(max(bfs_distances(t, v).values()) for v in t.nodes)


def tree_path(t: Topology, i: Node, j: Node) -> Tuple[Node, ...]:
    """Shortest (on a tree: unique) path from ``i`` to ``j``."""
    parent = bfs_parents(t, i)
    path = [j]
    while path[-1] != i:
        path.append(parent[path[-1]])
    return tuple(reversed(path))


def position_mask(state_dim: int = 4) -> Tuple[int, ...]:
    """Default free components: planar position for 4-d, the state for 1-d."""
    if state_dim == 4:
        return (0, 2)
    if state_dim == 1:
        return (0,)
    raise ValueError(f"no default mask for state_dim={state_dim}")


def selection_matrix(free: Sequence[int], state_dim: int) -> np.ndarray:
    E = np.zeros((state_dim, len(free)))
    for col, k in enumerate(free):
        E[k, col] = 1.0
    return E


class LocalizationParams:
    """Offsets theta^{i,j}: the position of node i in node j's frame.

    Only the components listed in ``free`` may be non-zero; ``set`` zeroes
    the rest. ``theta^{i,i}`` is always the zero vector.
    """

    def __init__(self, values: Mapping[Edge, np.ndarray], state_dim: int = 4, free=None):
        self.state_dim = int(state_dim)
        self.free = tuple(free) if free is not None else position_mask(self.state_dim)
        self._values: Dict[Edge, np.ndarray] = {}
        for key, vec in values.items():
            self.set(key, vec)

    @property
    def E(self) -> np.ndarray:
        return selection_matrix(self.free, self.state_dim)

    def set(self, edge: Edge, vec) -> None:
        vec = np.asarray(vec, dtype=float).reshape(self.state_dim)
        masked = np.zeros(self.state_dim)
        idx = list(self.free)
        masked[idx] = vec[idx]
        if edge[0] == edge[1] and np.any(masked):
            raise ValueError("theta^{i,i} must be zero")
        self._values[tuple(edge)] = masked

    def __getitem__(self, edge: Edge) -> np.ndarray:
        i, j = edge
        if i == j:
            return np.zeros(self.state_dim)
        return self._values[(i, j)].copy()

    def __contains__(self, edge) -> bool:
        return tuple(edge) in self._values or edge[0] == edge[1]

    def keys(self):
        return self._values.keys()

    def items(self):
        return ((k, v.copy()) for k, v in self._values.items())

    def copy(self) -> "LocalizationParams":
        return LocalizationParams(self._values, self.state_dim, self.free)

    def to_array(self, t: Topology) -> np.ndarray:
        """Rows ordered as ``t.directed_edges``."""
        return np.array([self[e] for e in t.directed_edges]).reshape(-1, self.state_dim)

    @classmethod
    def from_array(cls, t: Topology, arr: np.ndarray, free=None) -> "LocalizationParams":
        arr = np.asarray(arr, dtype=float)
        return cls(dict(zip(t.directed_edges, arr)), arr.shape[1], free)

    @classmethod
    def zeros(cls, t: Topology, state_dim: int = 4, free=None) -> "LocalizationParams":
        return cls({e: np.zeros(state_dim) for e in t.directed_edges}, state_dim, free)

    def antisymmetry_residual(self) -> Dict[Edge, np.ndarray]:
        """theta^{i,j} + theta^{j,i} for each stored pair (zero for ground truth)."""
        out = {}
        for (i, j), v in self._values.items():
            if (j, i) in self._values and (j, i) not in out:
                out[(i, j)] = v + self._values[(j, i)]
        return out


def truth_from_positions(positions: Mapping[Node, Sequence[float]], pairs=None,
                         state_dim: int = 4, free=None) -> LocalizationParams:
    """Ground-truth offsets theta*^{i,j} = p_i - p_j placed on the free components.

    ``pairs`` defaults to every ordered pair of distinct nodes.
    """
    free = tuple(free) if free is not None else position_mask(state_dim)
    pos = {k: np.atleast_1d(np.asarray(v, dtype=float)) for k, v in positions.items()}
    for k, v in pos.items():
        if v.shape != (len(free),):
            raise ValueError(f"position of node {k!r} must have {len(free)} coordinates")
    if pairs is None:
        pairs = [(i, j) for i in pos for j in pos if i != j]
    values = {}
    for i, j in pairs:
        vec = np.zeros(state_dim)
        vec[list(free)] = pos[i] - pos[j]
        values[(i, j)] = vec
    return LocalizationParams(values, state_dim, free)


def path_sum(params: LocalizationParams, path: Sequence[Node], t: Topology = None) -> np.ndarray:
    """Sum of theta along consecutive path elements (zero for a single node)."""
    path = list(path)
    if not path:
        raise ValueError("empty path")
    total = np.zeros(params.state_dim)
    for a, b in zip(path[:-1], path[1:]):
        if t is not None and b not in t.adjacency[a]:
            raise ValueError(f"broken path: ({a!r}, {b!r}) is not an edge")
        if (a, b) not in params:
            raise ValueError(f"broken path: no parameter for ({a!r}, {b!r})")
        total += params[(a, b)]
    return total


def node_view(params: LocalizationParams, t: Topology, r: Node) -> Dict[Node, np.ndarray]:
    """Offsets theta^{r,v} for every node as seen from node ``r``.

    Sums the directed parameters along the breadth-first tree rooted at
    ``r``, each edge taken in the direction away from ``r``. On a tree this
    is the unique path; this is the parameterization node r's filter uses.
    """
    parent = bfs_parents(t, r)
    order = sorted(bfs_distances(t, r).items(), key=lambda kv: kv[1])
    view = {r: np.zeros(params.state_dim)}
    for v, _ in order:
        if v == r:
            continue
        u = parent[v]
        view[v] = view[u] + params[(u, v)]
    return view
