"""Brute-force reference computations used to verify the distributed algorithms.

Everything here trades efficiency for transparency: direct sums over nodes,
the stacked centralized Kalman filter, finite differences and dense
joint-Gaussian conditioning over a whole horizon.
"""
from __future__ import annotations

from typing import List, Sequence

import numpy as np

from .filtering import CentralizedFilterState, centralized_filter_step, symmetrize
from .model import MotionModel, ObservationModel
from .network import LocalizationParams, Topology, build_topology, node_view


def random_tree(rng: np.random.Generator, n_nodes: int) -> Topology:
    """Uniform random recursive tree on nodes 1..n_nodes."""
    nodes = list(range(1, n_nodes + 1))
    edges = [(int(rng.integers(1, v)), v) for v in nodes[1:]]
    return build_topology(nodes, edges)


def random_spd(rng: np.random.Generator, d: int, size=None, jitter: float = 0.1) -> np.ndarray:
    shape = (d, d) if size is None else (size, d, d)
    X = rng.standard_normal(shape)
    return X @ np.swapaxes(X, -1, -2) / d + jitter * np.eye(d)


def random_theta(rng: np.random.Generator, t: Topology, free=(0, 2), state_dim: int = 4,
                 scale: float = 3.0) -> np.ndarray:
    """Arbitrary (non-antisymmetric) directed-edge parameters as an (E, d) array."""
    theta = np.zeros((len(t.directed_edges), state_dim))
    theta[:, list(free)] = scale * rng.standard_normal((len(t.directed_edges), len(free)))
    return theta


def _params(t: Topology, theta: np.ndarray) -> LocalizationParams:
    # every component free, so nothing is masked away
    return LocalizationParams.from_array(t, theta, free=tuple(range(theta.shape[1])))


def direct_sums(t: Topology, F: np.ndarray, Fdot: np.ndarray, theta: np.ndarray, r):
    """(sum_v F^v, sum_v Fdot^v, sum_v F^v theta^{r,v}) with theta^{r,v} from path sums."""
    view = node_view(_params(t, theta), t, r)
    idx = t.index
    sF = sum(F[idx[v]] for v in t.nodes)
    sFdot = sum(Fdot[idx[v]] for v in t.nodes)
    sFtheta = sum(F[idx[v]] @ view[v] for v in t.nodes)
    return sF, sFdot, sFtheta


def frame_offsets(t: Topology, theta: np.ndarray, r) -> List[np.ndarray]:
    """theta^{r,v} for every node v (topology order), from node r's path sums."""
    view = node_view(_params(t, theta), t, r)
    return [view[v] for v in t.nodes]


def centralized_run(t: Topology, models: Sequence[ObservationModel], motion: MotionModel,
                    mu0: np.ndarray, Sigma0: np.ndarray, Ys: np.ndarray, theta: np.ndarray, r,
                    thetas=None) -> List[CentralizedFilterState]:
    """Stacked-model Kalman filter in node r's frame over a batch ``Ys`` of shape (T, N, d_y).

    ``thetas`` optionally gives a per-step parameter sequence (T, E, d).
    """
    state = CentralizedFilterState(np.asarray(mu0, float), np.asarray(Sigma0, float))
    out = []
    for n, Y in enumerate(Ys):
        th = theta if thetas is None else thetas[n]
        state = centralized_filter_step(state, list(Y), frame_offsets(t, th, r), models, motion)
        out.append(state)
    return out


def loglik_increment(t, models, motion, mu0, Sigma0, Ys, theta, r) -> float:
    """log p_theta(Y_T | Y_{1:T-1}) from the centralized filter in node r's frame."""
    states = centralized_run(t, models, motion, mu0, Sigma0, Ys, theta, r)
    prev = states[-2].loglik if len(states) > 1 else 0.0
    return states[-1].loglik - prev


def batch_loglik(t, models, motion, mu0, Sigma0, Ys, theta, r) -> float:
    return centralized_run(t, models, motion, mu0, Sigma0, Ys, theta, r)[-1].loglik


def fd_gradient(t, models, motion, mu0, Sigma0, Ys, theta, r, j, free=(0, 2), h: float = 1e-5):
    """Central differences of the one-step log-likelihood w.r.t. the free part of theta^{r,j}."""
    e = t.directed_edges.index((r, j))
    g = np.zeros(len(free))
    for k, c in enumerate(free):
        tp, tm = theta.copy(), theta.copy()
        tp[e, c] += h
        tm[e, c] -= h
        g[k] = (loglik_increment(t, models, motion, mu0, Sigma0, Ys, tp, r)
                - loglik_increment(t, models, motion, mu0, Sigma0, Ys, tm, r)) / (2 * h)
    return g


def dense_smoother(mu0, Sigma0, A, b, Q, L, l):
    """Posterior moments of x_{1:T} by conditioning the stacked prior in one shot.

    The prior is x_0 ~ N(mu0, Sigma0), x_n = A x_{n-1} + b + w_n, w_n ~ N(0, Q)
    (Q may be singular); each x_n carries a Gaussian factor
    exp(-x^T L_n x / 2 + x^T l_n). Returns means (T, d) and the joint
    covariance (T d, T d).
    """
    T, d = len(L), len(mu0)
    m = np.zeros((T, d))
    P = np.zeros((T * d, T * d))
    mean, cov = np.asarray(mu0, float), np.asarray(Sigma0, float)
    covs = []
    for n in range(T):
        mean = A @ mean + b
        cov = A @ cov @ A.T + Q
        covs.append(cov)
        m[n] = mean
    for i in range(T):
        P[i * d:(i + 1) * d, i * d:(i + 1) * d] = covs[i]
        Ak = np.eye(d)
        for k in range(i + 1, T):
            Ak = A @ Ak
            blk = Ak @ covs[i]
            P[k * d:(k + 1) * d, i * d:(i + 1) * d] = blk
            P[i * d:(i + 1) * d, k * d:(k + 1) * d] = blk.T
    Lb = np.zeros((T * d, T * d))
    for n in range(T):
        Lb[n * d:(n + 1) * d, n * d:(n + 1) * d] = L[n]
    lvec = np.concatenate(list(l))
    G = np.eye(T * d) + P @ Lb
    post_mean = np.linalg.solve(G, m.reshape(-1) + P @ lvec)
    post_cov = symmetrize(np.linalg.solve(G, P))
    return post_mean.reshape(T, d), post_cov


def running_weights(gammas: Sequence[float]) -> np.ndarray:
    """w[m] = gamma_m prod_{i>m} (1 - gamma_i): the weights of the online running average."""
    g = np.asarray(gammas, float)
    w = np.empty_like(g)
    tail = 1.0
    for m in range(len(g) - 1, -1, -1):
        w[m] = g[m] * tail
        tail *= 1.0 - g[m]
    return w


def dense_s1(mu0, Sigma0, A, b, Q, L, l, ms, gammas) -> np.ndarray:
    """S1 = sum_m w_m m_m^T E[x_m | Y_{1:T}] under the sequential-parameter posterior."""
    means, _ = dense_smoother(mu0, Sigma0, A, b, Q, L, l)
    w = running_weights(gammas)
    return sum(w[k] * ms[k].T @ means[k] for k in range(len(w)))
