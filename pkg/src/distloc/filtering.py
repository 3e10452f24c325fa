"""Distributed joint Kalman filtering in information form, plus centralized oracles.

Array shapes follow the convention ``(N, d)`` for per-node means and
``(N, d, d)`` for per-node covariances; all kernels broadcast, so a single
node is just ``N`` absent.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, Mapping, Optional, Sequence

import numpy as np

from .messaging import MessagePlan, MessageTriple, pass_messages
from .model import (MotionModel, ObservationModel, SingularGeometryError, linearize_observation,
                    linearize_transition, wrap_angle)


class FilterAbort(RuntimeError):
    """Posterior precision lost positive definiteness."""

    def __init__(self, msg: str, step: Optional[int] = None):
        super().__init__(msg if step is None else f"step {step}: {msg}")
        self.step = step


def symmetrize(S: np.ndarray) -> np.ndarray:
    return 0.5 * (S + np.swapaxes(S, -1, -2))


def spd_inverse(M: np.ndarray, what: str = "matrix") -> np.ndarray:
    """Inverse of a (stack of) SPD matrices; raises FilterAbort otherwise."""
    M = symmetrize(M)
    try:
        np.linalg.cholesky(M)
    except np.linalg.LinAlgError as exc:
        raise FilterAbort(f"{what} is not positive definite") from exc
    return symmetrize(np.linalg.inv(M))


# ---------------------------------------------------------------------------
# local sufficient terms

def local_terms(C: np.ndarray, R: np.ndarray, Y: np.ndarray, d: np.ndarray):
    """F = C^T R^-1 C and Fdot = C^T R^-1 (Y - d), batched over leading axes."""
    CtRi = np.swapaxes(C, -1, -2) @ np.linalg.inv(R)
    F = symmetrize(CtRi @ C)
    Fdot = (CtRi @ (Y - d)[..., None])[..., 0]
    return F, Fdot


class LinearSensors:
    """Per-node linear observation models stacked for the array kernels."""

    def __init__(self, models: Sequence[ObservationModel]):
        self.models = list(models)
        self.C = np.array([m.C for m in models], dtype=float)
        self.d = np.array([m.d if m.d is not None else np.zeros(m.obs_dim) for m in models], dtype=float)
        self.R = np.array([m.R for m in models], dtype=float)

    def terms(self, Y: np.ndarray, mu_pred: np.ndarray):
        return local_terms(self.C, self.R, Y, self.d)


class EkfSensors:
    """Observation models re-linearized at every node's predicted mean.

    Works for any mix of model kinds; for purely linear models the result is
    bitwise identical to ``LinearSensors``.
    """

    def __init__(self, models: Sequence[ObservationModel]):
        self.models = list(models)
        self.R = np.array([m.R for m in models], dtype=float)
        self.all_bearings = all(m.kind == "bearings" for m in models)

    def linearize(self, mu_pred: np.ndarray):
        if self.all_bearings:
            x1, x3 = mu_pred[:, 0], mu_pred[:, 2]
            if np.any(x3 == 0.0):
                raise SingularGeometryError("bearings model requires mu_pred(3) != 0")
            r2 = x1**2 + x3**2
            C = np.zeros((mu_pred.shape[0], 1, mu_pred.shape[1]))
            C[:, 0, 0] = x3 / r2
            C[:, 0, 2] = -x1 / r2
            psi = np.arctan2(x1, x3)[:, None]
            d = psi - (C @ mu_pred[..., None])[..., 0]
            return C, d, psi
        lins = [linearize_observation(m, mu) for m, mu in zip(self.models, mu_pred)]
        C = np.array([lin.C_eff for lin in lins])
        d = np.array([lin.d_eff for lin in lins])
        return C, d, None

    def terms(self, Y: np.ndarray, mu_pred: np.ndarray):
        C, d, psi = self.linearize(mu_pred)
        if psi is not None:
            # bearing residuals are taken on the circle
            Y = psi + wrap_angle(Y - psi)
        return local_terms(C, self.R, Y, d)


# ---------------------------------------------------------------------------
# per-node filter

@dataclass
class NodeFilterState:
    mu: np.ndarray
    Sigma: np.ndarray
    mu_pred: Optional[np.ndarray] = None
    Sigma_pred: Optional[np.ndarray] = None
    M: Optional[np.ndarray] = None
    z: Optional[np.ndarray] = None


def predict(state: NodeFilterState, model: MotionModel, b_eff=None, A=None) -> NodeFilterState:
    """Time update; ``A``/``b_eff`` override the model's (linearized transitions)."""
    A = model.A if A is None else A
    b = model.b if b_eff is None else b_eff
    mu_pred = A @ state.mu + b
    Sigma_pred = symmetrize(A @ state.Sigma @ A.T + model.Q)
    return replace(state, mu_pred=mu_pred, Sigma_pred=Sigma_pred)


def info_update(mu_pred, Sigma_pred, F_loc, Fdot_loc, m_in, mdot_in, mddot_in):
    """Fuse prediction, local terms and summed neighbor messages.

    Returns ``(M, z, Sigma, mu, Sigma_pred_inv)``.
    """
    Sp_inv = spd_inverse(Sigma_pred, "predicted covariance")
    M = symmetrize(Sp_inv + F_loc + m_in)
    z = (Sp_inv @ mu_pred[..., None])[..., 0] + Fdot_loc + mdot_in - mddot_in
    Sigma = spd_inverse(M, "posterior precision M")
    mu = (Sigma @ z[..., None])[..., 0]
    return M, z, Sigma, mu, Sp_inv


def update(state: NodeFilterState, C, R, Y, d, neighbor_triples: Sequence[MessageTriple]) -> NodeFilterState:
    """Measurement update at one node from its own data and round-K messages j -> r."""
    F, Fdot = local_terms(np.asarray(C, float), np.asarray(R, float), np.asarray(Y, float),
                          np.zeros(np.shape(R)[0]) if d is None else np.asarray(d, float))
    dim = state.mu_pred.shape[0]
    m_in = np.zeros((dim, dim))
    mdot_in = np.zeros(dim)
    mddot_in = np.zeros(dim)
    for t in neighbor_triples:
        m_in = m_in + t.m
        mdot_in = mdot_in + t.mdot
        mddot_in = mddot_in + t.mddot
    M, z, Sigma, mu, _ = info_update(state.mu_pred, state.Sigma_pred, F, Fdot, m_in, mdot_in, mddot_in)
    return replace(state, mu=mu, Sigma=Sigma, M=M, z=z)


def ekf_step(state: NodeFilterState, motion, obs: ObservationModel, Y, neighbor_triples,
             motion_model: Optional[MotionModel] = None, jacobian=None) -> NodeFilterState:
    """One EKF predict/update at a single node.

    ``motion`` is a MotionModel or a callable transition (then
    ``motion_model`` supplies Q and ``jacobian`` its derivative). The
    neighbor messages must already be built from linearized local terms.
    """
    model = motion if isinstance(motion, MotionModel) else motion_model
    lin_t = linearize_transition(motion, state.mu, jacobian)
    pred = predict(state, model, b_eff=lin_t.b_eff, A=lin_t.A_eff)
    lin_o = linearize_observation(obs, pred.mu_pred)
    Y = np.asarray(Y, dtype=float)
    if obs.kind == "bearings":
        psi = lin_o.C_eff @ pred.mu_pred + lin_o.d_eff
        Y = psi + wrap_angle(Y - psi)
    return update(pred, lin_o.C_eff, obs.R, Y, lin_o.d_eff, neighbor_triples)


# ---------------------------------------------------------------------------
# network-level engine

@dataclass
class StepRecord:
    """Everything the parameter estimators need from one filter step."""

    mu_prev: np.ndarray
    Sigma_prev: np.ndarray
    A: np.ndarray
    b: np.ndarray
    mu_pred: np.ndarray
    Sigma_pred: np.ndarray
    Sigma_pred_inv: np.ndarray
    M: np.ndarray
    z: np.ndarray
    mu: np.ndarray
    Sigma: np.ndarray
    first: tuple
    last: tuple


class DistributedFilter:
    """All nodes' filters advanced in lockstep.

    Each step runs: predict at every node, local terms, ``K`` message rounds
    with the current parameters, then the information-form update.
    """

    def __init__(self, plan: MessagePlan, motion: MotionModel, sensors, K: int,
                 mu0: np.ndarray, Sigma0: np.ndarray):
        if K < 1:
            raise ValueError("K must be >= 1")
        self.plan = plan
        self.motion = motion
        self.sensors = sensors
        self.K = int(K)
        N = plan.n_nodes
        d = motion.state_dim
        self.mu = np.broadcast_to(np.asarray(mu0, float), (N, d)).copy()
        self.Sigma = np.broadcast_to(np.asarray(Sigma0, float), (N, d, d)).copy()
        self.n = 0

    def step(self, Y: np.ndarray, theta: np.ndarray) -> StepRecord:
        self.n += 1
        A, b, Q = self.motion.A, self.motion.b, self.motion.Q
        mu_prev, Sigma_prev = self.mu, self.Sigma
        mu_pred = mu_prev @ A.T + b
        Sigma_pred = symmetrize(A @ Sigma_prev @ A.T + Q)
        try:
            F, Fdot = self.sensors.terms(Y, mu_pred)
            first, last = pass_messages(self.plan, F, Fdot, theta, self.K)
            G = self.plan.incoming
            m, mdot, mddot = last
            M, z, Sigma, mu, Sp_inv = info_update(
                mu_pred, Sigma_pred, F, Fdot,
                np.tensordot(G, m, axes=1), G @ mdot, G @ mddot)
        except FilterAbort as exc:
            raise FilterAbort(str(exc), self.n) from exc
        except SingularGeometryError as exc:
            raise FilterAbort(f"singular bearing geometry: {exc}", self.n) from exc
        self.mu, self.Sigma = mu, Sigma
        return StepRecord(mu_prev, Sigma_prev, A, b, mu_pred, Sigma_pred, Sp_inv, M, z, mu, Sigma,
                          first, last)


# ---------------------------------------------------------------------------
# centralized oracles

@dataclass
class CentralizedFilterState:
    mu: np.ndarray
    Sigma: np.ndarray
    loglik: float = 0.0
    mu_pred: Optional[np.ndarray] = None
    Sigma_pred: Optional[np.ndarray] = None
    history: list = field(default_factory=list)


def stacked_observation(models: Sequence[ObservationModel], offsets: Sequence[np.ndarray]):
    """Stack Y^i = C^i (x + theta^{r,i}) + d^i into one linear model in node r's frame."""
    C = np.vstack([m.C for m in models])
    c = np.concatenate([m.C @ off + (m.d if m.d is not None else 0.0) for m, off in zip(models, offsets)])
    R = np.zeros((C.shape[0], C.shape[0]))
    k = 0
    for m in models:
        q = m.obs_dim
        R[k:k + q, k:k + q] = m.R
        k += q
    return C, c, R


def centralized_filter_step(state: CentralizedFilterState, Ys: Sequence[np.ndarray],
                            offsets: Sequence[np.ndarray], models: Sequence[ObservationModel],
                            motion: MotionModel, keep_history: bool = False) -> CentralizedFilterState:
    """Covariance-form Kalman step on the stacked network observation.

    ``offsets[i]`` is theta^{r,i} for the reference node r; ``Ys`` and
    ``models`` follow the same node order. Accumulates log p(Y_n | Y_{1:n-1}).
    """
    C, c, R = stacked_observation(models, offsets)
    y = np.concatenate([np.atleast_1d(np.asarray(v, float)) for v in Ys])
    A = motion.A
    mu_p = A @ state.mu + motion.b
    S_p = symmetrize(A @ state.Sigma @ A.T + motion.Q)
    v = y - C @ mu_p - c
    S = symmetrize(C @ S_p @ C.T + R)
    L = np.linalg.cholesky(S)
    Kg = np.linalg.solve(S, C @ S_p).T
    mu = mu_p + Kg @ v
    IKC = np.eye(A.shape[0]) - Kg @ C
    Sigma = symmetrize(IKC @ S_p @ IKC.T + Kg @ R @ Kg.T)
    alpha = np.linalg.solve(L, v)
    ll = -0.5 * (alpha @ alpha) - np.log(np.diag(L)).sum() - 0.5 * len(y) * np.log(2 * np.pi)
    new = CentralizedFilterState(mu, Sigma, state.loglik + ll, mu_p, S_p, state.history)
    if keep_history:
        new.history = state.history + [(mu, Sigma, mu_p, S_p, ll)]
    return new


def rts_smooth(mus: np.ndarray, Sigmas: np.ndarray, mu_preds: np.ndarray, Sigma_preds: np.ndarray,
               A: np.ndarray):
    """Rauch-Tung-Striebel backward pass.

    ``mu_preds[n]``/``Sigma_preds[n]`` are the one-step predictions for the
    time of ``mus[n]``. Returns smoothed means and covariances.
    """
    T = mus.shape[0]
    ms = mus.copy()
    Ps = Sigmas.copy()
    for n in range(T - 2, -1, -1):
        J = np.linalg.solve(Sigma_preds[n + 1], A @ Sigmas[n]).T
        ms[n] = mus[n] + J @ (ms[n + 1] - mu_preds[n + 1])
        Ps[n] = symmetrize(Sigmas[n] + J @ (Ps[n + 1] - Sigma_preds[n + 1]) @ J.T)
    return ms, Ps
