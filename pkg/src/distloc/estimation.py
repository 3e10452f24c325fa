"""Online estimation of the localization parameters.

Two estimators run per directed edge (r, j), each owned by node r and fed
only by node r's filter quantities and the round-K (and round-1) messages
j -> r:

* recursive maximum likelihood: stochastic gradient ascent on the one-step
  predictive log-likelihood, carrying the derivative of the filtered mean;
* online EM: running averages of three sufficient statistics followed by a
  closed-form M-step.

Only the free components of theta (selection matrix ``E``, default the
planar position) are estimated; the rest stay exactly zero.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .filtering import StepRecord, symmetrize

_COND_LIMIT = 1e12


@dataclass(frozen=True)
class StepSchedule:
    """gamma0 for n <= hold_until, then gamma0 * (n - hold_until) ** -decay_exponent."""

    gamma0: float
    hold_until: int = 1000
    decay_exponent: float = 0.8

    def __post_init__(self):
        if not 0.5 < self.decay_exponent <= 1.0:
            raise ValueError("decay_exponent must lie in (0.5, 1]")
        if self.gamma0 < 0:
            raise ValueError("gamma0 must be non-negative")


def step_size(schedule: StepSchedule, n: int) -> float:
    if n < 1:
        raise ValueError("step index starts at 1")
    if n <= schedule.hold_until:
        return schedule.gamma0
    return schedule.gamma0 * float(n - schedule.hold_until) ** (-schedule.decay_exponent)


def burn_in_gate(n: int, burn_in: int) -> bool:
    """True when the M-step may be applied at step ``n``."""
    return n > burn_in


# ---------------------------------------------------------------------------
# recursive maximum likelihood

@dataclass
class RmlEdgeState:
    mu_dot: np.ndarray
    mu_dot_pred: np.ndarray
    z_dot: np.ndarray

    @classmethod
    def zeros(cls, state_dim: int = 4, n_free: int = 2) -> "RmlEdgeState":
        z = np.zeros((state_dim, n_free))
        return cls(z.copy(), z.copy(), z.copy())


def rml_gradient(mu_dot, A, Sigma_pred_inv, mu_pred, Sigma, z, m, mdot, mddot, E):
    """Derivative of log p(Y_n | Y_{1:n-1}) w.r.t. the free part of theta^{r,j}.

    Batched over leading axes. Returns ``(grad, mu_dot_pred, z_dot, mu_dot_new)``.
    """
    mu_dot_pred = A @ mu_dot
    z_dot = Sigma_pred_inv @ mu_dot_pred - m @ E
    mu_dot_new = Sigma @ z_dot
    mu = (Sigma @ z[..., None])[..., 0]
    grad = (-(np.swapaxes(mu_dot_pred, -1, -2) @ (Sigma_pred_inv @ mu_pred[..., None]))[..., 0]
            + (np.swapaxes(z_dot, -1, -2) @ mu[..., None])[..., 0]
            + (mdot - mddot) @ E)
    return grad, mu_dot_pred, z_dot, mu_dot_new


def rml_step(state: RmlEdgeState, A, Sigma_pred_inv, mu_pred, M, z, triple, theta_rj, gamma, E):
    """One parameter update for edge (r, j) at node r.

    ``triple`` is the round-K message j -> r. Returns the new edge state,
    theta_{n+1}^{r,j} and the raw gradient.
    """
    Sigma = symmetrize(np.linalg.inv(M))
    grad, mdp, zd, md = rml_gradient(state.mu_dot, A, Sigma_pred_inv, mu_pred, Sigma, z,
                                     triple.m, triple.mdot, triple.mddot, E)
    theta_new = np.asarray(theta_rj, float) + gamma * (E @ grad)
    return RmlEdgeState(md, mdp, zd), theta_new, grad


class RmlEstimator:
    """Distributed RML over every directed edge of a topology."""

    def __init__(self, plan, state_dim: int, E: np.ndarray, max_step: Optional[float] = None):
        self.plan = plan
        self.E = E
        # optional cap on the per-edge update norm (off by default)
        self.max_step = max_step
        n_edges = plan.n_edges
        self.mu_dot = np.zeros((n_edges, state_dim, E.shape[1]))
        self.last_grad = np.zeros((n_edges, E.shape[1]))

    def update(self, rec: StepRecord, theta: np.ndarray, gamma: float) -> np.ndarray:
        src, rev = self.plan.src, self.plan.rev
        m, mdot, mddot = rec.last
        A = rec.A if rec.A.ndim == 2 else rec.A[src]
        grad, _, _, mu_dot = rml_gradient(
            self.mu_dot, A, rec.Sigma_pred_inv[src], rec.mu_pred[src], rec.Sigma[src], rec.z[src],
            m[rev], mdot[rev], mddot[rev], self.E)
        self.mu_dot = mu_dot
        self.last_grad = grad
        step = gamma * grad
        if self.max_step is not None:
            norm = np.linalg.norm(step, axis=1, keepdims=True)
            step = step * np.minimum(1.0, self.max_step / np.maximum(norm, 1e-300))
        return theta + step @ self.E.T


# ---------------------------------------------------------------------------
# online EM

@dataclass
class EmEdgeState:
    H: np.ndarray
    h: np.ndarray
    S1: np.ndarray
    S2: np.ndarray
    S3: np.ndarray

    @classmethod
    def zeros(cls, state_dim: int = 4) -> "EmEdgeState":
        d = state_dim
        return cls(np.zeros((d, d)), np.zeros(d), np.zeros(d), np.zeros((d, d)), np.zeros(d))


def em_sigma_tilde(Sigma_prev: np.ndarray, A: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Covariance of x_{n-1} given Y_{1:n-1} and x_n: (Sigma^-1 + A^T Q^-1 A)^-1."""
    try:
        Qi = np.linalg.inv(Q)
    except np.linalg.LinAlgError as exc:
        raise ValueError("Q is singular; use em_backward_kernel") from exc
    if np.linalg.cond(Q) > _COND_LIMIT:
        raise ValueError("Q is singular; use em_backward_kernel")
    return symmetrize(np.linalg.inv(np.linalg.inv(Sigma_prev) + A.T @ Qi @ A))


def em_backward_kernel(mu_prev, Sigma_prev, A, Sigma_pred_inv, mu_pred):
    """Gaussian backward kernel p(x_{n-1} | Y_{1:n-1}, x_n) in gain form.

    Mean is ``J x_n + c`` and covariance ``Sigma_tilde``; equal to the
    information form above when Q is invertible, and still defined when Q
    is rank deficient (the constant-velocity model). Batched.
    """
    J = Sigma_prev @ np.swapaxes(A, -1, -2) @ Sigma_pred_inv
    c = mu_prev - (J @ mu_pred[..., None])[..., 0]
    Sigma_pred = np.linalg.inv(Sigma_pred_inv)
    Sigma_tilde = symmetrize(Sigma_prev - J @ Sigma_pred @ np.swapaxes(J, -1, -2))
    return J, c, Sigma_tilde


def em_stats_recursion(H, h, S2, S3, gamma, J, c, mu, m, mdot, mddot, theta_rj):
    """Running-average updates, batched over leading axes.

    The S3 increment uses mdot - mddot + m theta^{r,j}: the part of the
    incoming mddot that does not depend on theta^{r,j}.
    """
    H_new = gamma * np.swapaxes(m, -1, -2) + (1.0 - gamma) * (H @ J)
    h_new = (1.0 - gamma) * ((H @ c[..., None])[..., 0] + h)
    S1 = (H_new @ mu[..., None])[..., 0] + h_new
    S2 = gamma * m + (1.0 - gamma) * S2
    corr = (m @ theta_rj[..., None])[..., 0]
    S3 = gamma * (mdot - mddot + corr) + (1.0 - gamma) * S3
    return H_new, h_new, S1, S2, S3


def em_stats_step(state: EmEdgeState, gamma, J, c, mu, triple, theta_rj) -> EmEdgeState:
    """Statistics update for one edge (r, j) given node r's backward kernel (J, c)."""
    H, h, S1, S2, S3 = em_stats_recursion(state.H, state.h, state.S2, state.S3, gamma, J, c,
                                          np.asarray(mu, float), triple.m, triple.mdot, triple.mddot,
                                          np.asarray(theta_rj, float))
    return EmEdgeState(H, h, S1, S2, S3)


def em_mstep(S1, S2, S3, E) -> Optional[np.ndarray]:
    """theta = E (E^T S2 E)^-1 E^T (S3 - S1); None when the system is singular."""
    N = E.T @ S2 @ E
    if not np.all(np.isfinite(N)) or np.linalg.cond(N) > _COND_LIMIT:
        return None
    return E @ np.linalg.solve(N, E.T @ (S3 - S1))


def em_mstep_batch(S1, S2, S3, E):
    """Batched M-step; returns (theta_free (n, p), ok mask (n,))."""
    N = np.swapaxes(E, -1, -2) @ S2 @ E
    rhs = (S3 - S1) @ E
    ok = np.isfinite(N).all(axis=(-1, -2))
    ok &= np.linalg.cond(np.where(ok[:, None, None], N, np.eye(N.shape[-1]))) < _COND_LIMIT
    out = np.zeros(rhs.shape)
    if ok.any():
        out[ok] = np.linalg.solve(N[ok], rhs[ok][..., None])[..., 0]
    return out, ok


class EmEstimator:
    """Distributed online EM over every directed edge of a topology."""

    def __init__(self, plan, state_dim: int, E: np.ndarray, burn_in: int = 0):
        self.plan = plan
        self.E = E
        self.burn_in = int(burn_in)
        n, d = plan.n_edges, state_dim
        self.H = np.zeros((n, d, d))
        self.h = np.zeros((n, d))
        self.S1 = np.zeros((n, d))
        self.S2 = np.zeros((n, d, d))
        self.S3 = np.zeros((n, d))
        self.skipped = 0

    def update(self, rec: StepRecord, theta: np.ndarray, gamma: float, n: int) -> np.ndarray:
        src, rev = self.plan.src, self.plan.rev
        m, mdot, mddot = rec.last
        A = rec.A if rec.A.ndim == 2 else rec.A[src]
        J, c, _ = em_backward_kernel(rec.mu_prev, rec.Sigma_prev, A, rec.Sigma_pred_inv, rec.mu_pred)
        self.H, self.h, self.S1, self.S2, self.S3 = em_stats_recursion(
            self.H, self.h, self.S2, self.S3, gamma, J[src], c[src], rec.mu[src],
            m[rev], mdot[rev], mddot[rev], theta)
        if not burn_in_gate(n, self.burn_in):
            return theta
        free, ok = em_mstep_batch(self.S1, self.S2, self.S3, self.E)
        self.skipped += int((~ok).sum())
        new = theta.copy()
        new[ok] = free[ok] @ self.E.T
        return new


# ---------------------------------------------------------------------------
# offline EM (batch reference)

def batch_filter_pass(plan, motion, sensors, K, mu0, Sigma0, Ys, theta):
    """Run the distributed filter over a batch with fixed ``theta``; keep every step."""
    from .filtering import DistributedFilter

    filt = DistributedFilter(plan, motion, sensors, K, mu0, Sigma0)
    return [filt.step(Y, theta) for Y in Ys]


def offline_em_iteration(plan, motion, sensors, K, mu0, Sigma0, Ys, theta_p, E):
    """One batch EM iteration for every directed edge simultaneously.

    E-step: distributed filter at ``theta_p`` and an RTS pass at each node.
    M-step per edge (r, j), solving
        (sum_n m_n) theta = sum_n (mdot_n - m_n mu_{n|T}^r - mddot_n + m_n theta_p^{r,j})
    over the free components. Returns ``(theta_{p+1}, n_skipped)``.
    """
    from .filtering import rts_smooth

    theta_p = np.asarray(theta_p, float)
    recs = batch_filter_pass(plan, motion, sensors, K, mu0, Sigma0, Ys, theta_p)
    mus = np.stack([r.mu for r in recs], axis=1)            # (N, T, d)
    Sigmas = np.stack([r.Sigma for r in recs], axis=1)
    mu_preds = np.stack([r.mu_pred for r in recs], axis=1)
    Sigma_preds = np.stack([r.Sigma_pred for r in recs], axis=1)
    smoothed = np.stack([rts_smooth(mus[v], Sigmas[v], mu_preds[v], Sigma_preds[v], motion.A)[0]
                         for v in range(plan.n_nodes)])     # (N, T, d)
    src, rev = plan.src, plan.rev
    lhs = np.zeros((plan.n_edges,) + recs[0].last[0].shape[1:])
    rhs = np.zeros((plan.n_edges, theta_p.shape[1]))
    for n, rec in enumerate(recs):
        m, mdot, mddot = (a[rev] for a in rec.last)
        mu_s = smoothed[src, n]
        lhs += m
        rhs += (mdot - (m @ mu_s[..., None])[..., 0] - mddot + (m @ theta_p[..., None])[..., 0])
    free, ok = em_mstep_batch(np.zeros_like(rhs), lhs, rhs, E)
    new = theta_p.copy()
    new[ok] = free[ok] @ E.T
    return new, int((~ok).sum())
