"""Target motion and sensor observation models.

States are expressed in a node's local frame: ``x[0]`` and ``x[2]`` are the
planar position, ``x[1]`` and ``x[3]`` the velocity (for the 4-d model).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np


class SingularGeometryError(ValueError):
    """Bearing undefined because the target sits on the sensor."""


@dataclass(frozen=True)
class MotionModel:
    A: np.ndarray
    B: np.ndarray
    Qtilde: np.ndarray
    b: np.ndarray
    tau: float = 0.0
    sigma_x: float = 0.0

    @property
    def state_dim(self) -> int:
        return self.A.shape[0]

    @property
    def noise_dim(self) -> int:
        return self.B.shape[1]

    @property
    def Q(self) -> np.ndarray:
        Q = self.B @ self.Qtilde @ self.B.T
        return 0.5 * (Q + Q.T)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.A @ x + self.b


def build_cv_model(tau: float, sigma_x: float, allow_zero: bool = False) -> MotionModel:
    """Planar constant-velocity model driven by white acceleration noise.

    ``allow_zero`` admits ``tau == 0`` (A = I, B = 0) for degenerate tests.
    """
    if tau < 0 or (tau == 0 and not allow_zero):
        raise ValueError(f"tau must be positive, got {tau}")
    if sigma_x < 0:
        raise ValueError(f"sigma_x must be non-negative, got {sigma_x}")
    blk_A = np.array([[1.0, tau], [0.0, 1.0]])
    blk_B = np.array([tau**2 / 2.0, tau])
    A = np.zeros((4, 4))
    A[:2, :2] = blk_A
    A[2:, 2:] = blk_A
    B = np.zeros((4, 2))
    B[:2, 0] = blk_B
    B[2:, 1] = blk_B
    return MotionModel(A=A, B=B, Qtilde=sigma_x**2 * np.eye(2), b=np.zeros(4),
                       tau=float(tau), sigma_x=float(sigma_x))


def build_scalar_model(a: float = 1.0, b_in: float = 1.0, q: float = 1.0) -> MotionModel:
    """One-dimensional random walk x_n = a x_{n-1} + b_in v_n, Var(v_n) = q."""
    return MotionModel(A=np.array([[a]]), B=np.array([[b_in]]), Qtilde=np.array([[q]]),
                       b=np.zeros(1), sigma_x=float(np.sqrt(q)))


def simulate_target(model: MotionModel, steps: int, x0, rng_seed=None) -> np.ndarray:
    """Return ``(steps, state_dim)`` array of x_1 .. x_steps started from ``x0``.

    ``rng_seed`` may be an int, a SeedSequence or a ``np.random.Generator``.
    All driving noise is drawn in one block, so the trajectory depends only
    on the seed.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    rng = np.random.default_rng(rng_seed)
    x = np.asarray(x0, dtype=float).copy()
    if x.shape != (model.state_dim,):
        raise ValueError(f"x0 must have shape ({model.state_dim},)")
    L = np.linalg.cholesky(model.Qtilde) if np.any(model.Qtilde) else np.zeros_like(model.Qtilde)
    v = rng.standard_normal((steps, model.noise_dim)) @ L.T
    out = np.empty((steps, model.state_dim))
    for n in range(steps):
        x = model.A @ x + model.b + model.B @ v[n]
        out[n] = x
    return out


@dataclass(frozen=True)
class ObservationModel:
    kind: str
    R: np.ndarray
    C: Optional[np.ndarray] = None
    d: Optional[np.ndarray] = None
    alpha: float = 1.0
    sigma_w: float = 0.0

    def __post_init__(self):
        if self.kind not in ("linear", "bearings"):
            raise ValueError(f"unknown observation kind {self.kind!r}")
        if self.kind == "linear" and self.C is None:
            raise ValueError("linear observation model needs C")

    @property
    def obs_dim(self) -> int:
        return self.R.shape[0]


def linear_position_observation(alpha: float, sigma_y: float) -> ObservationModel:
    C = alpha * np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]])
    return ObservationModel(kind="linear", C=C, d=np.zeros(2), R=sigma_y**2 * np.eye(2),
                            alpha=float(alpha))


def scalar_observation(c: float = 1.0, r: float = 1.0) -> ObservationModel:
    return ObservationModel(kind="linear", C=np.array([[c]]), d=np.zeros(1),
                            R=np.array([[r]]), alpha=float(c))


def bearings_observation(sigma_w: float) -> ObservationModel:
    return ObservationModel(kind="bearings", R=np.array([[sigma_w**2]]), sigma_w=float(sigma_w))


def wrap_angle(a):
    """Map angles to [-pi, pi)."""
    return (np.asarray(a) + np.pi) % (2.0 * np.pi) - np.pi


def bearing(x: np.ndarray) -> float:
    # arctan2(x1, x3): angle measured from the second position axis
    if x[0] == 0.0 and x[2] == 0.0:
        raise SingularGeometryError("bearing undefined at the sensor origin")
    return float(np.arctan2(x[0], x[2]))


def measurement_function(obs: ObservationModel, x: np.ndarray) -> np.ndarray:
    """Noise-free observation psi(x)."""
    x = np.asarray(x, dtype=float)
    if obs.kind == "linear":
        d = obs.d if obs.d is not None else 0.0
        return obs.C @ x + d
    if x[2] == 0.0:
        raise SingularGeometryError("bearings model requires x(3) != 0")
    return np.array([bearing(x)])


def observe(obs: ObservationModel, x_local: np.ndarray, rng=None) -> np.ndarray:
    """Draw an observation of ``x_local``; noise-free when ``rng`` is None."""
    y = measurement_function(obs, x_local)
    if rng is None:
        return y
    rng = np.random.default_rng(rng)
    w = rng.standard_normal(obs.obs_dim) @ np.linalg.cholesky(obs.R).T
    y = y + w
    if obs.kind == "bearings":
        y = wrap_angle(y)
    return y


@dataclass(frozen=True)
class Linearization:
    C_eff: Optional[np.ndarray] = None
    d_eff: Optional[np.ndarray] = None
    A_eff: Optional[np.ndarray] = None
    b_eff: Optional[np.ndarray] = None


def bearing_jacobian(x: np.ndarray) -> np.ndarray:
    r2 = x[0] ** 2 + x[2] ** 2
    if r2 == 0.0:
        raise SingularGeometryError("bearing Jacobian undefined at the sensor origin")
    J = np.zeros((1, x.shape[0]))
    J[0, 0] = x[2] / r2
    J[0, 2] = -x[0] / r2
    return J


def linearize_observation(obs: ObservationModel, mu_pred: np.ndarray) -> Linearization:
    """First-order expansion of the observation function about ``mu_pred``."""
    if obs.kind == "linear":
        d = obs.d if obs.d is not None else np.zeros(obs.obs_dim)
        return Linearization(C_eff=obs.C, d_eff=d)
    mu_pred = np.asarray(mu_pred, dtype=float)
    if mu_pred[2] == 0.0:
        raise SingularGeometryError("bearings model requires mu_pred(3) != 0")
    C = bearing_jacobian(mu_pred)
    d = np.array([bearing(mu_pred)]) - C @ mu_pred
    return Linearization(C_eff=C, d_eff=d)


def linearize_transition(phi, mu_filt: np.ndarray,
                         jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = None) -> Linearization:
    """First-order expansion of the transition ``phi`` about ``mu_filt``.

    ``phi`` is a MotionModel (passed through exactly) or a callable; a
    callable needs its ``jacobian`` unless it is affine, in which case the
    Jacobian is recovered column by column from unit perturbations.
    """
    mu_filt = np.asarray(mu_filt, dtype=float)
    if isinstance(phi, MotionModel):
        return Linearization(A_eff=phi.A, b_eff=phi.b)
    if jacobian is not None:
        A = np.atleast_2d(jacobian(mu_filt))
    else:
        f0 = np.asarray(phi(np.zeros_like(mu_filt)), dtype=float)
        A = np.column_stack([np.asarray(phi(e), dtype=float) - f0 for e in np.eye(mu_filt.shape[0])])
    b = np.asarray(phi(mu_filt), dtype=float) - A @ mu_filt
    return Linearization(A_eff=A, b_eff=b)
