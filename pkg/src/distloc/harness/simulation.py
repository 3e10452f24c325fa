"""Monte Carlo orchestration of tracking and self-localization runs."""
from __future__ import annotations

import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from ..estimation import EmEstimator, RmlEstimator, StepSchedule, step_size
from ..filtering import DistributedFilter, EkfSensors, LinearSensors
from ..messaging import plan_for
from ..model import (MotionModel, ObservationModel, bearings_observation, build_cv_model,
                     build_scalar_model, linear_position_observation, scalar_observation,
                     simulate_target, wrap_angle)
from ..network import (LocalizationParams, Topology, build_topology, graph_diameter, position_mask,
                       selection_matrix, truth_from_positions)
from .config import ScenarioConfig

log = logging.getLogger(__name__)


@dataclass
class Scenario:
    """Deterministic objects built from a config (everything except the noise)."""

    config: ScenarioConfig
    topology: Topology
    motion: MotionModel
    truth: LocalizationParams
    free: tuple

    @property
    def state_dim(self) -> int:
        return self.motion.state_dim

    @property
    def E(self) -> np.ndarray:
        return selection_matrix(self.free, self.state_dim)


@dataclass
class RunResults:
    """One Monte Carlo run.

    ``theta_err[n]`` holds theta* - theta on the free components after the
    parameter update at step n+1 (rows follow ``edges``); ``theta_err0`` is
    the error of the initial guess. ``track_err[n, v]`` is the position error
    of node v's filtered mean at step n+1.
    """

    run: int
    edges: List[tuple]
    nodes: List
    theta_err0: np.ndarray
    theta_err: np.ndarray
    track_err: np.ndarray
    theta_final: np.ndarray
    alpha: Dict
    diagnostics: Dict = field(default_factory=dict)


def build_scenario(cfg: ScenarioConfig) -> Scenario:
    topo = build_topology(cfg.network.nodes, cfg.network.edges)
    if cfg.motion.kind == "cv":
        motion = build_cv_model(cfg.motion.tau, cfg.motion.sigma_x)
    else:
        motion = build_scalar_model(q=cfg.motion.sigma_x**2)
    free = position_mask(motion.state_dim)
    truth = truth_from_positions(cfg.network.positions, pairs=topo.directed_edges,
                                 state_dim=motion.state_dim, free=free)
    if not topo.is_tree and cfg.K > min_cycle_safe_k(topo):
        warnings.warn(f"{cfg.name}: K={cfg.K} on a cyclic graph counts some nodes more than once "
                      f"(girth-safe K <= {min_cycle_safe_k(topo)})", stacklevel=2)
    return Scenario(cfg, topo, motion, truth, free)


def min_cycle_safe_k(t: Topology) -> int:
    """Largest K whose walks cannot reach a node twice, (girth - 1) // 2.

    Two distinct non-backtracking walks of length <= K from one node to
    another close a cycle of length <= 2K.
    """
    from ..network import bfs_distances

    girth = None
    for u, v in t.edges:
        # shortest cycle through edge (u, v): dist(u, v) in the graph without it
        rest = build_topology(t.nodes, [e for e in t.edges if e != (u, v)]) if _stays_connected(t, (u, v)) else None
        if rest is None:
            continue
        c = bfs_distances(rest, u)[v] + 1
        girth = c if girth is None else min(girth, c)
    if girth is None:
        return graph_diameter(t)
    return max(1, (girth - 1) // 2)


def _stays_connected(t: Topology, edge) -> bool:
    from ..network import TopologyError
    try:
        build_topology(t.nodes, [e for e in t.edges if e != edge])
        return True
    except TopologyError:
        return False


def observation_models(scn: Scenario, alpha: Dict) -> List[ObservationModel]:
    o = scn.config.observation
    out = []
    for v in scn.topology.nodes:
        if o.kind == "linear":
            out.append(linear_position_observation(alpha[v], o.sigma_y))
        elif o.kind == "bearings":
            out.append(bearings_observation(o.sigma_w))
        else:
            out.append(scalar_observation(alpha[v], o.r))
    return out


def draw_alpha(scn: Scenario, rng: np.random.Generator) -> Dict:
    o = scn.config.observation
    if o.kind == "bearings":
        return {v: 1.0 for v in scn.topology.nodes}
    if o.kind == "scalar":
        return {v: (o.alpha or {}).get(v, o.c) for v in scn.topology.nodes}
    lo, hi = o.alpha_range
    drawn = rng.uniform(lo, hi, size=len(scn.topology.nodes))
    fixed = o.alpha or {}
    return {v: fixed.get(v, float(a)) for v, a in zip(scn.topology.nodes, drawn)}


def node_offsets(scn: Scenario) -> np.ndarray:
    """(N, d) vectors p_v on the free components, so x^v = x_global - p_v."""
    P = np.zeros((len(scn.topology.nodes), scn.state_dim))
    for k, v in enumerate(scn.topology.nodes):
        P[k, list(scn.free)] = scn.config.network.positions[v]
    return P


def generate_observations(scn: Scenario, models: List[ObservationModel], x_global: np.ndarray,
                          rng: np.random.Generator) -> np.ndarray:
    """(T, N, d_y) observations of one trajectory, each in its node's frame."""
    x_local = x_global[:, None, :] - node_offsets(scn)[None]
    T, N = x_local.shape[:2]
    dy = models[0].obs_dim
    noise = rng.standard_normal((T, N, dy))
    chol = np.array([np.linalg.cholesky(m.R) for m in models])
    noise = np.einsum("vab,tvb->tva", chol, noise)
    if models[0].kind == "bearings":
        return wrap_angle(np.arctan2(x_local[..., 0], x_local[..., 2])[..., None] + noise)
    C = np.array([m.C for m in models])
    d = np.array([m.d for m in models])
    return np.einsum("vab,tvb->tva", C, x_local) + d[None] + noise


def initial_means(scn: Scenario, models, Y1: np.ndarray, x0: np.ndarray) -> np.ndarray:
    policy = scn.config.prior.mu0
    N, d = len(models), scn.state_dim
    if policy == "truth":
        return x0[None, :] - node_offsets(scn)
    if policy == "backproject" and models[0].kind == "linear":
        return np.array([np.linalg.pinv(m.C) @ (y - m.d) for m, y in zip(models, Y1)])
    return np.zeros((N, d))


def default_x0(scn: Scenario) -> np.ndarray:
    if scn.config.motion.x0 is not None:
        return np.asarray(scn.config.motion.x0, dtype=float)
    # centroid of the sensors, at rest
    x0 = np.zeros(scn.state_dim)
    x0[list(scn.free)] = np.mean([scn.config.network.positions[v] for v in scn.topology.nodes], axis=0)
    return x0


@dataclass
class RunSetup:
    """Everything drawn for one run before any filtering happens."""

    scenario: Scenario
    plan: object
    alpha: Dict
    models: List[ObservationModel]
    sensors: object
    x_global: np.ndarray
    Y: np.ndarray
    mu0: np.ndarray
    Sigma0: np.ndarray
    truth: np.ndarray


def prepare_run(cfg: ScenarioConfig, run: int = 0) -> RunSetup:
    """Draw gains, trajectory and observations; deterministic in ``(cfg.seed, run)``."""
    scn = build_scenario(cfg)
    ss = np.random.SeedSequence([int(cfg.seed), int(run)])
    rng_alpha, rng_traj, rng_obs = (np.random.default_rng(s) for s in ss.spawn(3))
    alpha = draw_alpha(scn, rng_alpha)
    models = observation_models(scn, alpha)
    x0 = default_x0(scn)
    x_global = simulate_target(scn.motion, cfg.steps, x0, rng_traj)
    Y = generate_observations(scn, models, x_global, rng_obs)
    sensors = EkfSensors(models) if cfg.observation.kind == "bearings" else LinearSensors(models)
    mu0 = initial_means(scn, models, Y[0], x0)
    Sigma0 = cfg.prior.kappa * np.eye(scn.state_dim)
    return RunSetup(scn, plan_for(scn.topology), alpha, models, sensors, x_global, Y, mu0, Sigma0,
                    scn.truth.to_array(scn.topology))


def run_single(cfg: ScenarioConfig, run: int = 0, record_theta: bool = False) -> RunResults:
    """Simulate one run; deterministic in ``(cfg.seed, run)``."""
    setup = prepare_run(cfg, run)
    scn, plan = setup.scenario, setup.plan
    topo = scn.topology
    E = scn.E
    Y, x_global, alpha = setup.Y, setup.x_global, setup.alpha
    filt = DistributedFilter(plan, scn.motion, setup.sensors, cfg.K, setup.mu0, setup.Sigma0)

    truth_arr = setup.truth
    theta = truth_arr.copy() if cfg.theta0 == "truth" else np.zeros_like(truth_arr)
    est_cfg = cfg.estimator
    schedule = StepSchedule(est_cfg.gamma0, est_cfg.hold_until, est_cfg.decay_exponent)
    if est_cfg.kind == "rml":
        est = RmlEstimator(plan, scn.state_dim, E, est_cfg.max_step)
    elif est_cfg.kind == "em":
        est = EmEstimator(plan, scn.state_dim, E, est_cfg.burn_in)
    else:
        est = None

    T = cfg.steps
    free_idx = list(scn.free)
    err0 = (truth_arr - theta)[:, free_idx]
    theta_err = np.empty((T, plan.n_edges, len(free_idx)))
    track_err = np.empty((T, plan.n_nodes))
    offsets = node_offsets(scn)
    history = np.empty((T, plan.n_edges, scn.state_dim)) if record_theta else None
    for n in range(1, T + 1):
        rec = filt.step(Y[n - 1], theta)
        if est_cfg.kind == "rml":
            theta = est.update(rec, theta, step_size(schedule, n + 1))
        elif est_cfg.kind == "em":
            theta = est.update(rec, theta, step_size(schedule, n), n)
        if not np.all(np.isfinite(theta)):
            from ..filtering import FilterAbort
            raise FilterAbort("parameter estimate diverged to a non-finite value", n)
        theta_err[n - 1] = (truth_arr - theta)[:, free_idx]
        x_loc = x_global[n - 1][None, :] - offsets
        track_err[n - 1] = np.linalg.norm((rec.mu - x_loc)[:, free_idx], axis=1)
        if history is not None:
            history[n - 1] = theta

    diagnostics = {"skipped_msteps": getattr(est, "skipped", 0)}
    res = RunResults(run=run, edges=list(topo.directed_edges), nodes=list(topo.nodes),
                     theta_err0=err0, theta_err=theta_err, track_err=track_err,
                     theta_final=theta, alpha=alpha, diagnostics=diagnostics)
    anti = theta + theta[plan.rev]
    res.diagnostics["antisymmetry_residual_max"] = float(np.abs(anti).max()) if len(anti) else 0.0
    if not topo.is_tree:
        from ..messaging import coverage_counts

        cover = coverage_counts(plan, cfg.K)
        res.diagnostics["reached"] = {str(r): {str(v): int(c) for v, c in zip(topo.nodes, row) if c}
                                      for r, row in zip(topo.nodes, cover)}
    if history is not None:
        res.diagnostics["theta_history"] = history
    return res


def _run_job(args):
    cfg, run = args
    return run_single(cfg, run)


def run_scenario(cfg: ScenarioConfig, workers: int = 1) -> List[RunResults]:
    """All ``cfg.runs`` runs; runs are independent and may use a process pool."""
    jobs = [(cfg, r) for r in range(cfg.runs)]
    if workers > 1 and cfg.runs > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run_job, jobs))
    out = []
    for job in jobs:
        log.info("%s: run %d/%d", cfg.name, job[1] + 1, cfg.runs)
        out.append(_run_job(job))
    return out
