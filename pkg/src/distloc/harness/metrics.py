"""Summary statistics over Monte Carlo runs."""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from .config import ScenarioConfig
from .simulation import RunResults, run_scenario


def rmse_series(results: Sequence[RunResults], include_initial: bool = False) -> np.ndarray:
    """Root mean squared parameter error per step, averaged over runs and directed edges.

    With ``include_initial`` the error of the starting guess is prepended,
    so entry 0 is the step-0 value.
    """
    if not results:
        raise ValueError("rmse_series needs at least one run")
    sq = []
    for r in results:
        errs = r.theta_err
        if include_initial:
            errs = np.concatenate([r.theta_err0[None], errs], axis=0)
        sq.append(np.sum(errs**2, axis=-1))          # (T, E)
    sq = np.stack(sq)                                 # (runs, T, E)
    return np.sqrt(sq.mean(axis=(0, 2)))


@dataclass
class TrackingRow:
    nodes: int
    mean_abs_error: float
    std_error: float
    runs: int


def chain_config(template: ScenarioConfig, length: int) -> ScenarioConfig:
    """Template with its network replaced by a chain 1 - 2 - ... - length."""
    nodes = list(range(1, length + 1))
    edges = [[v, v + 1] for v in nodes[:-1]]
    dim = 1 if template.motion.kind == "scalar" else 2
    positions = {v: [0.0] * dim for v in nodes}
    return template.replace(K=max(length - 1, 1),
                            **{"network.nodes": nodes, "network.edges": edges,
                               "network.positions": positions})


def tracking_error_vs_nodes(lengths: Sequence[int], template: ScenarioConfig,
                            workers: int = 1) -> List[TrackingRow]:
    """Average absolute tracking error of node 1 against chain length.

    Each run contributes its time-averaged error, so the standard error is
    taken across runs (the runs are independent, the steps are not).
    """
    rows = []
    for length in lengths:
        cfg = chain_config(template, length)
        per_run = np.array([r.track_err[:, 0].mean() for r in run_scenario(cfg, workers=workers)])
        se = per_run.std(ddof=1) / np.sqrt(len(per_run)) if len(per_run) > 1 else 0.0
        rows.append(TrackingRow(length, float(per_run.mean()), float(se), len(per_run)))
    return rows
