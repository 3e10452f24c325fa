"""Scenario configuration: JSON documents validated into dataclasses."""
from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from ..network import build_topology, graph_diameter


class ConfigError(ValueError):
    def __init__(self, field_path: str, msg: str):
        super().__init__(f"{field_path}: {msg}")
        self.field = field_path


@dataclass
class NetworkConfig:
    nodes: List[Any]
    edges: List[Tuple[Any, Any]]
    positions: Dict[Any, List[float]]


@dataclass
class MotionConfig:
    kind: str = "cv"            # "cv" (4-d constant velocity) or "scalar"
    tau: float = 0.01
    sigma_x: float = 1.0
    x0: Optional[List[float]] = None


@dataclass
class ObservationConfig:
    kind: str = "linear"        # "linear", "bearings" or "scalar"
    sigma_y: float = 0.5
    sigma_w: float = 0.35
    alpha: Optional[Dict[Any, float]] = None
    alpha_range: Tuple[float, float] = (0.75, 1.25)
    c: float = 1.0
    r: float = 1.0


@dataclass
class EstimatorConfig:
    kind: str = "none"          # "none", "rml" or "em"
    gamma0: float = 4e-3
    hold_until: int = 1000
    decay_exponent: float = 0.8
    burn_in: int = 0
    max_step: Optional[float] = None  # RML only: cap on each edge's update norm


@dataclass
class PriorConfig:
    mu0: str = "backproject"    # "backproject", "zero" or "truth"
    kappa: float = 100.0


@dataclass
class ScenarioConfig:
    network: NetworkConfig
    name: str = "scenario"
    seed: int = 0
    runs: int = 1
    steps: int = 1000
    K: Optional[int] = None
    motion: MotionConfig = field(default_factory=MotionConfig)
    observation: ObservationConfig = field(default_factory=ObservationConfig)
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    prior: PriorConfig = field(default_factory=PriorConfig)
    theta0: str = "zero"        # "zero" or "truth"
    outputs: Dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["network"]["positions"] = {str(k): v for k, v in self.network.positions.items()}
        if self.observation.alpha is not None:
            d["observation"]["alpha"] = {str(k): v for k, v in self.observation.alpha.items()}
        return d

    def replace(self, **overrides) -> "ScenarioConfig":
        """Copy with dotted-path overrides, e.g. ``{"estimator.gamma0": 0.01}``."""
        raw = self.to_dict()
        for key, value in overrides.items():
            target = raw
            parts = key.split(".")
            for p in parts[:-1]:
                target = target[p]
            target[parts[-1]] = value
        return parse_config(raw)


_SECTIONS = {
    "motion": MotionConfig,
    "observation": ObservationConfig,
    "estimator": EstimatorConfig,
    "prior": PriorConfig,
}


def _node_key(raw_key, nodes):
    if raw_key in nodes:
        return raw_key
    for v in nodes:
        if str(v) == str(raw_key):
            return v
    raise KeyError(raw_key)


def _section(cls, raw, path):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(path, "must be an object")
    known = set(cls.__dataclass_fields__)
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(path, f"unknown fields {sorted(unknown)}")
    return cls(**raw)


def parse_config(raw: dict) -> ScenarioConfig:
    """Validate a config mapping and fill defaults (K := graph diameter)."""
    raw = copy.deepcopy(raw)
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    net = raw.get("network")
    if not isinstance(net, dict):
        raise ConfigError("network", "missing or not an object")
    for key in ("nodes", "edges", "positions"):
        if key not in net:
            raise ConfigError(f"network.{key}", "missing")
    nodes = list(net["nodes"])
    try:
        positions = {_node_key(k, nodes): list(map(float, v) if isinstance(v, list) else [float(v)])
                     for k, v in net["positions"].items()}
    except KeyError as exc:
        raise ConfigError("network.positions", f"unknown node {exc.args[0]!r}") from None
    if set(positions) != set(nodes):
        raise ConfigError("network.positions", "a position is required for every node")
    edges = [tuple(e) for e in net["edges"]]
    if any(len(e) != 2 for e in edges):
        raise ConfigError("network.edges", "each edge must be a pair of node ids")
    try:
        topo = build_topology(nodes, edges)
    except ValueError as exc:
        raise ConfigError("network.edges", str(exc)) from None

    known_top = {"network", "name", "seed", "runs", "steps", "K", "theta0", "outputs"} | set(_SECTIONS)
    unknown = set(raw) - known_top
    if unknown:
        raise ConfigError("<root>", f"unknown fields {sorted(unknown)}")
    sections = {name: _section(cls, raw.get(name), name) for name, cls in _SECTIONS.items()}
    obs = sections["observation"]
    if obs.alpha is not None:
        try:
            obs.alpha = {_node_key(k, nodes): float(v) for k, v in obs.alpha.items()}
        except KeyError as exc:
            raise ConfigError("observation.alpha", f"unknown node {exc.args[0]!r}") from None
    obs.alpha_range = tuple(obs.alpha_range)

    cfg = ScenarioConfig(
        network=NetworkConfig(nodes=nodes, edges=edges, positions=positions),
        name=str(raw.get("name", "scenario")),
        seed=int(raw.get("seed", 0)),
        runs=int(raw.get("runs", 1)),
        steps=int(raw.get("steps", 1000)),
        K=raw.get("K"),
        theta0=str(raw.get("theta0", "zero")),
        outputs=dict(raw.get("outputs", {})),
        **sections,
    )
    _validate(cfg)
    if cfg.K is None:
        cfg.K = max(1, graph_diameter(topo))
    cfg.K = int(cfg.K)
    return cfg


def _validate(cfg: ScenarioConfig) -> None:
    if cfg.runs < 1:
        raise ConfigError("runs", "must be >= 1")
    if cfg.steps < 1:
        raise ConfigError("steps", "must be >= 1")
    if cfg.K is not None and int(cfg.K) < 1:
        raise ConfigError("K", "must be >= 1")
    m = cfg.motion
    if m.kind not in ("cv", "scalar"):
        raise ConfigError("motion.kind", f"unknown kind {m.kind!r}")
    if m.kind == "cv" and m.tau <= 0:
        raise ConfigError("motion.tau", "must be positive")
    if m.sigma_x < 0:
        raise ConfigError("motion.sigma_x", "must be non-negative")
    dim = 4 if m.kind == "cv" else 1
    if m.x0 is not None and len(m.x0) != dim:
        raise ConfigError("motion.x0", f"must have {dim} entries")
    o = cfg.observation
    if o.kind not in ("linear", "bearings", "scalar"):
        raise ConfigError("observation.kind", f"unknown kind {o.kind!r}")
    if (o.kind == "scalar") != (m.kind == "scalar"):
        raise ConfigError("observation.kind", "scalar observations require the scalar motion model")
    lo, hi = o.alpha_range
    if not 0 < lo <= hi:
        raise ConfigError("observation.alpha_range", "must satisfy 0 < low <= high")
    if o.alpha is not None and any(a <= 0 for a in o.alpha.values()):
        raise ConfigError("observation.alpha", "gains must be positive")
    if o.kind == "linear" and o.sigma_y <= 0:
        raise ConfigError("observation.sigma_y", "must be positive")
    if o.kind == "bearings" and o.sigma_w <= 0:
        raise ConfigError("observation.sigma_w", "must be positive")
    pdim = 2 if m.kind == "cv" else 1
    for k, p in cfg.network.positions.items():
        if len(p) != pdim:
            raise ConfigError("network.positions", f"node {k!r} needs {pdim} coordinates")
    e = cfg.estimator
    if e.kind not in ("none", "rml", "em"):
        raise ConfigError("estimator.kind", f"unknown kind {e.kind!r}")
    if e.kind == "em" and o.kind == "bearings":
        raise ConfigError("estimator.kind", "online EM needs a linear observation model")
    if not 0.5 < e.decay_exponent <= 1.0:
        raise ConfigError("estimator.decay_exponent", "must lie in (0.5, 1]")
    if e.burn_in < 0 or e.hold_until < 0:
        raise ConfigError("estimator", "burn_in and hold_until must be >= 0")
    if e.max_step is not None and e.max_step <= 0:
        raise ConfigError("estimator.max_step", "must be positive when given")
    if cfg.prior.mu0 not in ("backproject", "zero", "truth"):
        raise ConfigError("prior.mu0", f"unknown policy {cfg.prior.mu0!r}")
    if cfg.prior.kappa <= 0:
        raise ConfigError("prior.kappa", "must be positive")
    if cfg.theta0 not in ("zero", "truth"):
        raise ConfigError("theta0", f"unknown initialization {cfg.theta0!r}")


def load_config(path) -> ScenarioConfig:
    """Load a scenario from a JSON file, or a packaged preset by bare name."""
    p = Path(path)
    if p.exists():
        text = p.read_text()
    else:
        name = p.name if p.suffix == ".json" else f"{p.name}.json"
        ref = resources.files("distloc.presets").joinpath(name)
        if not ref.is_file():
            raise FileNotFoundError(f"no config file or preset named {str(path)!r}")
        text = ref.read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("<root>", f"invalid JSON: {exc}") from None
    return parse_config(raw)


def preset_names() -> List[str]:
    return sorted(r.name[:-5] for r in resources.files("distloc.presets").iterdir()
                  if r.name.endswith(".json"))
