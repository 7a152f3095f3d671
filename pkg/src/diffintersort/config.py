"""Experiment configuration: YAML file -> schema check -> validated dataclasses.

Every section is optional; omitted keys take the library defaults. After the
schema check the sections are turned into the library's own config objects,
so all of their preconditions are re-validated at load time.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import jsonschema
import yaml

from .discovery import TrainConfig
from .potential import OptimizerConfig
from .scm import MECHANISMS, NOISE_FAMILIES, NoiseSpec
from .sinkhorn import MODES, SinkhornConfig

_NUM = {"type": "number"}
_POS_INT = {"type": "integer", "minimum": 1}

_SINKHORN = {
    "type": "object",
    "additionalProperties": False,
    "properties": {"t": _NUM, "n_iter": _POS_INT, "grad_iter": {"type": ["integer", "null"], "minimum": 1}},
}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "graph": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["er", "sf"]},
                "d": _POS_INT,
                "p_e": _NUM,
                "edges_per_var": _NUM,
                "m": _POS_INT,
            },
        },
        "mechanism": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": list(MECHANISMS)},
                "noise": {"enum": list(NOISE_FAMILIES) + ["random"]},
                "shift": _NUM,
            },
        },
        "data": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"n_obs": {"type": "integer", "minimum": 2}, "n_int": _POS_INT, "p_int": _NUM},
        },
        "distance": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"eps": _NUM, "c": _NUM},
        },
        "optimizer": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "lr": _NUM,
                "steps": _POS_INT,
                "restarts": _POS_INT,
                "init_scale": _NUM,
                "patience": {"type": ["integer", "null"], "minimum": 1},
                "mode": {"enum": list(MODES)},
                "sinkhorn": _SINKHORN,
            },
        },
        "training": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "gamma": _NUM,
                "lambda1": {"type": ["number", "null"]},
                "lambda2": _NUM,
                "epochs": _POS_INT,
                "lr": _NUM,
                "tau": _NUM,
                "mode": {"enum": list(MODES)},
                "schedule": {"enum": ["joint", "alternating"]},
                "init_scale": _NUM,
                "weight_init": _NUM,
                "sinkhorn": _SINKHORN,
            },
        },
        "baseline": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"random_orders": _POS_INT},
        },
        "benchmark": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "p_int": {"type": "array", "items": _NUM, "minItems": 1},
                "p_e": {"type": "array", "items": _NUM, "minItems": 1},
                "edges_per_var": {"type": "array", "items": _NUM, "minItems": 1},
                "seeds": _POS_INT,
                "tasks": {"type": "array", "items": {"enum": ["order", "discover"]}, "minItems": 1},
            },
        },
    },
}


@dataclass(frozen=True)
class GraphSpec:
    kind: str = "er"
    d: int = 10
    p_e: float | None = None
    edges_per_var: float | None = None
    m: int = 2

    def __post_init__(self):
        if self.kind == "er":
            if self.p_e is not None and self.edges_per_var is not None:
                raise ValueError("give either graph.p_e or graph.edges_per_var, not both")
            p = self.edge_probability
            if not 0 <= p <= 1:
                raise ValueError(f"ER edge probability must lie in [0, 1], got {p}")
        elif self.m >= self.d:
            raise ValueError(f"scale-free attachment m={self.m} must be smaller than d={self.d}")

    @property
    def edge_probability(self) -> float:
        """ER edge probability; for SF graphs the edge density ``2m/(d-1)`` of the sampled graph."""
        if self.kind == "sf":
            return min(1.0, 2 * self.m / max(self.d - 1, 1))
        if self.p_e is not None:
            return self.p_e
        k = 1.0 if self.edges_per_var is None else self.edges_per_var
        return min(1.0, 2 * k / max(self.d - 1, 1))


@dataclass(frozen=True)
class DataSpec:
    n_obs: int = 5000
    n_int: int = 100
    p_int: float = 1.0

    def __post_init__(self):
        if not 0 < self.p_int <= 1:
            raise ValueError(f"data.p_int must lie in (0, 1], got {self.p_int}")


@dataclass(frozen=True)
class MechanismSpec:
    kind: str = "linear"
    noise: str = "gaussian"
    shift: float = 2.0

    def noise_spec(self) -> NoiseSpec | None:
        return None if self.noise == "random" else NoiseSpec(family=self.noise)


@dataclass(frozen=True)
class DistanceSpec:
    eps: float = 0.3
    c: float = 0.5

    def __post_init__(self):
        if not self.eps > 0 or self.c < 0:
            raise ValueError(f"need distance.eps > 0 and distance.c >= 0, got {self.eps}, {self.c}")


@dataclass(frozen=True)
class BenchmarkSpec:
    p_int: tuple = (0.25, 0.5, 1.0)
    p_e: tuple | None = None
    edges_per_var: tuple | None = (1.0, 2.0)
    seeds: int = 3
    tasks: tuple = ("order",)

    def __post_init__(self):
        if self.p_e is not None and self.edges_per_var is not None:
            raise ValueError("give either benchmark.p_e or benchmark.edges_per_var, not both")
        if not self.p_int or not (self.p_e or self.edges_per_var):
            raise ValueError("benchmark grid is empty")


@dataclass
class ExperimentConfig:
    seed: int = 0
    graph: GraphSpec = field(default_factory=GraphSpec)
    mechanism: MechanismSpec = field(default_factory=MechanismSpec)
    data: DataSpec = field(default_factory=DataSpec)
    distance: DistanceSpec = field(default_factory=DistanceSpec)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    random_orders: int = 100
    benchmark: BenchmarkSpec = field(default_factory=BenchmarkSpec)

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self), default=list))

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON form (seed included), first 16 hex digits."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def with_seed(self, seed: int | None) -> "ExperimentConfig":
        if seed is None:
            return self
        out = copy.deepcopy(self)
        out.seed = int(seed)
        return out


def _sinkhorn(section: dict | None) -> SinkhornConfig:
    return SinkhornConfig(**(section or {}))


def from_dict(raw: dict | None) -> ExperimentConfig:
    raw = {} if raw is None else raw
    jsonschema.validate(raw, SCHEMA)
    opt = dict(raw.get("optimizer", {}))
    opt["sinkhorn"] = _sinkhorn(opt.get("sinkhorn"))
    tr = dict(raw.get("training", {}))
    tr["sinkhorn"] = _sinkhorn(tr.get("sinkhorn"))
    dist = DistanceSpec(**raw.get("distance", {}))
    # distance thresholds are shared by ordering and training
    tr.setdefault("eps", dist.eps)
    tr.setdefault("c", dist.c)
    bench = {k: tuple(v) if isinstance(v, list) else v for k, v in raw.get("benchmark", {}).items()}
    if "p_e" in bench:
        bench.setdefault("edges_per_var", None)
    for key in ("p_e", "edges_per_var", "p_int"):
        for v in bench.get(key) or ():
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"benchmark.{key} entries must be positive, got {v}")
    return ExperimentConfig(
        seed=raw.get("seed", 0),
        graph=GraphSpec(**raw.get("graph", {})),
        mechanism=MechanismSpec(**raw.get("mechanism", {})),
        data=DataSpec(**raw.get("data", {})),
        distance=dist,
        optimizer=OptimizerConfig(**opt),
        training=TrainConfig(**tr),
        random_orders=raw.get("baseline", {}).get("random_orders", 100),
        benchmark=BenchmarkSpec(**bench),
    )


def load_config(path) -> ExperimentConfig:
    """Parse and validate a YAML config; a missing path means all defaults."""
    if path is None:
        return from_dict({})
    text = Path(path).read_text()
    return from_dict(yaml.safe_load(text))
