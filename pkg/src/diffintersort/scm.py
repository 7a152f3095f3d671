"""Linear and random-Fourier-feature SCMs with single-target interventions.

Parameter conventions (none of these are fixed by the literature we follow,
so they are all exposed as keyword arguments):

* linear weights ``W[i, j]`` for edge ``i -> j`` are drawn from +-U[0.5, 2.0],
  biases from U[-1, 1];
* an RFF mechanism is ``sum_f a_f cos(w_f . x_pa + phi_f)`` with 10 features,
  ``w_f ~ N(0, I)``, ``phi_f ~ U[0, 2 pi)`` and ``a_f ~ N(0, 2 * gain^2 / F)``;
* per-node noise scales are drawn from U[scale_low, scale_high]; the
  heteroscedastic family uses ``std = softplus(alpha . x_pa + beta)`` with
  ``beta`` chosen so that the std equals the drawn scale at ``x_pa = 0``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._rng import as_generator, spawn
from .graph import Dag, read_edge_list, write_edge_list

NOISE_FAMILIES = ("gaussian", "heteroscedastic", "laplace")
MECHANISMS = ("linear", "rff")


def softplus(x):
    return np.logaddexp(0.0, x)


@dataclass(frozen=True)
class NoiseSpec:
    family: str = "gaussian"
    scale_low: float = 0.5
    scale_high: float = 1.0
    hetero_slope: float = 0.5

    def __post_init__(self):
        if self.family not in NOISE_FAMILIES:
            raise ValueError(f"unknown noise family {self.family!r}; expected one of {NOISE_FAMILIES}")
        if not 0 < self.scale_low <= self.scale_high:
            raise ValueError(f"need 0 < scale_low <= scale_high, got {self.scale_low}, {self.scale_high}")
        if self.hetero_slope < 0:
            raise ValueError("hetero_slope must be non-negative")


@dataclass(frozen=True)
class Intervention:
    """``do(X_target := loc + scale * Z)`` with ``Z ~ N(0, 1)``."""

    target: int
    loc: float = 0.0
    scale: float = 1.0


@dataclass
class Mechanism:
    kind: str
    dag: Dag
    noise: NoiseSpec
    bias: np.ndarray
    noise_scale: np.ndarray
    weights: np.ndarray | None = None
    rff_freq: list = field(default_factory=list)
    rff_phase: np.ndarray | None = None
    rff_amp: np.ndarray | None = None
    hetero_alpha: np.ndarray | None = None
    hetero_beta: np.ndarray | None = None

    @property
    def d(self) -> int:
        return self.dag.d

    def mean_function(self, j: int, X: np.ndarray) -> np.ndarray:
        """Deterministic part of ``X_j`` given the current sample matrix."""
        pa = self.dag.parents(j)
        out = np.full(X.shape[0], self.bias[j])
        if pa.size == 0:
            return out
        if self.kind == "linear":
            return out + X[:, pa] @ self.weights[pa, j]
        z = X[:, pa] @ self.rff_freq[j].T + self.rff_phase[j]
        return out + np.cos(z) @ self.rff_amp[j]

    def noise_std(self, j: int, X: np.ndarray) -> np.ndarray | float:
        if self.noise.family != "heteroscedastic":
            return self.noise_scale[j]
        pa = self.dag.parents(j)
        return softplus(X[:, pa] @ self.hetero_alpha[pa, j] + self.hetero_beta[j])


def build_mechanism(g: Dag, kind: str = "linear", noise: NoiseSpec = NoiseSpec(), seed=None, *,
                    weight_range=(0.5, 2.0), n_features: int = 10, rff_gain: float = 2.0) -> Mechanism:
    if kind not in MECHANISMS:
        raise ValueError(f"unknown mechanism kind {kind!r}; expected one of {MECHANISMS}")
    rng = as_generator(seed)
    d = g.d
    bias = rng.uniform(-1.0, 1.0, d)
    noise_scale = rng.uniform(noise.scale_low, noise.scale_high, d)
    mech = Mechanism(kind, g, noise, bias, noise_scale)
    if kind == "linear":
        lo, hi = weight_range
        mag = rng.uniform(lo, hi, (d, d))
        sign = rng.choice([-1.0, 1.0], size=(d, d))
        mech.weights = mag * sign * g.adj
    else:
        mech.rff_phase = rng.uniform(0.0, 2 * np.pi, (d, n_features))
        mech.rff_amp = rng.normal(0.0, rff_gain * math.sqrt(2.0 / n_features), (d, n_features))
        mech.rff_freq = [rng.normal(0.0, 1.0, (n_features, g.parents(j).size)) for j in range(d)]
    if noise.family == "heteroscedastic":
        mech.hetero_alpha = rng.normal(0.0, noise.hetero_slope, (d, d)) * g.adj
        # softplus(beta) = scale  <=>  beta = log(expm1(scale))
        mech.hetero_beta = np.log(np.expm1(noise_scale))
    return mech


def sample(m: Mechanism, n: int, intervention: Intervention | None = None, seed=None) -> np.ndarray:
    """Ancestral sampling of ``n`` rows, optionally under a single hard intervention."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if intervention is not None and not 0 <= intervention.target < m.d:
        raise ValueError(f"intervention target {intervention.target} out of range for d={m.d}")
    rng = as_generator(seed)
    X = np.zeros((n, m.d))
    for j in m.dag.topological_order():
        if intervention is not None and j == intervention.target:
            X[:, j] = intervention.loc + intervention.scale * rng.standard_normal(n)
            continue
        std = m.noise_std(j, X)
        if m.noise.family == "laplace":
            eps = rng.laplace(0.0, std / math.sqrt(2.0), n)
        else:
            eps = std * rng.standard_normal(n)
        X[:, j] = m.mean_function(j, X) + eps
    return X


@dataclass
class InterventionalDataset:
    """Standardised observational data plus one environment per intervened variable.

    ``mean``/``std`` are the observational statistics used to standardise
    every block; ``envs`` maps target index (0-based) to its samples.
    """

    obs: np.ndarray
    envs: dict[int, np.ndarray]
    mean: np.ndarray
    std: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        d = self.obs.shape[1]
        for k, X in self.envs.items():
            if not 0 <= k < d:
                raise ValueError(f"environment target {k} out of range for d={d}")
            if X.ndim != 2 or X.shape[1] != d:
                raise ValueError(f"environment {k} has shape {X.shape}, expected (n, {d})")
        self.envs = dict(sorted(self.envs.items()))

    @property
    def d(self) -> int:
        return self.obs.shape[1]

    @property
    def targets(self) -> np.ndarray:
        return np.fromiter(self.envs.keys(), dtype=np.int64, count=len(self.envs))

    @classmethod
    def from_raw(cls, obs: np.ndarray, envs: dict[int, np.ndarray], meta: dict | None = None) -> "InterventionalDataset":
        """Standardise every block with the observational mean and (population) std."""
        obs = np.asarray(obs, dtype=np.float64)
        if obs.ndim != 2 or obs.shape[0] < 2:
            raise ValueError("need at least 2 observational samples to standardise")
        mean = obs.mean(axis=0)
        std = obs.std(axis=0)
        if np.any(std <= 0) or not np.all(np.isfinite(std)):
            bad = np.flatnonzero(~(std > 0)).tolist()
            raise ValueError(f"observational variables {bad} have zero variance; cannot standardise")
        z = {int(k): (np.asarray(X, dtype=np.float64) - mean) / std for k, X in envs.items()}
        return cls((obs - mean) / std, z, mean, std, dict(meta or {}))


def n_targets(d: int, p_int: float) -> int:
    # guard against 0.3 * 10 = 3.0000000000000004
    return max(1, math.ceil(p_int * d - 1e-9))


def generate_benchmark(g: Dag, kind: str = "linear", noise: NoiseSpec | None = None, n_obs: int = 5000,
                       n_int: int = 100, p_int: float = 1.0, seed=None, *, shift: float = 2.0,
                       **mechanism_kw) -> InterventionalDataset:
    """Simulate an observational block and one interventional block per target.

    ``noise=None`` draws the family uniformly from :data:`NOISE_FAMILIES`.
    Intervened variables are set to ``N(mu_k + shift * sd_k, sd_k^2)`` in
    terms of their observational mean and std, i.e. ``N(shift, 1)`` after
    standardisation.
    """
    if not 0 < p_int <= 1:
        raise ValueError(f"p_int must lie in (0, 1], got {p_int}")
    if n_obs < 2:
        raise ValueError("n_obs must be >= 2 (standardisation needs a variance)")
    if n_int < 1:
        raise ValueError("n_int must be >= 1")
    d = g.d
    rng_mech, rng_obs, rng_tgt, rng_env = spawn(seed, 4)
    if noise is None:
        noise = NoiseSpec(family=NOISE_FAMILIES[rng_mech.integers(len(NOISE_FAMILIES))])
    mech = build_mechanism(g, kind, noise, rng_mech, **mechanism_kw)
    obs = sample(mech, n_obs, seed=rng_obs)
    mu, sd = obs.mean(axis=0), obs.std(axis=0)
    targets = np.sort(rng_tgt.choice(d, size=n_targets(d, p_int), replace=False))
    env_rngs = spawn(rng_env, len(targets))
    envs = {
        int(k): sample(mech, n_int, Intervention(int(k), mu[k] + shift * sd[k], sd[k]), seed=r)
        for k, r in zip(targets, env_rngs)
    }
    meta = {
        "mechanism": kind,
        "noise_family": noise.family,
        "n_obs": n_obs,
        "n_int": n_int,
        "p_int": p_int,
        "shift": shift,
        "seed": seed if isinstance(seed, (int, type(None))) else None,
    }
    return InterventionalDataset.from_raw(obs, envs, meta)


def _write_csv(path: Path, X: np.ndarray) -> None:
    header = ",".join(f"X{j + 1}" for j in range(X.shape[1]))
    np.savetxt(path, X, delimiter=",", header=header, comments="", fmt="%.17g")


def _read_csv(path: Path) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2))


def save_dataset(ds: InterventionalDataset, out_dir, truth: Dag | None = None) -> Path:
    """Write ``obs.csv``, ``env_<k>.csv`` (1-based ``k``), ``meta.json`` and optionally ``graph.txt``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "obs.csv", ds.obs)
    for k, X in ds.envs.items():
        _write_csv(out / f"env_{k + 1}.csv", X)
    meta = dict(ds.meta)
    meta.update(
        d=ds.d,
        targets=[int(k) + 1 for k in ds.targets],
        standardization={"mean": ds.mean.tolist(), "std": ds.std.tolist()},
    )
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    if truth is not None:
        write_edge_list(truth, out / "graph.txt")
    return out


def load_dataset(path) -> tuple[InterventionalDataset, Dag | None]:
    """Inverse of :func:`save_dataset`; the graph is ``None`` when ``graph.txt`` is absent."""
    path = Path(path)
    meta_file = path / "meta.json"
    if not meta_file.exists():
        raise FileNotFoundError(f"{path}: not a dataset directory (no meta.json)")
    meta = json.loads(meta_file.read_text())
    obs = _read_csv(path / "obs.csv")
    envs = {k - 1: _read_csv(path / f"env_{k}.csv") for k in meta["targets"]}
    if not all(np.isfinite(X).all() for X in (obs, *envs.values())):
        raise ValueError(f"{path}: dataset contains non-finite values")
    flat = np.flatnonzero(obs.std(axis=0) == 0)
    if flat.size:
        raise ValueError(f"{path}: observational variables {(flat + 1).tolist()} are constant")
    stats = meta.get("standardization", {})
    d = obs.shape[1]
    mean = np.asarray(stats.get("mean", np.zeros(d)), dtype=np.float64)
    std = np.asarray(stats.get("std", np.ones(d)), dtype=np.float64)
    ds = InterventionalDataset(obs, envs, mean, std, meta)
    truth = read_edge_list(path / "graph.txt") if (path / "graph.txt").exists() else None
    return ds, truth
