"""Masked linear SEM with an environment-invariance penalty and DiffIntersort regularisation.

The model predicts ``X_hat = X W_eff^T + b`` with ``W_eff = W * mask(p)^T``:
row ``j`` of ``W`` holds the weights of the parents of ``j``, and the order
mask only lets a variable depend on variables placed before it, so every
extracted graph is acyclic without any penalty.

Loss, for observational block ``0`` and one block per intervened variable::

    mean|R_0| + gamma * sum_e w_e (mean_{j != k_e}|R_e| - mean_{j != k_e}|R_0|)
      + lambda1 * sum|W| - lambda2 * score(p)

``lambda1=None`` means ``0.1 / d``. The residual means run over all ``d``
columns, so the fit pulls on each weight with strength ``O(1/d)``; a fixed
``lambda1`` would empty every graph once ``d`` grows.

``k_e`` is the variable intervened on in environment ``e``. Its column is
left out of both halves of the difference because its structural equation
does not hold there, which also makes the term vanish exactly when an
environment equals the observational data. ``w_e = 1/|E|`` where ``E``
counts the observational block too.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ._optim import Adam
from ._rng import as_generator
from .distance import DEFAULT_C, DEFAULT_EPS, DistanceMatrix, build_raw_distances, threshold_matrix
from .graph import Dag, write_edge_list
from .potential import extract_order
from .scm import InterventionalDataset
from .sinkhorn import MODES, SinkhornConfig, order_mask

log = logging.getLogger(__name__)

SCHEDULES = ("joint", "alternating")


class TrainingDivergence(FloatingPointError):
    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 0.5
    lambda1: float | None = None
    lambda2: float = 1.0
    epochs: int = 3000
    lr: float = 0.01
    tau: float = 0.1
    sinkhorn: SinkhornConfig = SinkhornConfig()
    mode: str = "straight-through"
    schedule: str = "joint"
    eps: float = DEFAULT_EPS
    c: float = DEFAULT_C
    init_scale: float = 0.1
    weight_init: float = 0.01

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if (self.lambda1 is not None and self.lambda1 < 0) or self.lambda2 < 0:
            raise ValueError(f"lambdas must be >= 0, got {self.lambda1}, {self.lambda2}")
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if not self.lr > 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"schedule must be one of {SCHEDULES}, got {self.schedule!r}")
        if not self.eps > 0 or self.c < 0:
            raise ValueError(f"need eps > 0 and c >= 0, got {self.eps}, {self.c}")
        if not self.init_scale > 0 or self.weight_init < 0:
            raise ValueError("init_scale must be positive and weight_init non-negative")

    def l1_weight(self, d: int) -> float:
        return 0.1 / d if self.lambda1 is None else self.lambda1


@dataclass
class DiscoveryModel:
    W: np.ndarray
    b: np.ndarray
    p: np.ndarray
    trace: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        d = self.p.shape[0]
        if self.W.shape != (d, d) or self.b.shape != (d,):
            raise ValueError(f"inconsistent shapes: W {self.W.shape}, b {self.b.shape}, p {self.p.shape}")

    @property
    def d(self) -> int:
        return self.p.shape[0]

    @property
    def order(self) -> np.ndarray:
        return extract_order(self.p)


def _mask(p: np.ndarray, cfg: SinkhornConfig, mode: str):
    return order_mask(p - p.mean(), cfg, mode)


def effective_weights(model: DiscoveryModel, cfg: SinkhornConfig = SinkhornConfig(), mode: str = "straight-through") -> np.ndarray:
    return model.W * _mask(model.p, cfg, mode).mask.T


def predict(model: DiscoveryModel, X: np.ndarray, cfg: SinkhornConfig = SinkhornConfig(), mode: str = "straight-through") -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.d:
        raise ValueError(f"X has shape {X.shape}, model expects {model.d} columns")
    return X @ effective_weights(model, cfg, mode).T + model.b


class _Design:
    """All blocks stacked, with per-entry loss weights so the fit is ``sum(C * |R|)``."""

    def __init__(self, ds: InterventionalDataset, gamma: float):
        d = ds.d
        if d < 2:
            raise ValueError("discovery needs at least 2 variables")
        if ds.obs.shape[0] < 1:
            raise ValueError("dataset has no observational samples")
        n0 = ds.obs.shape[0]
        omega = 1.0 / (len(ds.envs) + 1)
        c0 = np.full(d, 1.0 / (n0 * d))
        blocks, coefs = [ds.obs], [None]
        for k, X in ds.envs.items():
            if X.shape[0] == 0:
                continue
            keep = np.ones(d)
            keep[k] = 0.0
            w = gamma * omega / (d - 1)
            c0 -= keep * (w / n0)
            blocks.append(X)
            coefs.append(np.broadcast_to(keep * (w / X.shape[0]), X.shape))
        coefs[0] = np.broadcast_to(c0, ds.obs.shape)
        self.X = np.ascontiguousarray(np.vstack(blocks))
        self.C = np.ascontiguousarray(np.vstack(coefs))

    def fit(self, W_eff: np.ndarray, b: np.ndarray, need_grad: bool = True):
        R = self.X - self.X @ W_eff.T - b
        value = float(np.sum(self.C * np.abs(R)))
        if not need_grad:
            return value, None, None
        G = self.C * np.sign(R)
        return value, -G.T @ self.X, -G.sum(axis=0)


def loss_terms(model: DiscoveryModel, ds: InterventionalDataset, cfg: TrainConfig = TrainConfig()) -> dict:
    """Observational MAE and the (unweighted by gamma) invariance term, computed block by block."""
    W_eff = effective_weights(model, cfg.sinkhorn, cfg.mode)
    d = ds.d
    omega = 1.0 / (len(ds.envs) + 1)
    abs0 = np.abs(ds.obs - ds.obs @ W_eff.T - model.b)
    col0 = abs0.mean(axis=0)
    inv = 0.0
    for k, X in ds.envs.items():
        keep = np.arange(d) != k
        colk = np.abs(X - X @ W_eff.T - model.b).mean(axis=0)
        inv += omega * (colk[keep].mean() - col0[keep].mean())
    return {"observational": float(col0.mean()), "invariance": float(inv)}


def fitting_loss(model: DiscoveryModel, ds: InterventionalDataset, cfg: TrainConfig = TrainConfig()) -> float:
    terms = loss_terms(model, ds, cfg)
    return terms["observational"] + cfg.gamma * terms["invariance"]


@dataclass
class LossGrad:
    value: float
    fit: float
    score: float
    W: np.ndarray
    b: np.ndarray
    p: np.ndarray


def _loss_and_grad(model: DiscoveryModel, design: _Design, D: np.ndarray | None, cfg: TrainConfig) -> LossGrad:
    # one mask evaluation feeds both the fit and the score
    om = _mask(model.p, cfg.sinkhorn, cfg.mode)
    W_eff = model.W * om.mask.T
    fit, gW_eff, gb = design.fit(W_eff, model.b)
    score = float(np.sum(D * om.mask)) if D is not None else 0.0
    l1 = cfg.l1_weight(model.d)
    value = fit + l1 * float(np.abs(model.W).sum()) - cfg.lambda2 * score
    gW = gW_eff * om.mask.T + l1 * np.sign(model.W)
    g_mask = (gW_eff * model.W).T
    if D is not None and cfg.lambda2 > 0:
        g_mask = g_mask - cfg.lambda2 * D
    gp = om.backward(g_mask)
    gp -= gp.mean()
    return LossGrad(value, fit, score, gW, gb, gp)


def total_loss(model: DiscoveryModel, ds: InterventionalDataset, cfg: TrainConfig = TrainConfig(),
               D: DistanceMatrix | np.ndarray | None = None) -> tuple[float, dict]:
    """Full objective and its gradients ``{"W", "b", "p"}``.

    ``D`` defaults to the thresholded distance matrix of ``ds`` (``cfg.eps``,
    ``cfg.c``); it only matters when ``lambda2 > 0``.
    """
    if D is None and cfg.lambda2 > 0:
        D = build_distance(ds, cfg)
    D = D.D if isinstance(D, DistanceMatrix) else D
    lg = _loss_and_grad(model, _Design(ds, cfg.gamma), D, cfg)
    return lg.value, {"W": lg.W, "b": lg.b, "p": lg.p}


def build_distance(ds: InterventionalDataset, cfg: TrainConfig = TrainConfig()) -> DistanceMatrix:
    return threshold_matrix(build_raw_distances(ds), cfg.eps, cfg.c)


def init_model(d: int, cfg: TrainConfig = TrainConfig(), seed=None) -> DiscoveryModel:
    rng = as_generator(seed)
    W = cfg.weight_init * rng.standard_normal((d, d))
    np.fill_diagonal(W, 0.0)
    return DiscoveryModel(W, np.zeros(d), rng.normal(0.0, cfg.init_scale, d))


def train(ds: InterventionalDataset, cfg: TrainConfig = TrainConfig(), seed=None,
          D: DistanceMatrix | None = None) -> DiscoveryModel:
    """Full-batch Adam on ``(W, b, p)``; one epoch is one gradient step.

    Raises :class:`TrainingDivergence` (carrying a diagnostics dict) as soon
    as the loss or a gradient stops being finite.
    """
    if not ds.envs and cfg.lambda2 > 0:
        raise ValueError("DiffIntersort regularisation needs at least one interventional environment")
    t0 = time.perf_counter()
    design = _Design(ds, cfg.gamma)
    if cfg.lambda2 > 0:
        D = build_distance(ds, cfg) if D is None else D
        Dm = D.D if isinstance(D, DistanceMatrix) else np.asarray(D, dtype=np.float64)
    else:
        Dm = None
    model = init_model(ds.d, cfg, seed)
    opt_wb = Adam([model.W, model.b], lr=cfg.lr)
    opt_p = Adam([model.p], lr=cfg.lr)
    losses, fits, scores = [], [], []
    for epoch in range(cfg.epochs):
        if np.unique(model.p).size != model.d:
            model.p += 1e-9 * as_generator(epoch).standard_normal(model.d)
        lg = _loss_and_grad(model, design, Dm, cfg)
        finite = np.isfinite(lg.value) and all(np.all(np.isfinite(g)) for g in (lg.W, lg.b, lg.p))
        if not finite:
            diag = {
                "epoch": epoch,
                "loss": lg.value,
                "last_finite_loss": losses[-1] if losses else None,
                "max_abs_W": float(np.max(np.abs(model.W))),
                "max_abs_p": float(np.max(np.abs(model.p))),
            }
            raise TrainingDivergence(f"training diverged at epoch {epoch}", diag)
        losses.append(lg.value)
        fits.append(lg.fit)
        scores.append(lg.score)
        update_wb = cfg.schedule == "joint" or epoch % 2 == 0
        update_p = cfg.schedule == "joint" or epoch % 2 == 1
        if update_wb:
            opt_wb.step([model.W, model.b], [lg.W, lg.b])
        if update_p:
            opt_p.step([model.p], [lg.p])
    model.trace = {
        "loss": np.asarray(losses),
        "fit": np.asarray(fits),
        "score": np.asarray(scores),
        "runtime_s": time.perf_counter() - t0,
    }
    return model


def extract_graph(model: DiscoveryModel, tau: float = 0.1, cfg: SinkhornConfig = SinkhornConfig()) -> Dag:
    """Edge ``i -> j`` iff ``|W_eff[j, i]| > tau``."""
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    W_eff = effective_weights(model, cfg, "straight-through")
    return Dag((np.abs(W_eff.T) > tau).astype(np.int8))


def save_model(model: DiscoveryModel, out_dir, cfg: TrainConfig | None = None) -> Path:
    """``W.csv``, ``bias.csv``, ``potential.csv``, ``graph.txt``, ``loss_trace.csv`` and ``manifest.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    np.savetxt(out / "W.csv", model.W, delimiter=",", fmt="%.17g")
    np.savetxt(out / "bias.csv", model.b, delimiter=",", fmt="%.17g")
    np.savetxt(out / "potential.csv", model.p, delimiter=",", fmt="%.17g")
    tau = cfg.tau if cfg is not None else 0.1
    write_edge_list(extract_graph(model, tau), out / "graph.txt")
    if model.trace:
        rows = np.column_stack([np.arange(len(model.trace["loss"])), model.trace["loss"], model.trace["fit"], model.trace["score"]])
        np.savetxt(out / "loss_trace.csv", rows, delimiter=",", fmt=["%d", "%.17g", "%.17g", "%.17g"],
                   header="epoch,loss,fit,score", comments="")
    manifest = {"intervened_variable_loss_excluded": True}
    if cfg is not None:
        manifest["train_config"] = asdict(cfg)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return out


def load_model(path) -> DiscoveryModel:
    path = Path(path)
    W = np.loadtxt(path / "W.csv", delimiter=",", ndmin=2)
    b = np.atleast_1d(np.loadtxt(path / "bias.csv", delimiter=","))
    p = np.atleast_1d(np.loadtxt(path / "potential.csv", delimiter=","))
    return DiscoveryModel(W, b, p)
