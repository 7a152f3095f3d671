"""Maximising the DiffIntersort score over a potential vector.

A potential ``p`` induces the order "``i`` before ``j`` iff ``p_i > p_j``".
The score is ``sum(D * mask(p))`` where ``mask(p)`` comes from
:func:`diffintersort.sinkhorn.order_mask`.

The Sinkhorn input is built from the centred potential ``p - mean(p)``. This
changes nothing about the induced order but makes the score, its gradient
and therefore every optimisation trajectory exactly invariant to adding a
constant to ``p`` (a finite number of Sinkhorn sweeps only removes that
shift approximately).
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
from .graph import check_order
from .score import _as_matrix
from .sinkhorn import MODES, SinkhornConfig, order_mask

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class OptimizerConfig:
    """Adam ascent settings.

    ``patience`` stops a restart early after that many steps without a new
    best hard score (``None`` always runs ``steps``).
    """

    # lr and init_scale tuned on random d <= 6 instances against brute force
    lr: float = 0.003
    steps: int = 2000
    restarts: int = 5
    init_scale: float = 0.015
    sinkhorn: SinkhornConfig = SinkhornConfig()
    mode: str = "straight-through"
    patience: int | None = None

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.restarts < 1:
            raise ValueError(f"restarts must be >= 1, got {self.restarts}")
        if not self.init_scale > 0:
            raise ValueError(f"init_scale must be positive, got {self.init_scale}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.patience is not None and self.patience < 1:
            raise ValueError(f"patience must be >= 1 or None, got {self.patience}")


def _score(D: np.ndarray, p: np.ndarray, cfg: SinkhornConfig, mode: str):
    om = order_mask(p - p.mean(), cfg, mode)
    value = float(np.sum(D * om.mask))
    if mode == "straight-through":
        hard = value
    else:
        hard = float(np.sum(D * (om.hard @ np.tril(np.ones_like(D), -1) @ om.hard.T)))
    return value, hard, om


def diffintersort_score(D, p, cfg: SinkhornConfig = SinkhornConfig(), mode: str = "straight-through") -> tuple[float, np.ndarray]:
    """Score value and its gradient with respect to ``p``."""
    D = _as_matrix(D)
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (D.shape[0],):
        raise ValueError(f"potential of shape {p.shape} does not match D of size {D.shape[0]}")
    value, _, om = _score(D, p, cfg, mode)
    grad = om.backward(D)
    # chain rule through the centring
    return value, grad - grad.mean()


def extract_order(p, seed=0) -> np.ndarray:
    """Positions with the largest potential first; exact ties are split by a 1e-9 jitter."""
    p = np.asarray(p, dtype=np.float64)
    if np.unique(p).size != p.size:
        p = p + 1e-9 * as_generator(seed).standard_normal(p.size)
    seq = np.argsort(-p, kind="stable")
    order = np.empty(p.size, dtype=np.int64)
    order[seq] = np.arange(p.size)
    return order


@dataclass
class PotentialResult:
    """Best potential over all restarts.

    ``trace`` holds the best hard score seen so far after each evaluated step
    of each restart (concatenated, restart index in ``trace_restart``).
    """

    potential: np.ndarray
    score: float
    order: np.ndarray
    trace: np.ndarray
    trace_restart: np.ndarray
    restart_scores: list
    failures: list = field(default_factory=list)
    runtime_s: float = 0.0


def _run_restart(D, p, opt: OptimizerConfig):
    adam = Adam([p], lr=opt.lr)
    best, best_p, since = -np.inf, p.copy(), 0
    trace = []
    for step in range(opt.steps):
        if np.unique(p).size != p.size:
            raise FloatingPointError(f"potential collapsed to tied entries at step {step}")
        value, hard, om = _score(D, p, opt.sinkhorn, opt.mode)
        if not np.isfinite(value):
            raise FloatingPointError(f"non-finite score at step {step}")
        if hard > best:
            best, best_p, since = hard, p.copy(), 0
        else:
            since += 1
        trace.append(best)
        if opt.patience is not None and since >= opt.patience:
            break
        grad = om.backward(D)
        grad -= grad.mean()
        if not np.all(np.isfinite(grad)):
            raise FloatingPointError(f"non-finite gradient at step {step}")
        adam.step([p], [-grad])
    return best, best_p, trace


def optimize_potential(D, opt: OptimizerConfig = OptimizerConfig(), seed=None) -> PotentialResult:
    """Adam ascent from ``opt.restarts`` draws ``p ~ N(0, init_scale^2)``; keep the best hard score.

    A restart whose score or gradient becomes non-finite is abandoned and
    reported in ``failures``; if every restart fails a ``FloatingPointError``
    is raised.
    """
    D = _as_matrix(D)
    if not np.all(np.isfinite(D)):
        raise ValueError("distance matrix contains non-finite entries")
    d = D.shape[0]
    rng = as_generator(seed)
    t0 = time.perf_counter()
    best, best_p = -np.inf, None
    traces, owners, restart_scores, failures = [], [], [], []
    for r in range(opt.restarts):
        p0 = rng.normal(0.0, opt.init_scale, d)
        try:
            score, p, trace = _run_restart(D, p0, opt)
        except FloatingPointError as exc:
            log.warning("restart %d aborted: %s", r, exc)
            failures.append({"restart": r, "error": str(exc)})
            restart_scores.append(float("nan"))
            continue
        traces.extend(trace)
        owners.extend([r] * len(trace))
        restart_scores.append(score)
        if score > best:
            best, best_p = score, p
    if best_p is None:
        raise FloatingPointError(f"all {opt.restarts} restarts failed: {failures}")
    return PotentialResult(
        potential=best_p,
        score=float(best),
        order=extract_order(best_p),
        trace=np.asarray(traces),
        trace_restart=np.asarray(owners, dtype=np.int64),
        restart_scores=restart_scores,
        failures=failures,
        runtime_s=time.perf_counter() - t0,
    )


def save_potential_result(res: PotentialResult, out_dir, opt: OptimizerConfig | None = None) -> Path:
    """``potential.csv``, ``order.csv`` (1-based positions), ``trace.csv`` and ``result.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    np.savetxt(out / "potential.csv", res.potential, delimiter=",", fmt="%.17g")
    np.savetxt(out / "order.csv", check_order(res.order, res.order.size) + 1, delimiter=",", fmt="%d")
    trace = np.column_stack([res.trace_restart, res.trace])
    np.savetxt(out / "trace.csv", trace, delimiter=",", fmt=["%d", "%.17g"], header="restart,best_score", comments="")
    summary = {
        "score": res.score,
        "restart_scores": res.restart_scores,
        "failures": res.failures,
        "runtime_s": res.runtime_s,
    }
    if opt is not None:
        summary["optimizer"] = asdict(opt)
    (out / "result.json").write_text(json.dumps(summary, indent=2) + "\n")
    return out
