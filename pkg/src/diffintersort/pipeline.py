"""Stage implementations behind the CLI: simulate, order, discover, benchmark."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from ._rng import as_generator
from .config import ExperimentConfig
from .discovery import extract_graph, save_model, train
from .distance import build_raw_distances, save_distance_matrix, threshold_matrix
from .graph import Dag, d_top, f1_edges, sample_er_dag, sample_sf_dag, sequence_from_order, shd
from .potential import optimize_potential, save_potential_result
from .scm import InterventionalDataset, generate_benchmark, load_dataset, save_dataset
from .score import score_of_order, sortranking

log = logging.getLogger(__name__)

ORDER_COLUMNS = ["method", "score", "d_top", "runtime_s", "config_hash", "seed"]
LONG_COLUMNS = ["config_hash", "cell", "p_int", "p_e", "effective_ratio", "seed", "method", "metric", "value"]


class NonFiniteMetric(ValueError):
    pass


def _check_finite(rows: list[dict], keys) -> None:
    for row in rows:
        for k in keys:
            v = row.get(k)
            if isinstance(v, float) and not math.isfinite(v):
                raise NonFiniteMetric(f"non-finite {k} in result row {row}")


def _write_csv(path: Path, rows: list[dict], columns: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns)
        w.writeheader()
        w.writerows(rows)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=str) + "\n")


def sample_graph(cfg: ExperimentConfig, seed) -> Dag:
    g = cfg.graph
    if g.kind == "er":
        return sample_er_dag(g.d, g.edge_probability, seed)
    return sample_sf_dag(g.d, g.m, seed)


def simulate(cfg: ExperimentConfig) -> tuple[InterventionalDataset, Dag]:
    ss = np.random.SeedSequence(cfg.seed)
    g_seed, d_seed = ss.spawn(2)
    truth = sample_graph(cfg, np.random.Generator(np.random.PCG64(g_seed)))
    ds = generate_benchmark(
        truth,
        kind=cfg.mechanism.kind,
        noise=cfg.mechanism.noise_spec(),
        n_obs=cfg.data.n_obs,
        n_int=cfg.data.n_int,
        p_int=cfg.data.p_int,
        seed=np.random.Generator(np.random.PCG64(d_seed)),
        shift=cfg.mechanism.shift,
    )
    ds.meta["seed"] = cfg.seed
    return ds, truth


def cmd_simulate(cfg: ExperimentConfig, out: Path) -> Path:
    ds, truth = simulate(cfg)
    save_dataset(ds, out, truth)
    _write_json(out / "manifest.json", {"config": cfg.to_dict(), "config_hash": cfg.config_hash(), "seed": cfg.seed})
    return out


def random_order_baseline(truth: Dag, n: int, seed) -> float:
    rng = as_generator(seed)
    return float(np.mean([d_top(truth, rng.permutation(truth.d)) for _ in range(n)]))


def order_dataset(ds: InterventionalDataset, truth: Dag | None, cfg: ExperimentConfig) -> tuple[list[dict], dict]:
    """DiffIntersort, sortranking-approx and random orders on one dataset."""
    h, seed = cfg.config_hash(), cfg.seed
    raw = build_raw_distances(ds)
    dm = threshold_matrix(raw, cfg.distance.eps, cfg.distance.c)
    t0 = time.perf_counter()
    res = optimize_potential(dm, cfg.optimizer, seed=np.random.SeedSequence([seed, 1]))
    t_diff = time.perf_counter() - t0
    t0 = time.perf_counter()
    sr = sortranking(raw, cfg.distance.eps, cfg.distance.c)
    t_sr = time.perf_counter() - t0

    def dt(order):
        return "" if truth is None else d_top(truth, order)

    rows = [
        {"method": "diffintersort", "score": res.score, "d_top": dt(res.order), "runtime_s": t_diff},
        {"method": "sortranking-approx", "score": score_of_order(dm, sr), "d_top": dt(sr), "runtime_s": t_sr},
    ]
    if truth is not None:
        rng = as_generator(np.random.SeedSequence([seed, 2]))
        perms = [rng.permutation(ds.d) for _ in range(cfg.random_orders)]
        rows.append({
            "method": "random",
            "score": float(np.mean([score_of_order(dm, o) for o in perms])),
            "d_top": float(np.mean([d_top(truth, o) for o in perms])),
            "runtime_s": 0.0,
        })
    for r in rows:
        r.update(config_hash=h, seed=seed)
    extras = {"result": res, "distance": dm, "sortranking": sr}
    return rows, extras


def cmd_order(dataset_dir: Path, cfg: ExperimentConfig, out: Path) -> list[dict]:
    ds, truth = load_dataset(dataset_dir)
    if truth is None:
        log.warning("%s has no graph.txt; d_top is omitted", dataset_dir)
    rows, extras = order_dataset(ds, truth, cfg)
    _check_finite(rows, ["score", "d_top", "runtime_s"])
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "orders.csv", rows, ORDER_COLUMNS)
    save_distance_matrix(extras["distance"], out / "distance.csv")
    save_potential_result(extras["result"], out / "diffintersort", cfg.optimizer)
    seqs = {
        "diffintersort": (sequence_from_order(extras["result"].order) + 1).tolist(),
        "sortranking-approx": (sequence_from_order(extras["sortranking"]) + 1).tolist(),
    }
    _write_json(out / "manifest.json", {
        "config": cfg.to_dict(),
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "dataset": str(dataset_dir),
        "intervention_targets": [int(k) + 1 for k in ds.targets],
        "orders": seqs,
        "ground_truth": truth is not None,
    })
    return rows


def discover_dataset(ds: InterventionalDataset, truth: Dag | None, cfg: ExperimentConfig, with_constraint: bool):
    tcfg = cfg.training if with_constraint else replace(cfg.training, lambda2=0.0)
    model = train(ds, tcfg, seed=np.random.SeedSequence([cfg.seed, 3]))
    g = extract_graph(model, tcfg.tau, tcfg.sinkhorn)
    metrics = {"n_edges": float(g.n_edges), "runtime_s": float(model.trace["runtime_s"]), "final_loss": float(model.trace["loss"][-1])}
    if truth is not None:
        metrics.update(shd=float(shd(g.adj, truth.adj)), f1=float(f1_edges(g.adj, truth.adj)), d_top=float(d_top(truth, model.order)))
    return model, g, metrics, tcfg


def cmd_discover(dataset_dir: Path, cfg: ExperimentConfig, out: Path, with_constraint: bool) -> dict:
    ds, truth = load_dataset(dataset_dir)
    if truth is None:
        log.warning("%s has no graph.txt; SHD, F1 and d_top are omitted", dataset_dir)
    model, g, metrics, tcfg = discover_dataset(ds, truth, cfg, with_constraint)
    rows = [{"metric": k, "value": v, "config_hash": cfg.config_hash(), "seed": cfg.seed} for k, v in metrics.items()]
    _check_finite(rows, ["value"])
    save_model(model, out, tcfg)
    _write_csv(out / "metrics.csv", rows, ["metric", "value", "config_hash", "seed"])
    _write_json(out / "manifest.json", {
        "config": cfg.to_dict(),
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "with_constraint": with_constraint,
        "lambda2": tcfg.lambda2,
        "dataset": str(dataset_dir),
        "intervened_variable_loss_excluded": True,
    })
    return metrics


def benchmark_cells(cfg: ExperimentConfig) -> list[dict]:
    b = cfg.benchmark
    d = cfg.graph.d
    if b.p_e is not None:
        densities = list(b.p_e)
    else:
        densities = [min(1.0, 2 * k / max(d - 1, 1)) for k in b.edges_per_var]
    cells = []
    for p_int in b.p_int:
        for p_e in densities:
            cells.append({"cell": len(cells), "p_int": float(p_int), "p_e": float(p_e), "effective_ratio": float(p_int / math.sqrt(p_e))})
    return cells


def _run_cell(cfg: ExperimentConfig, cell: dict, rep: int) -> tuple[list[dict], dict | None]:
    seed = int(np.random.SeedSequence([cfg.seed, cell["cell"], rep]).generate_state(1)[0])
    run_cfg = replace(
        cfg,
        seed=seed,
        graph=replace(cfg.graph, kind="er", p_e=cell["p_e"], edges_per_var=None),
        data=replace(cfg.data, p_int=cell["p_int"]),
    )
    base = {"config_hash": cfg.config_hash(), **cell, "seed": seed}
    try:
        ds, truth = simulate(run_cfg)
        out = []
        if "order" in cfg.benchmark.tasks:
            rows, _ = order_dataset(ds, truth, run_cfg)
            for r in rows:
                for metric in ("score", "d_top", "runtime_s"):
                    out.append({**base, "method": r["method"], "metric": metric, "value": float(r[metric])})
        if "discover" in cfg.benchmark.tasks:
            for flag, name in ((True, "discovery+constraint"), (False, "discovery")):
                _, _, metrics, _ = discover_dataset(ds, truth, run_cfg, flag)
                out.extend({**base, "method": name, "metric": k, "value": v} for k, v in metrics.items())
        return out, None
    except Exception as exc:  # recorded per cell, aggregation goes on
        return [], {**base, "error": f"{type(exc).__name__}: {exc}"}


def _read_existing(path: Path) -> list[dict]:
    if not path.exists():
        return []
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def cmd_benchmark(cfg: ExperimentConfig, out: Path, jobs: int = 1) -> dict:
    """Run every (cell, seed) not already in ``results.csv``; rows are appended by this process only."""
    out.mkdir(parents=True, exist_ok=True)
    results = out / "results.csv"
    existing = _read_existing(results)
    h = cfg.config_hash()
    done = {(r["cell"], r["seed"]) for r in existing if r["config_hash"] == h}
    cells = benchmark_cells(cfg)
    todo, hits = [], 0
    for cell in cells:
        for rep in range(cfg.benchmark.seeds):
            seed = int(np.random.SeedSequence([cfg.seed, cell["cell"], rep]).generate_state(1)[0])
            if (str(cell["cell"]), str(seed)) in done:
                hits += 1
            else:
                todo.append((cell, rep))
    new_rows, failures = [], []
    if todo:
        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                outcomes = list(pool.map(_run_cell, [cfg] * len(todo), [c for c, _ in todo], [r for _, r in todo]))
        else:
            outcomes = [_run_cell(cfg, c, r) for c, r in todo]
        for rows, fail in outcomes:
            new_rows.extend(rows)
            if fail is not None:
                failures.append(fail)
    _check_finite(new_rows, ["value"])
    if new_rows:
        write_header = not results.exists()
        with open(results, "a", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=LONG_COLUMNS)
            if write_header:
                w.writeheader()
            w.writerows(new_rows)
    all_rows = _read_existing(results)
    _write_csv(out / "summary.csv", aggregate(all_rows), ["config_hash", "cell", "p_int", "p_e", "effective_ratio", "method", "metric", "mean", "std", "n"])
    _write_json(out / "manifest.json", {"config": cfg.to_dict(), "config_hash": h, "seed": cfg.seed, "cells": cells})
    if failures:
        _write_json(out / "failures.json", failures)
    return {"cache_hits": hits, "new_runs": len(todo), "rows_appended": len(new_rows), "failures": len(failures)}


def aggregate(rows: list[dict]) -> list[dict]:
    groups: dict[tuple, list[float]] = {}
    for r in rows:
        key = (r["config_hash"], r["cell"], r["p_int"], r["p_e"], r["effective_ratio"], r["method"], r["metric"])
        groups.setdefault(key, []).append(float(r["value"]))
    out = []
    for key, vals in groups.items():
        v = np.asarray(vals)
        out.append(dict(zip(["config_hash", "cell", "p_int", "p_e", "effective_ratio", "method", "metric"], key),
                        mean=float(v.mean()), std=float(v.std(ddof=1)) if v.size > 1 else 0.0, n=int(v.size)))
    return out
