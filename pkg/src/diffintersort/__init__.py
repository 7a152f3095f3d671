"""DiffIntersort: differentiable causal-order scoring and masked causal discovery."""

from .distance import (
    DistanceMatrix,
    RawDistances,
    build_raw_distances,
    threshold_matrix,
    wasserstein1d,
)
from .graph import Dag, d_top, f1_edges, reachability, sample_er_dag, sample_sf_dag, shd
from .potential import OptimizerConfig, diffintersort_score, extract_order, optimize_potential
from .scm import InterventionalDataset, NoiseSpec, generate_benchmark
from .score import brute_force_best_order, score_of_order, score_of_potential_hard, sortranking
from .sinkhorn import SinkhornConfig, hard_mask_from_potential, order_mask, sinkhorn_operator

__version__ = "0.1.0"
