"""Desk-scale geometric consistency run without a neural backbone.

Handcrafted per-point features stand in for backbone features, and a
seeded linear map over them stands in for the segmentation logits.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..augment import cga, make_rng
from ..core import IGNORE_ID, PointCloud, voxel_indices
from ..neighbors import NeighborIndex
from ..occupancy import (
    HeadParams,
    OccupancyGrid,
    aggregate_voxel_features,
    bce_loss,
    build_occupancy,
    handcrafted_features,
    head_forward,
    init_head,
    semantic_ce_loss,
    total_loss,
    train_head,
)
from .config import RunConfig

DEMO_MODE = "visibility_only"


@dataclass
class GcrResult:
    grid: OccupancyGrid
    augmented: PointCloud
    params: HeadParams
    trace: list
    sem_s: float
    sem_a: float
    bce_s: float
    bce_a: float
    total: float
    augmented_subset: bool

    def breakdown(self) -> str:
        return (f"sem_s={self.sem_s!r}\nsem_a={self.sem_a!r}\n"
                f"bce_s={self.bce_s!r}\nbce_a={self.bce_a!r}\ntotal={self.total!r}")


def semantic_logits(cloud: PointCloud, num_classes: int, rng) -> np.ndarray:
    W = rng.normal(size=(num_classes, cloud.features.shape[1]))
    b = rng.normal(size=num_classes)
    return cloud.features @ W.T + b


def gcr_demo(src: PointCloud, cfg: RunConfig, steps: int = 200, lr: float = 1.0,
             mode: Optional[str] = None) -> GcrResult:
    """Occupancy from ``src``, one augmented view, head training on both BCE terms."""
    seed = cfg.seed
    cga_cfg = dataclasses.replace(cfg.cga, mode=mode or DEMO_MODE)
    grid = build_occupancy(src, cfg.occupancy_voxel)
    aug = cga(src, cga_cfg, make_rng(seed))

    normal_k = min(cfg.cga.normal_k, len(aug))
    views = []
    for cloud in (src, aug):
        index = NeighborIndex(cloud.points)
        feat = handcrafted_features(cloud, index, normal_k)
        views.append((feat, aggregate_voxel_features(grid, feat, cfg.knn_k, cfg.eps, index)))
    (fs, vf_s), (fa, vf_a) = views

    params, trace = train_head(init_head(vf_s.dim, cfg.hidden, make_rng(seed, 1)),
                               [vf_s, vf_a], grid, steps, lr)
    bce_s = bce_loss(head_forward(params, vf_s), grid)
    bce_a = bce_loss(head_forward(params, vf_a), grid)

    if src.labels is not None:
        scored = src.labels[src.labels != IGNORE_ID]
        n_cls = max(2, int(scored.max()) + 1) if len(scored) else 2
        sem_rng = make_rng(seed, 2)
        W_seed = sem_rng.integers(2**32)
        sem_s = semantic_ce_loss(semantic_logits(fs, n_cls, make_rng(W_seed)), fs.labels, IGNORE_ID)
        sem_a = semantic_ce_loss(semantic_logits(fa, n_cls, make_rng(W_seed)), fa.labels, IGNORE_ID)
    else:
        sem_s = sem_a = 0.0

    aug_vox = np.unique(voxel_indices(aug.points, grid.voxel_size), axis=0)
    subset = {tuple(r) for r in aug_vox.tolist()} <= grid.occupied_set()
    return GcrResult(grid, aug, params, trace, sem_s, sem_a, bce_s, bce_a,
                     total_loss(sem_s, sem_a, bce_s, bce_a), subset)
