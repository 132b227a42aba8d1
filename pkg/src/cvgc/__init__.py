"""Cross-view geometric augmentation and consistency tooling for LiDAR point clouds."""

from .augment import (
    CgaConfig,
    cga,
    densify,
    estimate_mean_spacing,
    make_rng,
    resample_to_spacing,
    sample_viewpoint,
    sparsify,
    to_spherical,
    visibility_filter,
)
from .core import IGNORE_ID, Aabb, LabelMap, PointCloud, bbox, remap_labels, tile, voxel_index
from .metrics import ConfusionMatrix, accumulate, iou, miou
from .neighbors import NeighborIndex, build_index, estimate_normal, knn, local_frame
from .occupancy import (
    HeadParams,
    OccupancyGrid,
    VoxelFeatures,
    aggregate_voxel_features,
    bce_grad,
    bce_loss,
    build_occupancy,
    handcrafted_features,
    head_forward,
    init_head,
    semantic_ce_loss,
    total_loss,
    train_head,
)

__version__ = "0.1.0"
