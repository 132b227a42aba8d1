"""Point clouds, voxel indexing, bounding boxes, label remapping and tiling."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import EmptyInputError, InvalidArgumentError, MissingLabelsError

IGNORE_ID = 255

# Shared taxonomies used for cross-dataset evaluation.
GROUP1_CLASSES = ("Ground", "Building", "Natural", "Vehicle", "Urban Furniture")
GROUP2_CLASSES = ("Ground", "Building", "Natural", "Vehicle", "Pole", "Fence")


def _readonly(a):
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Ordered 3D points (meters) with optional per-point labels and features.

    Arrays are stored as read-only float64 / int64 copies, so a cloud can be
    shared freely between threads.
    """

    points: np.ndarray
    labels: Optional[np.ndarray] = None
    features: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64, copy=True)
        if pts.size == 0:
            pts = pts.reshape(0, 3)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise InvalidArgumentError(f"points must have shape (M, 3), got {pts.shape}")
        if not np.isfinite(pts).all():
            raise InvalidArgumentError("points must be finite")
        object.__setattr__(self, "points", _readonly(pts))

        if self.labels is not None:
            lab = np.array(self.labels, dtype=np.int64, copy=True).reshape(-1)
            if len(lab) != len(pts):
                raise InvalidArgumentError(
                    f"{len(lab)} labels for {len(pts)} points")
            if (lab < 0).any():
                raise InvalidArgumentError("labels must be non-negative")
            object.__setattr__(self, "labels", _readonly(lab))

        if self.features is not None:
            feat = np.array(self.features, dtype=np.float64, copy=True)
            if feat.ndim == 1:
                feat = feat.reshape(-1, 1)
            if feat.ndim != 2 or len(feat) != len(pts) or feat.shape[1] < 1:
                raise InvalidArgumentError(
                    f"features must have shape ({len(pts)}, D>=1), got {feat.shape}")
            object.__setattr__(self, "features", _readonly(feat))

    def __len__(self):
        return len(self.points)

    @property
    def has_labels(self):
        return self.labels is not None

    @property
    def has_features(self):
        return self.features is not None

    def take(self, idx) -> "PointCloud":
        """Subset (or repeat) points by index, carrying labels and features."""
        idx = np.asarray(idx, dtype=np.int64)
        return PointCloud(
            self.points[idx],
            None if self.labels is None else self.labels[idx],
            None if self.features is None else self.features[idx],
        )

    def replace(self, **changes) -> "PointCloud":
        kw = dict(points=self.points, labels=self.labels, features=self.features)
        kw.update(changes)
        return PointCloud(**kw)

    def equals(self, other: "PointCloud") -> bool:
        """Exact equality of coordinates and attributes."""
        def same(a, b):
            if a is None or b is None:
                return a is None and b is None
            return a.shape == b.shape and np.array_equal(a, b)

        return (same(self.points, other.points)
                and same(self.labels, other.labels)
                and same(self.features, other.features))


@dataclass(frozen=True)
class Aabb:
    min: tuple
    max: tuple

    def __post_init__(self):
        lo = tuple(float(c) for c in self.min)
        hi = tuple(float(c) for c in self.max)
        if len(lo) != 3 or len(hi) != 3 or any(a > b for a, b in zip(lo, hi)):
            raise InvalidArgumentError(f"invalid box {lo} .. {hi}")
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)


@dataclass(frozen=True)
class LabelMap:
    mapping: Mapping[int, int] = field(default_factory=dict)
    ignore_id: int = IGNORE_ID

    def lookup(self, labels: np.ndarray) -> np.ndarray:
        labels = np.asarray(labels, dtype=np.int64)
        out = np.full(labels.shape, self.ignore_id, dtype=np.int64)
        for src, dst in self.mapping.items():
            out[labels == src] = dst
        return out


# Hessigheim 3D source ids (public dataset order) onto the group-1 taxonomy.
H3D_TO_GROUP1 = LabelMap({
    0: 2,   # low vegetation -> natural
    1: 0,   # impervious surface -> ground
    2: 3,   # vehicle
    3: 4,   # urban furniture
    4: 1,   # roof -> building
    5: 1,   # facade -> building
    6: 2,   # shrub -> natural
    7: 2,   # tree -> natural
    8: 0,   # soil/gravel -> ground
    9: 4,   # vertical surface -> urban furniture
    10: 1,  # chimney -> building
})


def voxel_index(x: Sequence[float], v: float) -> tuple:
    """Integer voxel coordinate floor(x / v) of one point."""
    if not (v > 0) or not math.isfinite(v):
        raise InvalidArgumentError(f"voxel size must be > 0, got {v}")
    if len(x) != 3 or not all(math.isfinite(c) for c in x):
        raise InvalidArgumentError(f"point must be 3 finite coordinates, got {x}")
    return tuple(math.floor(c / v) for c in x)


def voxel_indices(points: np.ndarray, v: float) -> np.ndarray:
    """Vectorised :func:`voxel_index` over an (M, 3) array; returns int64."""
    if not (v > 0) or not math.isfinite(v):
        raise InvalidArgumentError(f"voxel size must be > 0, got {v}")
    return np.floor(np.asarray(points, dtype=np.float64) / v).astype(np.int64)


def bbox(cloud: PointCloud) -> Aabb:
    if len(cloud) == 0:
        raise EmptyInputError("bounding box of an empty cloud")
    return Aabb(tuple(cloud.points.min(axis=0)), tuple(cloud.points.max(axis=0)))


def remap_labels(cloud: PointCloud, label_map: LabelMap) -> PointCloud:
    if cloud.labels is None:
        raise MissingLabelsError("cloud has no labels to remap")
    return cloud.replace(labels=label_map.lookup(cloud.labels))


def _axis_ranges(t, t_max, m):
    """Patch index range [lo, hi] per point along one axis, in stride units.

    A patch ``i`` covers ``i <= t < i + m``; the number of patches is the
    smallest count whose last patch reaches past ``t_max``.
    """
    n = max(1, math.floor(t_max - m) + 2)
    lo = np.maximum(np.floor(t - m).astype(np.int64) + 1, 0)
    hi = np.minimum(np.floor(t).astype(np.int64), n - 1)
    return n, lo, hi


def tile(cloud: PointCloud, patch: float, overlap: float) -> list:
    """Split a cloud into horizontal square patches.

    Patches start at the bounding-box minimum with stride
    ``patch * (1 - overlap)``. Returns ``[((ix, iy), PointCloud), ...]`` in
    row-major (ix, iy) order; empty patches are dropped and z is never split.
    """
    if len(cloud) == 0:
        raise EmptyInputError("cannot tile an empty cloud")
    if not (patch > 0) or not math.isfinite(patch):
        raise InvalidArgumentError(f"patch must be > 0, got {patch}")
    if not (0.0 <= overlap < 1.0):
        raise InvalidArgumentError(f"overlap must be in [0, 1), got {overlap}")

    stride = patch * (1.0 - overlap)
    m = patch / stride
    xy = cloud.points[:, :2]
    origin = xy.min(axis=0)
    t = (xy - origin) / stride
    nx, lox, hix = _axis_ranges(t[:, 0], t[:, 0].max(), m)
    ny, loy, hiy = _axis_ranges(t[:, 1], t[:, 1].max(), m)

    out = []
    for ix in range(nx):
        in_x = (lox <= ix) & (ix <= hix)
        if not in_x.any():
            continue
        for iy in range(ny):
            sel = np.flatnonzero(in_x & (loy <= iy) & (iy <= hiy))
            if len(sel):
                out.append(((ix, iy), cloud.take(sel)))
    return out
