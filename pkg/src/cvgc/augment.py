"""Cross-view geometric augmentation.

Density resampling (tangent-plane densification, centroid-nearest voxel
sparsification) and viewpoint-dependent visibility simulation by spherical
binning. All randomness comes from an explicit ``numpy.random.Generator``.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .core import PointCloud, voxel_indices
from .errors import (
    CoincidentViewpointError,
    EmptyInputError,
    EmptyOutputError,
    InvalidArgumentError,
    NoGroundPointsError,
)
from .neighbors import DEFAULT_NORMAL_K, NeighborIndex, estimate_normals, local_frames

log = logging.getLogger(__name__)

MODES = ("density_only", "visibility_only", "both", "random_pick")
SPACING_SAMPLE_SIZE = 10_000
SPACING_TOLERANCE = 0.1
LOWEST_FRACTION = 0.05
TIE_TOLERANCE = 1e-9  # relative to the voxel size


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Seeded stream; extra ``keys`` derive independent sub-streams (e.g. per patch)."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, keys)])))


@dataclass(frozen=True)
class CgaConfig:
    spacing_range: tuple = (0.01, 0.5)
    view_heights: tuple = (2.0, 4.0, 8.0, 16.0, 32.0, 64.0)
    angular_resolution: float = 0.01
    densify_radius_scale: float = 0.5
    mode: str = "random_pick"
    normal_k: int = DEFAULT_NORMAL_K
    ground_class: Optional[int] = None

    def __post_init__(self):
        lo, hi = (float(s) for s in self.spacing_range)
        if not (0 < lo <= hi):
            raise InvalidArgumentError(f"bad spacing range {self.spacing_range}")
        heights = tuple(sorted(float(h) for h in self.view_heights))
        if not heights or heights[0] <= 0:
            raise InvalidArgumentError(f"view heights must be > 0, got {self.view_heights}")
        if not self.angular_resolution > 0:
            raise InvalidArgumentError("angular resolution must be > 0")
        if not self.densify_radius_scale > 0:
            raise InvalidArgumentError("densify radius scale must be > 0")
        if self.mode not in MODES:
            raise InvalidArgumentError(f"mode must be one of {MODES}, got {self.mode!r}")
        object.__setattr__(self, "spacing_range", (lo, hi))
        object.__setattr__(self, "view_heights", heights)


def densify(cloud: PointCloud, K: int, r: float, normal_k: int = DEFAULT_NORMAL_K,
            rng: Optional[np.random.Generator] = None,
            counters: Optional[Counter] = None) -> PointCloud:
    """Add ``K`` points per input point, uniform on a tangent-plane disk of radius ``r``.

    Output is the input followed by the synthetic points grouped by parent.
    Synthetic points copy their parent's label and feature vector. Points with
    a degenerate neighbourhood get no samples; they are counted under
    ``counters["degenerate_normals"]``.
    """
    if len(cloud) == 0:
        raise EmptyInputError("cannot densify an empty cloud")
    if int(K) != K or K < 0:
        raise InvalidArgumentError(f"K must be a non-negative integer, got {K}")
    if not r > 0:
        raise InvalidArgumentError(f"disk radius must be > 0, got {r}")
    K = int(K)
    if K == 0:
        return cloud
    if len(cloud) < 3:
        raise InvalidArgumentError("densification needs at least 3 points")
    if rng is None:
        rng = make_rng(0)

    m = len(cloud)
    index = NeighborIndex(cloud.points)
    normals, degenerate = estimate_normals(index, min(normal_k, m))
    xi1 = rng.random((m, K))
    xi2 = rng.random((m, K))

    ok = np.flatnonzero(~degenerate)
    if len(ok) < m:
        log.warning("densify: %d points with degenerate normals emit no samples", m - len(ok))
        if counters is not None:
            counters["degenerate_normals"] += m - len(ok)
    u, v, _ = local_frames(normals[ok])
    rho = r * np.sqrt(xi1[ok])
    theta = 2.0 * np.pi * xi2[ok]
    offs = ((rho * np.cos(theta))[:, :, None] * u[:, None, :]
            + (rho * np.sin(theta))[:, :, None] * v[:, None, :])
    synth = (cloud.points[ok][:, None, :] + offs).reshape(-1, 3)
    parents = np.repeat(ok, K)

    pts = np.concatenate([cloud.points, synth])
    labels = None if cloud.labels is None else np.concatenate(
        [cloud.labels, cloud.labels[parents]])
    feats = None if cloud.features is None else np.concatenate(
        [cloud.features, cloud.features[parents]])
    return PointCloud(pts, labels, feats)


def _group_first(keys, score):
    """Index of the minimum-score element per distinct key, lowest index on ties.

    Returned indices are sorted, i.e. survivors keep their input order.
    """
    order = np.lexsort((np.arange(len(keys)), score, keys))
    sk = keys[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = sk[1:] != sk[:-1]
    return np.sort(order[first])


def _voxel_keys(vox):
    """Collapse (M, 3) int voxel coordinates to one int64 key per row."""
    vox = vox - vox.min(axis=0)
    ext = vox.max(axis=0).astype(np.int64) + 1
    if float(ext[0]) * float(ext[1]) * float(ext[2]) < 2**62:
        return (vox[:, 0] * ext[1] + vox[:, 1]) * ext[2] + vox[:, 2]
    return np.unique(vox, axis=0, return_inverse=True)[1].reshape(-1)


def sparsify(cloud: PointCloud, v: float) -> PointCloud:
    """Keep, per occupied voxel, the point closest to the voxel's point centroid.

    Points whose centroid distance is within ``1e-9 * v`` of the voxel's
    minimum count as tied, so equidistant points do not depend on rounding.
    """
    if len(cloud) == 0:
        raise EmptyInputError("cannot sparsify an empty cloud")
    if not v > 0:
        raise InvalidArgumentError(f"voxel size must be > 0, got {v}")
    pts = cloud.points
    keys = _voxel_keys(voxel_indices(pts, v))
    _, group, counts = np.unique(keys, return_inverse=True, return_counts=True)
    centroid = np.stack(
        [np.bincount(group, weights=pts[:, c]) for c in range(3)], axis=1) / counts[:, None]
    diff = pts - centroid[group]
    dist = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    # Distances within a tolerance of the voxel minimum tie; lowest index wins.
    dmin = np.full(len(counts), np.inf)
    np.minimum.at(dmin, group, dist)
    near = dist <= dmin[group] + TIE_TOLERANCE * v
    return cloud.take(_group_first(group, np.where(near, 0.0, 1.0)))


def estimate_mean_spacing(cloud: PointCloud, sample_size: int = SPACING_SAMPLE_SIZE) -> float:
    """Mean distance to the nearest distinct neighbour over an index-strided sample."""
    m = len(cloud)
    if m < 2:
        raise InvalidArgumentError("spacing needs at least 2 points")
    if sample_size < 1:
        raise InvalidArgumentError(f"sample size must be >= 1, got {sample_size}")
    n = min(int(sample_size), m)
    sample = (np.arange(n, dtype=np.int64) * m) // n
    index = NeighborIndex(cloud.points)
    q = cloud.points[sample]

    k = min(m, 4)
    nearest = np.full(n, np.nan)
    todo = np.arange(n)
    while len(todo):
        _, d = index.query(q[todo], k)
        d = np.where(d > 0, d, np.inf).min(axis=1)
        found = np.isfinite(d)
        nearest[todo[found]] = d[found]
        todo = todo[~found]
        if k == m:
            break
        k = min(m, 4 * k)
    if len(todo):
        if len(todo) == n:
            raise InvalidArgumentError("all points are coincident; spacing undefined")
        nearest = nearest[np.isfinite(nearest)]
    return float(nearest.mean())


def densify_params(spacing: float, target: float, radius_scale: float = 0.5):
    """Samples per point and disk radius that bring ``spacing`` down to ``target``.

    Areal density scales with 1/spacing**2, so K = round((s/t)**2 - 1), at least 1.
    """
    K = max(1, int(math.floor((spacing / target) ** 2 - 1.0 + 0.5)))
    return K, radius_scale * spacing


def resample_to_spacing(cloud: PointCloud, target: float, cfg: CgaConfig = CgaConfig(),
                        rng: Optional[np.random.Generator] = None,
                        spacing: Optional[float] = None,
                        counters: Optional[Counter] = None) -> PointCloud:
    lo, hi = cfg.spacing_range
    if not lo <= target <= hi:
        raise InvalidArgumentError(f"target spacing {target} outside [{lo}, {hi}]")
    s = estimate_mean_spacing(cloud) if spacing is None else spacing
    if abs(target - s) <= SPACING_TOLERANCE * s:
        return cloud
    if target > s:
        return sparsify(cloud, target)
    K, r = densify_params(s, target, cfg.densify_radius_scale)
    return densify(cloud, K, r, cfg.normal_k, rng, counters)


def sample_viewpoint(cloud: PointCloud, ground_class: Optional[int], heights,
                     rng: np.random.Generator) -> np.ndarray:
    """Random ground point lifted by a random height from ``heights``.

    Without labels (or ``ground_class=None``) the lowest 5 % of points by z
    stand in for the ground.
    """
    if len(cloud) == 0:
        raise EmptyInputError("cannot pick a viewpoint in an empty cloud")
    heights = tuple(sorted(float(h) for h in heights))
    if not heights:
        raise InvalidArgumentError("no view heights given")
    if ground_class is not None and cloud.labels is not None:
        cand = np.flatnonzero(cloud.labels == ground_class)
        if len(cand) == 0:
            raise NoGroundPointsError(f"no point carries ground class {ground_class}")
    else:
        n_low = max(1, math.ceil(LOWEST_FRACTION * len(cloud)))
        cand = np.argsort(cloud.points[:, 2], kind="stable")[:n_low]
    p = cloud.points[cand[rng.integers(len(cand))]]
    h = heights[rng.integers(len(heights))]
    return np.array([p[0], p[1], p[2] + h])


class SphericalCoord(NamedTuple):
    r: float
    theta: float
    phi: float


def _wrap_phi(phi):
    phi = np.where(phi < 0, phi + 2.0 * np.pi, phi)
    return np.where(phi >= 2.0 * np.pi, 0.0, phi)


def spherical(points, viewpoint):
    """Vectorised (r, theta, phi) of ``points`` relative to ``viewpoint``."""
    d = np.asarray(points, dtype=np.float64) - np.asarray(viewpoint, dtype=np.float64)
    r = np.sqrt(np.einsum("ij,ij->i", d, d))
    with np.errstate(invalid="ignore", divide="ignore"):
        theta = np.arccos(np.clip(d[:, 2] / r, -1.0, 1.0))
    phi = _wrap_phi(np.arctan2(d[:, 1], d[:, 0]))
    return r, theta, phi


def to_spherical(x, viewpoint) -> SphericalCoord:
    r, theta, phi = spherical(np.asarray(x, dtype=np.float64).reshape(1, 3), viewpoint)
    if r[0] == 0:
        raise CoincidentViewpointError("point coincides with the viewpoint")
    return SphericalCoord(float(r[0]), float(theta[0]), float(phi[0]))


def angular_bins(theta, phi, delta_alpha):
    """Flat bin id theta_bin * M_phi + phi_bin with M_phi = ceil(2*pi / delta_alpha)."""
    m_phi = math.ceil(2.0 * math.pi / delta_alpha)
    tb = np.floor(theta / delta_alpha).astype(np.int64)
    pb = np.minimum(np.floor(phi / delta_alpha).astype(np.int64), m_phi - 1)
    return tb * m_phi + pb


def visibility_filter(cloud: PointCloud, viewpoint, delta_alpha: float,
                      counters: Optional[Counter] = None) -> PointCloud:
    """Keep the nearest point of every non-empty angular bin seen from ``viewpoint``."""
    if len(cloud) == 0:
        raise EmptyInputError("cannot filter an empty cloud")
    if not delta_alpha > 0:
        raise InvalidArgumentError(f"angular resolution must be > 0, got {delta_alpha}")
    r, theta, phi = spherical(cloud.points, viewpoint)
    valid = np.flatnonzero(r > 0)
    if len(valid) < len(cloud):
        log.warning("visibility: dropped %d points coincident with the viewpoint",
                    len(cloud) - len(valid))
        if counters is not None:
            counters["coincident_points"] += len(cloud) - len(valid)
        if len(valid) == 0:
            raise EmptyOutputError("every point coincides with the viewpoint")
    h = angular_bins(theta[valid], phi[valid], delta_alpha)
    keep = valid[_group_first(h, r[valid])]
    return cloud.take(keep)


def cga(cloud: PointCloud, cfg: CgaConfig = CgaConfig(),
        rng: Optional[np.random.Generator] = None,
        counters: Optional[Counter] = None) -> PointCloud:
    """Produce one view-dependent variant of ``cloud`` according to ``cfg.mode``."""
    if len(cloud) < 2:
        raise InvalidArgumentError("augmentation needs at least 2 points")
    if rng is None:
        rng = make_rng(0)
    mode = cfg.mode
    if mode == "random_pick":
        mode = "density_only" if rng.random() < 0.5 else "visibility_only"

    out = cloud
    if mode in ("density_only", "both"):
        target = float(rng.uniform(*cfg.spacing_range))
        out = resample_to_spacing(out, target, cfg, rng, counters=counters)
    if mode in ("visibility_only", "both"):
        vp = sample_viewpoint(out, cfg.ground_class, cfg.view_heights, rng)
        out = visibility_filter(out, vp, cfg.angular_resolution, counters)
    return out
