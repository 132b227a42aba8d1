"""Self-supervised occupancy targets and the per-voxel occupancy head.

The occupancy grid over a bounded voxel domain is built from the source
cloud only; features from any view are interpolated onto every voxel of that
domain with inverse-distance weights over the k nearest points, and a small
two-layer head predicts occupancy probabilities trained with summed BCE.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit, logsumexp

from .core import PointCloud, voxel_indices
from .errors import (
    DivergenceError,
    DomainViolationError,
    EmptyInputError,
    InvalidArgumentError,
    InvalidLabelError,
    MissingFeaturesError,
    ParseError,
)
from .neighbors import NeighborIndex, estimate_normals

PROB_CLAMP = 1e-7
DEFAULT_EPS = 1e-8
DEFAULT_HIDDEN = 16
INIT_SCALE = 0.1


@dataclass(frozen=True, eq=False)
class OccupancyGrid:
    """Binary occupancy over the inclusive voxel box ``lo .. hi``.

    ``occupied`` is an (N, 3) int64 array of occupied voxels, sorted
    lexicographically without duplicates.
    """

    voxel_size: float
    lo: tuple
    hi: tuple
    occupied: np.ndarray

    def __post_init__(self):
        lo = tuple(int(c) for c in self.lo)
        hi = tuple(int(c) for c in self.hi)
        if len(lo) != 3 or len(hi) != 3 or any(a > b for a, b in zip(lo, hi)):
            raise InvalidArgumentError(f"invalid voxel domain {lo} .. {hi}")
        occ = np.unique(np.asarray(self.occupied, dtype=np.int64).reshape(-1, 3), axis=0)
        if len(occ) and ((occ < lo).any() or (occ > hi).any()):
            raise DomainViolationError("occupied voxel outside the domain")
        occ.setflags(write=False)
        object.__setattr__(self, "voxel_size", float(self.voxel_size))
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "occupied", occ)

    @property
    def shape(self):
        return tuple(h - l + 1 for l, h in zip(self.lo, self.hi))

    @property
    def size(self):
        return math.prod(self.shape)

    def coords(self) -> np.ndarray:
        """All domain voxels in lexicographic (i, j, k) order."""
        grid = np.indices(self.shape).reshape(3, -1).T
        return grid + np.asarray(self.lo, dtype=np.int64)

    def labels(self) -> np.ndarray:
        """O(u) in {0, 1} for every voxel, in :meth:`coords` order."""
        mask = np.zeros(self.shape, dtype=np.float64)
        if len(self.occupied):
            rel = self.occupied - np.asarray(self.lo)
            mask[rel[:, 0], rel[:, 1], rel[:, 2]] = 1.0
        return mask.reshape(-1)

    def occupied_set(self):
        return {tuple(int(c) for c in row) for row in self.occupied}

    def __eq__(self, other):
        if not isinstance(other, OccupancyGrid):
            return NotImplemented
        return (self.voxel_size == other.voxel_size and self.lo == other.lo
                and self.hi == other.hi and np.array_equal(self.occupied, other.occupied))

    def to_text(self) -> str:
        head = "OCC v={!r} domain={}".format(self.voxel_size, " ".join(map(str, self.lo + self.hi)))
        rows = ["{} {} {}".format(*row) for row in self.occupied.tolist()]
        return "\n".join([head, *rows]) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "OccupancyGrid":
        lines = text.splitlines()
        if not lines:
            raise ParseError("empty occupancy file", 1)
        head = lines[0].split()
        try:
            if head[0] != "OCC" or not head[1].startswith("v=") or not head[2].startswith("domain="):
                raise ValueError
            v = float(head[1][2:])
            dom = [int(head[2][7:])] + [int(t) for t in head[3:8]]
            if len(dom) != 6 or len(head) != 8:
                raise ValueError
        except (ValueError, IndexError):
            raise ParseError("expected 'OCC v=<float> domain=<i0 j0 k0 i1 j1 k1>'", 1) from None
        occ = []
        for no, line in enumerate(lines[1:], start=2):
            parts = line.split()
            if not parts:
                continue
            try:
                if len(parts) != 3:
                    raise ValueError
                occ.append([int(p) for p in parts])
            except ValueError:
                raise ParseError(f"expected 'i j k', got {line!r}", no) from None
        return cls(v, dom[:3], dom[3:], np.array(occ, dtype=np.int64).reshape(-1, 3))

    def save(self, path):
        with open(path, "w", newline="\n") as fh:
            fh.write(self.to_text())

    @classmethod
    def load(cls, path) -> "OccupancyGrid":
        with open(path) as fh:
            return cls.from_text(fh.read())


def build_occupancy(cloud: PointCloud, v: float, domain: Optional[tuple] = None) -> OccupancyGrid:
    """Occupancy grid of ``cloud`` at voxel size ``v``.

    ``domain`` is an inclusive voxel box ``(lo, hi)``; by default the
    voxelised bounding box of the cloud.
    """
    if len(cloud) == 0:
        raise EmptyInputError("cannot build occupancy from an empty cloud")
    vox = voxel_indices(cloud.points, v)
    if domain is None:
        lo, hi = vox.min(axis=0), vox.max(axis=0)
    else:
        lo, hi = (np.asarray(b, dtype=np.int64) for b in domain)
        if (vox < lo).any() or (vox > hi).any():
            raise DomainViolationError("cloud has points outside the given domain")
    return OccupancyGrid(v, tuple(lo), tuple(hi), vox)


def restrict_to_domain(cloud: PointCloud, grid: OccupancyGrid) -> PointCloud:
    """Points of ``cloud`` whose voxel lies inside ``grid``'s domain."""
    vox = voxel_indices(cloud.points, grid.voxel_size)
    inside = ((vox >= grid.lo) & (vox <= grid.hi)).all(axis=1)
    return cloud.take(np.flatnonzero(inside))


@dataclass(frozen=True, eq=False)
class VoxelFeatures:
    coords: np.ndarray      # (n, 3) int64, lexicographic
    feats: np.ndarray       # (n, D)
    neighbors: np.ndarray   # (n, k) point ids
    weights: np.ndarray     # (n, k) normalised IDW weights

    def __len__(self):
        return len(self.coords)

    @property
    def dim(self):
        return self.feats.shape[1]


def idw_weights(dists, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Normalised inverse-distance weights 1/(d + eps), rows summing to 1."""
    w = 1.0 / (np.asarray(dists, dtype=np.float64) + eps)
    return w / w.sum(axis=-1, keepdims=True)


def voxel_centers(coords, v: float) -> np.ndarray:
    return (np.asarray(coords, dtype=np.float64) + 0.5) * v


def aggregate_voxel_features(grid: OccupancyGrid, cloud: PointCloud, k: int = 3,
                             eps: float = DEFAULT_EPS,
                             index: Optional[NeighborIndex] = None) -> VoxelFeatures:
    """Interpolate per-point features onto every voxel of the grid's domain."""
    if cloud.features is None:
        raise MissingFeaturesError("cloud carries no features to aggregate")
    if int(k) != k or k < 1:
        raise InvalidArgumentError(f"k must be >= 1, got {k}")
    if not eps > 0:
        raise InvalidArgumentError(f"eps must be > 0, got {eps}")
    if index is None:
        index = NeighborIndex(cloud.points)
    coords = grid.coords()
    ids, dists = index.query(voxel_centers(coords, grid.voxel_size), k)
    w = idw_weights(dists, eps)
    nb = cloud.features[ids]
    # Clipping to the neighbour range removes rounding drift, so equal
    # neighbour features reproduce exactly.
    feats = np.clip(np.einsum("nk,nkd->nd", w, nb), nb.min(axis=1), nb.max(axis=1))
    return VoxelFeatures(coords, feats, ids, w)


@dataclass(frozen=True, eq=False)
class HeadParams:
    """Per-voxel head: sigmoid(W2 @ relu(W1 @ f + b1) + b2)."""

    W1: np.ndarray  # (H, D)
    b1: np.ndarray  # (H,)
    W2: np.ndarray  # (1, H)
    b2: float

    def __post_init__(self):
        W1 = np.array(self.W1, dtype=np.float64)
        b1 = np.array(self.b1, dtype=np.float64).reshape(-1)
        W2 = np.array(self.W2, dtype=np.float64).reshape(1, -1)
        if W1.ndim != 2 or len(b1) != W1.shape[0] or W2.shape[1] != W1.shape[0]:
            raise InvalidArgumentError(
                f"inconsistent head shapes W1{W1.shape} b1{b1.shape} W2{W2.shape}")
        object.__setattr__(self, "W1", W1)
        object.__setattr__(self, "b1", b1)
        object.__setattr__(self, "W2", W2)
        object.__setattr__(self, "b2", float(self.b2))

    @property
    def hidden(self):
        return self.W1.shape[0]

    @property
    def dim(self):
        return self.W1.shape[1]

    def flat(self) -> np.ndarray:
        return np.concatenate([self.W1.ravel(), self.b1, self.W2.ravel(), [self.b2]])

    def unflat(self, vec) -> "HeadParams":
        h, d = self.W1.shape
        vec = np.asarray(vec, dtype=np.float64)
        return HeadParams(vec[:h * d].reshape(h, d), vec[h * d:h * d + h],
                          vec[h * d + h:h * d + 2 * h].reshape(1, h), vec[-1])

    def step(self, grad: "HeadParams", lr: float) -> "HeadParams":
        return HeadParams(self.W1 - lr * grad.W1, self.b1 - lr * grad.b1,
                          self.W2 - lr * grad.W2, self.b2 - lr * grad.b2)


def init_head(dim: int, hidden: int = DEFAULT_HIDDEN,
              rng: Optional[np.random.Generator] = None) -> HeadParams:
    """Uniform [-0.1, 0.1] initialisation, drawn in the order W1, b1, W2, b2."""
    if rng is None:
        rng = np.random.default_rng(0)
    u = lambda *shape: rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape)
    return HeadParams(u(hidden, dim), u(hidden), u(1, hidden), float(u(1)[0]))


def _feats(vf):
    return vf.feats if isinstance(vf, VoxelFeatures) else np.asarray(vf, dtype=np.float64)


def _forward(params: HeadParams, F):
    if F.ndim != 2 or F.shape[1] != params.dim:
        raise InvalidArgumentError(
            f"features of dimension {F.shape[-1]} for a head expecting {params.dim}")
    z1 = F @ params.W1.T + params.b1
    a = np.maximum(z1, 0.0)
    z2 = a @ params.W2[0] + params.b2
    return z1, a, expit(z2)


def head_forward(params: HeadParams, vf) -> np.ndarray:
    """Occupancy probability per voxel, in the order of ``vf.coords``."""
    return _forward(params, _feats(vf))[2]


def _targets(grid, n):
    y = grid.labels() if isinstance(grid, OccupancyGrid) else np.asarray(grid, dtype=np.float64)
    if len(y) != n:
        raise InvalidArgumentError(f"{n} predictions for {len(y)} voxels")
    return y


def bce_loss(probs, grid) -> float:
    """Binary cross-entropy summed over the domain; ``grid`` may also be a 0/1 array."""
    p = np.asarray(probs, dtype=np.float64).reshape(-1)
    y = _targets(grid, len(p))
    p = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return float(-np.sum(y * np.log(p) + (1.0 - y) * np.log1p(-p)))


def bce_grad(params: HeadParams, vf, grid) -> HeadParams:
    """Exact gradient of ``bce_loss(head_forward(params, vf), grid)``.

    Where the probability is clamped the loss is locally constant, so those
    voxels contribute nothing; the ReLU subgradient at 0 is 0.
    """
    F = _feats(vf)
    z1, a, p = _forward(params, F)
    y = _targets(grid, len(p))
    live = (p > PROB_CLAMP) & (p < 1.0 - PROB_CLAMP)
    g = np.where(live, p - y, 0.0)
    dz1 = (g[:, None] * params.W2[0]) * (z1 > 0)
    return HeadParams(dz1.T @ F, dz1.sum(axis=0), (g @ a)[None, :], g.sum())


def train_head(params0: HeadParams, vf, grid, steps: int, lr: float):
    """Plain gradient descent on the mean BCE over one or more views.

    ``vf`` is a :class:`VoxelFeatures` or a sequence of them, all on the
    domain of ``grid``; their summed losses share one head. The descent
    direction is the gradient of the mean loss (sum / (views * |domain|)).
    Returns ``(params, trace)`` with ``trace[t]`` the mean loss after ``t``
    updates (``steps + 1`` entries). Non-finite parameters count as
    divergence too, since the probability clamp can keep the loss finite.
    """
    if int(steps) != steps or steps < 1:
        raise InvalidArgumentError(f"steps must be >= 1, got {steps}")
    if not lr >= 0:
        raise InvalidArgumentError(f"learning rate must be >= 0, got {lr}")
    views = [vf] if isinstance(vf, VoxelFeatures) or not isinstance(vf, Sequence) else list(vf)
    y = grid.labels() if isinstance(grid, OccupancyGrid) else np.asarray(grid, dtype=np.float64)
    scale = 1.0 / (len(views) * len(y))

    def mean_loss(p):
        return scale * sum(bce_loss(head_forward(p, v), y) for v in views)

    params = params0
    trace = [mean_loss(params)]
    for step in range(1, int(steps) + 1):
        if lr > 0:
            grads = [bce_grad(params, v, y) for v in views]
            total = params.unflat(scale * sum(g.flat() for g in grads))
            params = params.step(total, lr)
        loss = mean_loss(params) if np.isfinite(params.flat()).all() else math.nan
        if not math.isfinite(loss):
            raise DivergenceError(step, loss)
        trace.append(loss)
    return params, trace


def semantic_ce_loss(logits, labels, ignore_id: int) -> float:
    """Mean softmax cross-entropy over points whose label is not ``ignore_id``."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if logits.ndim != 2 or len(logits) != len(labels):
        raise InvalidArgumentError(f"{len(logits)} logit rows for {len(labels)} labels")
    c = logits.shape[1]
    if c < 2:
        raise InvalidArgumentError("need at least 2 classes")
    scored = labels != ignore_id
    bad = scored & ((labels < 0) | (labels >= c))
    if bad.any():
        raise InvalidLabelError(f"label {labels[bad][0]} outside [0, {c})")
    if not scored.any():
        return 0.0
    lg = logits[scored]
    nll = logsumexp(lg, axis=1) - lg[np.arange(len(lg)), labels[scored]]
    return float(nll.mean())


def total_loss(sem_s: float, sem_a: float, bce_s: float, bce_a: float) -> float:
    """Unweighted four-term sum, added in the fixed order given."""
    terms = (sem_s, sem_a, bce_s, bce_a)
    for t in terms:
        if not (math.isfinite(t) and t >= 0):
            raise InvalidArgumentError(f"loss terms must be finite and >= 0, got {terms}")
    return sem_s + sem_a + bce_s + bce_a


def handcrafted_features(cloud: PointCloud, index: Optional[NeighborIndex] = None,
                         normal_k: int = 16, radius: float = 1.0) -> PointCloud:
    """Attach 3 geometric features per point: height above the cloud minimum,
    log(1 + neighbours within ``radius``), and |n_z| of the PCA normal
    (0 where the normal is degenerate)."""
    if len(cloud) < max(3, normal_k):
        raise InvalidArgumentError(
            f"need at least {max(3, normal_k)} points, got {len(cloud)}")
    if index is None:
        index = NeighborIndex(cloud.points)
    pts = cloud.points
    height = pts[:, 2] - pts[:, 2].min()
    count = index.count_within(pts, radius) - 1
    normals, degenerate = estimate_normals(index, normal_k)
    nz = np.where(degenerate, 0.0, np.abs(normals[:, 2]))
    return cloud.replace(features=np.stack([height, np.log1p(count), nz], axis=1))
