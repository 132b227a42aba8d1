"""Exact k-nearest-neighbour search, PCA normals and tangent frames."""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateGeometryError, EmptyInputError, InvalidArgumentError

DEFAULT_NORMAL_K = 16
DEGENERACY_RATIO = 1e-12
SIGN_SNAP = 1e-12


class NeighborIndex:
    """Immutable exact KNN index over a fixed point set.

    Results are sorted by Euclidean distance, ties broken by ascending point
    id. The kd-tree only proposes candidates; distances are recomputed here
    so ordering does not depend on tree internals.
    """

    def __init__(self, points):
        pts = np.array(points, dtype=np.float64, copy=True)
        if pts.size == 0:
            raise EmptyInputError("cannot index an empty point set")
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise InvalidArgumentError(f"points must have shape (N, 3), got {pts.shape}")
        if not np.isfinite(pts).all():
            raise InvalidArgumentError("points must be finite")
        pts.setflags(write=False)
        self.points = pts
        self._tree = cKDTree(pts)

    @property
    def n(self):
        return len(self.points)

    def __len__(self):
        return len(self.points)

    def query(self, queries, k):
        """Batched KNN. Returns ``(ids, dists)``, each of shape (Q, min(k, N))."""
        if int(k) != k or k < 1:
            raise InvalidArgumentError(f"k must be a positive integer, got {k}")
        q = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        if not np.isfinite(q).all():
            raise InvalidArgumentError("query points must be finite")
        n = self.n
        k = min(int(k), n)
        if len(q) == 0:
            return np.empty((0, k), np.int64), np.empty((0, k))

        # One extra candidate reveals ties straddling the k-th position.
        kq = min(k + 1, n)
        _, cand = self._tree.query(q, k=kq)
        cand = np.asarray(cand, dtype=np.int64).reshape(len(q), kq)
        d = self._dist(q[:, None, :], cand)
        order = np.lexsort((cand, d), axis=-1)
        cand = np.take_along_axis(cand, order, axis=1)
        d = np.take_along_axis(d, order, axis=1)
        ids, dists = cand[:, :k].copy(), d[:, :k].copy()

        if kq > k:
            for row in np.flatnonzero(d[:, k] <= d[:, k - 1]):
                ids[row], dists[row] = self._query_ties(q[row], k, d[row, k - 1])
        return ids, dists

    def knn(self, query, k):
        """Nearest ``min(k, N)`` points to one query as ``[(id, distance), ...]``."""
        ids, dists = self.query(np.asarray(query, dtype=np.float64).reshape(1, 3), k)
        return [(int(i), float(d)) for i, d in zip(ids[0], dists[0])]

    def count_within(self, queries, radius):
        """Number of indexed points within ``radius`` of each query (inclusive)."""
        return np.asarray(self._tree.query_ball_point(
            np.asarray(queries, dtype=np.float64), r=radius, return_length=True))

    def _dist(self, q, ids):
        diff = self.points[ids] - q
        return np.sqrt(np.einsum("...i,...i->...", diff, diff))

    def _query_ties(self, q, k, dk):
        cand = np.asarray(
            self._tree.query_ball_point(q, r=dk * (1 + 1e-9) + 1e-300), dtype=np.int64)
        d = self._dist(q, cand)
        order = np.lexsort((cand, d))[:k]
        return cand[order], d[order]


def build_index(points) -> NeighborIndex:
    return NeighborIndex(points)


def knn(index: NeighborIndex, query, k: int):
    return index.knn(query, k)


class LocalFrame(NamedTuple):
    u: np.ndarray
    v: np.ndarray
    n: np.ndarray


def canonicalize_sign(normals):
    """Flip normals so z >= 0, then y >= 0 when z == 0, then x > 0 when y == 0.

    Components within 1e-12 of zero are snapped to zero first, so rounding
    noise in the eigensolver cannot decide the sign.
    """
    n = np.array(normals, dtype=np.float64).reshape(-1, 3)
    n[np.abs(n) <= SIGN_SNAP] = 0.0
    x, y, z = n[:, 0], n[:, 1], n[:, 2]
    flip = (z < 0) | ((z == 0) & (y < 0)) | ((z == 0) & (y == 0) & (x < 0))
    n[flip] *= -1.0
    return n


def _pca_normals(neigh):
    """Smallest-eigenvalue eigenvectors of (B, k, 3) neighbourhoods."""
    centered = neigh - neigh.mean(axis=1, keepdims=True)
    cov = np.einsum("bki,bkj->bij", centered, centered) / neigh.shape[1]
    w, vecs = np.linalg.eigh(cov)
    degenerate = ~(w[:, 1] >= DEGENERACY_RATIO * w[:, 2]) | ~(w[:, 2] > 0)
    normals = canonicalize_sign(vecs[:, :, 0])
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return normals, degenerate


def estimate_normals(index: NeighborIndex, k: int = DEFAULT_NORMAL_K, ids=None,
                     chunk: int = 65536):
    """PCA normals for many indexed points.

    The neighbourhood of each point includes the point itself. Returns
    ``(normals, degenerate)``; degenerate rows hold NaN.
    """
    if int(k) != k or k < 3:
        raise InvalidArgumentError(f"normal estimation needs k >= 3, got {k}")
    ids = np.arange(index.n) if ids is None else np.asarray(ids, dtype=np.int64)
    normals = np.empty((len(ids), 3))
    degenerate = np.empty(len(ids), dtype=bool)
    for s in range(0, len(ids), chunk):
        sl = slice(s, s + chunk)
        nbr, _ = index.query(index.points[ids[sl]], k)
        normals[sl], degenerate[sl] = _pca_normals(index.points[nbr])
    normals[degenerate] = np.nan
    return normals, degenerate


def estimate_normal(index: NeighborIndex, point_id: int, k: int = DEFAULT_NORMAL_K):
    if not 0 <= point_id < index.n:
        raise InvalidArgumentError(f"point id {point_id} out of range")
    normals, degenerate = estimate_normals(index, k, ids=[point_id])
    if degenerate[0]:
        raise DegenerateGeometryError(
            f"neighbourhood of point {point_id} is collinear or coincident")
    return normals[0]


def local_frames(normals):
    """Vectorised :func:`local_frame`; returns (u, v, n) arrays of shape (B, 3)."""
    n = np.asarray(normals, dtype=np.float64).reshape(-1, 3)
    norm = np.linalg.norm(n, axis=1)
    if not np.all(np.abs(norm - 1.0) <= 1e-6):
        raise InvalidArgumentError("normals must be unit vectors")
    n = n / norm[:, None]
    # argmin returns the first axis on ties, i.e. x before y before z.
    axis = np.argmin(np.abs(n), axis=1)
    e = np.zeros_like(n)
    e[np.arange(len(n)), axis] = 1.0
    u = e - np.sum(e * n, axis=1, keepdims=True) * n
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    v = np.cross(n, u)
    return u, v, n


def local_frame(n) -> LocalFrame:
    n = np.asarray(n, dtype=np.float64)
    if n.shape != (3,) or not math.isclose(float(np.linalg.norm(n)), 1.0, abs_tol=1e-6):
        raise InvalidArgumentError(f"local frame needs a unit 3-vector, got {n}")
    u, v, nn = local_frames(n[None])
    return LocalFrame(u[0], v[0], nn[0])
