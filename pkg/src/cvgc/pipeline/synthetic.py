"""Synthetic urban block: ground plane, box buildings and thin posts."""

from __future__ import annotations

import numpy as np

from ..core import PointCloud

GROUND, BUILDING, POST = 0, 1, 4

# (x0, x1, y0, y1, height)
BOXES = ((5.0, 13.0, 6.0, 16.0, 8.0), (22.0, 32.0, 4.0, 12.0, 12.0), (18.0, 30.0, 24.0, 36.0, 20.0))
POST_RADIUS = 0.15
POST_HEIGHT = 6.0
POST_DENSITY_BOOST = 4.0


def _inside_any_box(xy, margin=0.0):
    hit = np.zeros(len(xy), dtype=bool)
    for x0, x1, y0, y1, _ in BOXES:
        hit |= ((xy[:, 0] >= x0 - margin) & (xy[:, 0] <= x1 + margin)
                & (xy[:, 1] >= y0 - margin) & (xy[:, 1] <= y1 + margin))
    return hit


def synthetic_scene(n_points: int = 50_000, size: float = 40.0, n_posts: int = 12,
                    seed: int = 0) -> PointCloud:
    """Labelled scene of roughly ``n_points`` points uniformly spread over surface area.

    Labels: 0 ground, 1 building, 4 post (the group-1 shared taxonomy).
    """
    rng = np.random.default_rng(seed)

    posts = []
    while len(posts) < n_posts:
        xy = rng.uniform(1.0, size - 1.0, size=(1, 2))
        if not _inside_any_box(xy, margin=1.0)[0]:
            posts.append(xy[0])
    posts = np.array(posts)

    # (kind, area, sampler) per surface
    surfaces = []
    footprint = sum((x1 - x0) * (y1 - y0) for x0, x1, y0, y1, _ in BOXES)
    surfaces.append((GROUND, size * size - footprint, None))
    for box in BOXES:
        x0, x1, y0, y1, h = box
        surfaces.append((BUILDING, (x1 - x0) * (y1 - y0), ("roof", box)))
        for wall in range(4):
            length = (x1 - x0) if wall < 2 else (y1 - y0)
            surfaces.append((BUILDING, length * h, ("wall", box, wall)))
    for p in posts:
        area = 2 * np.pi * POST_RADIUS * POST_HEIGHT * POST_DENSITY_BOOST
        surfaces.append((POST, area, ("post", p)))

    areas = np.array([a for _, a, _ in surfaces])
    counts = np.floor(n_points * areas / areas.sum()).astype(int)
    counts[0] += n_points - counts.sum()

    pts, labels = [], []
    for (kind, _, geom), n in zip(surfaces, counts):
        if geom is None:
            got = np.empty((0, 3))
            while len(got) < n:
                xy = rng.uniform(0.0, size, size=(2 * n, 2))
                xy = xy[~_inside_any_box(xy)]
                got = np.vstack([got, np.column_stack([xy, np.zeros(len(xy))])])
            p = got[:n]
        elif geom[0] == "roof":
            x0, x1, y0, y1, h = geom[1]
            p = np.column_stack([rng.uniform(x0, x1, n), rng.uniform(y0, y1, n), np.full(n, h)])
        elif geom[0] == "wall":
            (x0, x1, y0, y1, h), wall = geom[1], geom[2]
            t, z = rng.random(n), rng.uniform(0.0, h, n)
            if wall < 2:
                p = np.column_stack([x0 + t * (x1 - x0), np.full(n, (y0, y1)[wall]), z])
            else:
                p = np.column_stack([np.full(n, (x0, x1)[wall - 2]), y0 + t * (y1 - y0), z])
        else:
            a = rng.uniform(0.0, 2 * np.pi, n)
            c = geom[1]
            p = np.column_stack([c[0] + POST_RADIUS * np.cos(a), c[1] + POST_RADIUS * np.sin(a),
                                 rng.uniform(0.0, POST_HEIGHT, n)])
        pts.append(p)
        labels.append(np.full(len(p), kind))
    return PointCloud(np.vstack(pts), np.concatenate(labels))
