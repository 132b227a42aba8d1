import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cvgc.augment import (
    CgaConfig,
    cga,
    densify,
    densify_params,
    estimate_mean_spacing,
    make_rng,
    resample_to_spacing,
    sample_viewpoint,
    sparsify,
    to_spherical,
    visibility_filter,
)
from cvgc.core import PointCloud, voxel_index
from cvgc.errors import (
    CoincidentViewpointError,
    EmptyOutputError,
    InvalidArgumentError,
    NoGroundPointsError,
)
from cvgc.neighbors import build_index, estimate_normals


def sparsify_oracle(pts, v):
    """Group by voxel, average in index order, scan for the centroid-nearest point."""
    groups = {}
    for i, p in enumerate(pts.tolist()):
        groups.setdefault(voxel_index(p, v), []).append(i)
    keep = []
    for members in groups.values():
        c = [0.0, 0.0, 0.0]
        for i in members:
            for a in range(3):
                c[a] += pts[i, a]
        c = [s / len(members) for s in c]
        d = [math.dist(pts[i].tolist(), c) for i in members]
        dmin = min(d)
        keep.append(next(i for i, di in zip(members, d) if di <= dmin + 1e-9 * v))
    return sorted(keep)


def visibility_oracle(pts, vp, delta):
    """Hash (theta_bin, phi_bin) pairs and keep the per-bin minimum radius."""
    best = {}
    for i, p in enumerate(pts.tolist()):
        dx, dy, dz = p[0] - vp[0], p[1] - vp[1], p[2] - vp[2]
        r = math.sqrt(dx * dx + dy * dy + dz * dz)
        if r == 0:
            continue
        theta = math.acos(max(-1.0, min(1.0, dz / r)))
        phi = math.atan2(dy, dx)
        if phi < 0:
            phi += 2 * math.pi
        if phi >= 2 * math.pi:
            phi = 0.0
        key = (math.floor(theta / delta), math.floor(phi / delta))
        if key not in best or r < best[key][0]:
            best[key] = (r, i)
    return sorted(i for _, i in best.values())


def index_of_rows(sub, full):
    """Row positions of ``sub`` inside ``full`` (rows assumed unique)."""
    lookup = {tuple(r): i for i, r in enumerate(full.tolist())}
    return [lookup[tuple(r)] for r in sub.tolist()]


# -- densify ----------------------------------------------------------------

def test_densify_k0_identity(rng):
    c = PointCloud(rng.random((20, 3)), labels=np.arange(20))
    assert densify(c, 0, 0.1, rng=make_rng(1)).equals(c)


def test_densify_small_planar_patch():
    c = PointCloud([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]])
    out = densify(c, 3, 0.1, rng=make_rng(3))
    assert len(out) == 16
    assert np.array_equal(out.points[:4], c.points)
    synth = out.points[4:]
    parents = np.repeat(c.points, 3, axis=0)
    assert np.all(np.abs(synth[:, 2]) <= 1e-9)
    assert np.all(np.linalg.norm(synth[:, :2] - parents[:, :2], axis=1) <= 0.1)


def test_densify_mean_radius_is_two_thirds_r(rng):
    r = 0.1
    c = PointCloud(np.column_stack([rng.uniform(0, 10, (1000, 2)), np.zeros(1000)]))
    out = densify(c, 2, r, rng=make_rng(5))
    off = np.linalg.norm(out.points[1000:] - np.repeat(c.points, 2, axis=0), axis=1)
    assert abs(off.mean() - 2 * r / 3) <= 0.002


def test_densify_inherits_attributes(rng):
    pts = np.column_stack([rng.random((50, 2)), np.zeros(50)])
    c = PointCloud(pts, labels=np.arange(50), features=np.arange(100.0).reshape(50, 2))
    out = densify(c, 2, 0.05, rng=make_rng(0))
    assert out.labels[50:].tolist() == np.repeat(np.arange(50), 2).tolist()
    assert np.array_equal(out.features[50:], np.repeat(c.features, 2, axis=0))


def test_densify_skips_degenerate_points():
    line = np.column_stack([np.arange(10.0), np.zeros(10), np.zeros(10)])
    counters = Counter()
    out = densify(PointCloud(line), 4, 0.1, normal_k=5, rng=make_rng(0), counters=counters)
    assert len(out) == 10 and counters["degenerate_normals"] == 10


def test_densify_needs_three_points():
    with pytest.raises(InvalidArgumentError):
        densify(PointCloud([[0, 0, 0], [1, 0, 0]]), 1, 0.1)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 4), st.floats(0.01, 2.0))
def test_densify_geometry_invariants(seed, K, r):
    g = np.random.default_rng(seed)
    # random tilted plane through the origin
    normal = g.normal(size=3)
    normal /= np.linalg.norm(normal)
    basis = np.linalg.svd(normal[None])[2][1:]
    pts = g.uniform(-5, 5, (80, 2)) @ basis
    c = PointCloud(pts)
    out = densify(c, K, r, rng=make_rng(seed))
    assert len(out) == 80 * (1 + K)
    normals, _ = estimate_normals(build_index(pts), 16)
    off = out.points[80:] - np.repeat(pts, K, axis=0)
    assert np.all(np.abs(np.sum(off * np.repeat(normals, K, axis=0), axis=1)) <= 1e-9)
    assert np.all(np.linalg.norm(off, axis=1) <= r + 1e-12)


def test_densify_deterministic(rng):
    c = PointCloud(np.column_stack([rng.random((100, 2)), np.zeros(100)]))
    a = densify(c, 3, 0.1, rng=make_rng(9))
    b = densify(c, 3, 0.1, rng=make_rng(9))
    assert a.points.tobytes() == b.points.tobytes()


# -- sparsify ---------------------------------------------------------------

def test_sparsify_tie_keeps_lowest_index():
    out = sparsify(PointCloud([[0.1, 0, 0], [0.3, 0, 0]]), 1.0)
    assert out.points.tolist() == [[0.1, 0, 0]]


def test_sparsify_distinct_voxels_identity(rng):
    pts = (rng.permutation(1000)[:200, None] * np.array([1.0, 0, 0])) + 0.5
    c = PointCloud(pts, labels=np.arange(200))
    assert sparsify(c, 1.0).equals(c)


def test_sparsify_matches_oracle(rng):
    pts = rng.uniform(0, 4, (1000, 3))
    c = PointCloud(pts, labels=np.arange(1000))
    assert sparsify(c, 0.5).labels.tolist() == sparsify_oracle(pts, 0.5)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 400), st.floats(0.05, 3.0))
def test_sparsify_invariants(seed, n, v):
    pts = np.random.default_rng(seed).uniform(-5, 5, (n, 3))
    c = PointCloud(pts, labels=np.arange(n))
    out = sparsify(c, v)
    vox_out = [voxel_index(p, v) for p in out.points.tolist()]
    assert len(set(vox_out)) == len(vox_out)
    assert set(vox_out) == {voxel_index(p, v) for p in pts.tolist()}
    assert np.array_equal(out.points, pts[out.labels])  # membership, attributes travel
    assert np.all(np.diff(out.labels) > 0)  # order preserved
    assert sparsify(out, v).equals(out)


# -- spacing & resampling ---------------------------------------------------

def grid_cloud(pitch, n=30):
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    return PointCloud(np.column_stack([i.ravel() * pitch, j.ravel() * pitch, np.zeros(n * n)]))


def test_spacing_examples():
    assert estimate_mean_spacing(PointCloud([[0, 0, 0], [1, 0, 0]])) == 1.0
    assert abs(estimate_mean_spacing(grid_cloud(0.2)) - 0.2) <= 1e-9
    with pytest.raises(InvalidArgumentError):
        estimate_mean_spacing(PointCloud([[0, 0, 0]]))


def test_spacing_ignores_duplicates():
    c = PointCloud([[0, 0, 0], [0, 0, 0], [0, 0, 0], [0, 0, 0], [0, 0, 0], [2, 0, 0]])
    assert estimate_mean_spacing(c) == 2.0


def test_spacing_stable_under_shuffle(rng):
    pts = rng.uniform(0, 50, (30000, 3)) * [1, 1, 0.01]
    a = estimate_mean_spacing(PointCloud(pts))
    b = estimate_mean_spacing(PointCloud(rng.permutation(pts)))
    assert abs(a - b) <= 0.05 * a


def test_resample_identity_at_current_spacing():
    c = grid_cloud(0.2)
    assert resample_to_spacing(c, 0.2, CgaConfig(), make_rng(0)) is c


def test_resample_sparsifies_toward_larger_target():
    out = resample_to_spacing(grid_cloud(0.1, 60), 0.4, CgaConfig(), make_rng(0))
    assert 0.3 <= estimate_mean_spacing(out) <= 0.5


def test_resample_densifies_toward_smaller_target():
    c = grid_cloud(0.4, 20)
    assert densify_params(0.4, 0.2) == (3, 0.2)
    out = resample_to_spacing(c, 0.2, CgaConfig(), make_rng(0))
    assert len(out) == 4 * len(c)


def test_resample_rejects_out_of_range_target():
    with pytest.raises(InvalidArgumentError):
        resample_to_spacing(grid_cloud(0.2), 0.9, CgaConfig(), make_rng(0))


# -- viewpoint & spherical coordinates -------------------------------------

def test_viewpoint_on_labelled_ground(rng):
    pts = rng.uniform(0, 10, (200, 3))
    labels = (pts[:, 2] > 5).astype(int)
    c = PointCloud(pts, labels)
    heights = (2, 4, 8, 16, 32, 64)
    ground = {tuple(p) for p in pts[labels == 0].tolist()}
    for seed in range(30):
        vp = sample_viewpoint(c, 0, heights, make_rng(seed))
        hits = [g for g in ground if g[0] == vp[0] and g[1] == vp[1]]
        assert len(hits) == 1
        assert min(abs(vp[2] - hits[0][2] - h) for h in heights) <= 1e-9


def test_viewpoint_single_point_and_determinism():
    c = PointCloud([[1.0, 2.0, 3.0]])
    assert sample_viewpoint(c, None, [2], make_rng(0)).tolist() == [1.0, 2.0, 5.0]
    c = PointCloud(np.random.default_rng(1).random((100, 3)))
    a = sample_viewpoint(c, None, [2, 4], make_rng(42))
    b = sample_viewpoint(c, None, [2, 4], make_rng(42))
    assert a.tobytes() == b.tobytes()


def test_viewpoint_without_labels_uses_lowest_points(rng):
    pts = rng.random((400, 3))
    low = np.sort(pts[:, 2])[19]
    for seed in range(20):
        vp = sample_viewpoint(PointCloud(pts), None, [2.0], make_rng(seed))
        assert vp[2] - 2.0 <= low


def test_viewpoint_missing_ground_class():
    with pytest.raises(NoGroundPointsError):
        sample_viewpoint(PointCloud([[0, 0, 0]], labels=[1]), 0, [2], make_rng(0))


@pytest.mark.parametrize("d, expected", [
    ((0, 0, 1), (1, 0, 0)),
    ((1, 0, 0), (1, math.pi / 2, 0)),
    ((0, -1, 0), (1, math.pi / 2, 3 * math.pi / 2)),
])
def test_to_spherical_examples(d, expected):
    vp = np.array([3.0, -2.0, 1.0])
    got = to_spherical(vp + d, vp)
    assert got == pytest.approx(expected, abs=1e-12)


def test_to_spherical_coincident():
    with pytest.raises(CoincidentViewpointError):
        to_spherical((1, 1, 1), (1, 1, 1))


# -- visibility -------------------------------------------------------------

def test_visibility_same_ray_keeps_nearest():
    c = PointCloud([[0, 0, 2.0], [0, 0, 1.0]])
    out = visibility_filter(c, (0, 0, 0), 0.01)
    assert out.points.tolist() == [[0, 0, 1.0]]


def test_visibility_single_point():
    c = PointCloud([[1.0, 2.0, 3.0]])
    assert visibility_filter(c, (0, 0, 0), 0.01).equals(c)


def test_visibility_matches_oracle(rng):
    pts = rng.uniform(-20, 20, (2000, 3))
    vp = rng.uniform(-5, 5, 3)
    c = PointCloud(pts, labels=np.arange(2000))
    out = visibility_filter(c, vp, 0.01)
    assert out.labels.tolist() == visibility_oracle(pts, vp, 0.01)


def test_visibility_drops_coincident_points():
    counters = Counter()
    c = PointCloud([[0, 0, 0], [1, 0, 0]])
    out = visibility_filter(c, (0, 0, 0), 0.01, counters)
    assert out.points.tolist() == [[1, 0, 0]] and counters["coincident_points"] == 1
    with pytest.raises(EmptyOutputError):
        visibility_filter(PointCloud([[0, 0, 0]]), (0, 0, 0), 0.01)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from([2, 4]), st.floats(0.005, 0.5))
def test_visibility_refinement(seed, n, delta):
    g = np.random.default_rng(seed)
    pts = g.uniform(-10, 10, (500, 3))
    c = PointCloud(pts, labels=np.arange(500))
    vp = np.random.default_rng(seed).uniform(-10, 10, (501, 3))[-1]
    coarse = set(visibility_filter(c, vp, delta).labels.tolist())
    fine = set(visibility_filter(c, vp, delta / n).labels.tolist())
    assert coarse <= fine


# -- cga --------------------------------------------------------------------

def test_cga_density_only_pinned_spacing_is_identity():
    c = grid_cloud(0.2)
    s = estimate_mean_spacing(c)
    out = cga(c, CgaConfig(mode="density_only", spacing_range=(s, s)), make_rng(0))
    assert out.equals(c)


def test_cga_visibility_only_is_subset(rng):
    pts = rng.uniform(0, 20, (3000, 3))
    out = cga(PointCloud(pts), CgaConfig(mode="visibility_only"), make_rng(4))
    assert set(map(tuple, out.points.tolist())) <= set(map(tuple, pts.tolist()))


@pytest.mark.parametrize("mode", ["random_pick", "both", "density_only", "visibility_only"])
def test_cga_deterministic(mode, rng):
    pts = np.column_stack([rng.uniform(0, 10, (1500, 2)), rng.normal(0, 0.01, 1500)])
    c = PointCloud(pts, labels=rng.integers(0, 3, 1500))
    a = cga(c, CgaConfig(mode=mode), make_rng(77))
    b = cga(c, CgaConfig(mode=mode), make_rng(77))
    assert a.points.tobytes() == b.points.tobytes()
    assert a.labels.tobytes() == b.labels.tobytes()


def test_cga_config_validation():
    with pytest.raises(InvalidArgumentError):
        CgaConfig(mode="sideways")
    with pytest.raises(InvalidArgumentError):
        CgaConfig(spacing_range=(0.5, 0.1))
    with pytest.raises(InvalidArgumentError):
        CgaConfig(view_heights=(0.0,))
    with pytest.raises(InvalidArgumentError):
        CgaConfig(angular_resolution=0)
