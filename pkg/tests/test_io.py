import logging

import numpy as np
import pytest

from cvgc.core import PointCloud
from cvgc.errors import FormatError, InvalidArgumentError, ParseError
from cvgc.pipeline.config import (
    PRESETS,
    RunConfig,
    make_config,
    read_config_file,
    snapshot,
)
from cvgc.pipeline.io import (
    CloudFileFormat,
    detect_format,
    parse_ply,
    parse_xyzl,
    read_cloud,
    read_label_map,
    read_labels,
    write_cloud,
)

FORMATS = [(CloudFileFormat.XYZL_ASCII, ".xyz", 1e-12),
           (CloudFileFormat.PLY_ASCII, ".ply", 1e-6),
           (CloudFileFormat.PLY_BINARY_LE, ".ply", 1e-6)]


def test_parse_examples():
    with pytest.raises(FormatError):
        parse_xyzl("0 0 0\n1 2 3 4\n")
    c = parse_xyzl("# c\n1.5 2.5 3.5 2\n")
    assert c.points.tolist() == [[1.5, 2.5, 3.5]] and c.labels.tolist() == [2]
    assert parse_xyzl("1 2 3\n").labels is None


@pytest.mark.parametrize("text, line", [
    ("0 0 0\n0 0\n", 2), ("0 0 x\n", 1), ("\n\n0 0 nan\n", 3), ("0 0 0 1.5\n", 1),
])
def test_parse_errors_carry_line(text, line):
    with pytest.raises(ParseError) as err:
        parse_xyzl(text)
    assert err.value.line == line


@pytest.mark.parametrize("fmt, ext, tol", FORMATS)
def test_round_trip(fmt, ext, tol, rng, tmp_path):
    c = PointCloud(rng.uniform(-100, 100, (1000, 3)), labels=rng.integers(0, 20, 1000))
    path = tmp_path / f"c{ext}"
    write_cloud(c, path, fmt)
    back = read_cloud(path)
    assert detect_format(path) is fmt
    assert np.array_equal(back.labels, c.labels)
    # float32 storage bounds the error relative to the coordinate magnitude
    assert np.all(np.abs(back.points - c.points) <= tol * np.maximum(1, np.abs(c.points)))


def test_ascii_round_trip_is_exact(rng, tmp_path):
    c = PointCloud(rng.normal(size=(500, 3)) * 1e3)
    write_cloud(c, tmp_path / "a.xyz")
    assert np.array_equal(read_cloud(tmp_path / "a.xyz").points, c.points)


@pytest.mark.parametrize("fmt, ext, tol", FORMATS)
def test_empty_and_deterministic_writes(fmt, ext, tol, rng, tmp_path):
    empty = PointCloud(np.empty((0, 3)))
    write_cloud(empty, tmp_path / f"e{ext}", fmt)
    assert len(read_cloud(tmp_path / f"e{ext}", fmt)) == 0
    if fmt is not CloudFileFormat.XYZL_ASCII:
        assert b"element vertex 0" in (tmp_path / f"e{ext}").read_bytes()
    c = PointCloud(rng.random((50, 3)), labels=np.arange(50))
    write_cloud(c, tmp_path / f"a{ext}", fmt)
    write_cloud(c, tmp_path / f"b{ext}", fmt)
    assert (tmp_path / f"a{ext}").read_bytes() == (tmp_path / f"b{ext}").read_bytes()


def test_features_dropped_with_warning(tmp_path, caplog):
    c = PointCloud(np.zeros((2, 3)), labels=[0, 1], features=np.ones((2, 4)))
    with caplog.at_level(logging.WARNING):
        write_cloud(c, tmp_path / "f.xyz")
    assert "dropping" in caplog.text
    assert read_cloud(tmp_path / "f.xyz").features is None


def test_ply_alternate_label_names_and_extra_elements():
    body = ("ply\nformat ascii 1.0\ncomment made by hand\nelement camera 1\n"
            "property float fov\nelement vertex 2\nproperty double x\nproperty double y\n"
            "property double z\nproperty uchar class\nend_header\n"
            "45\n1 2 3 7\n4 5 6 8\n")
    c = parse_ply(body.encode())
    assert c.points.tolist() == [[1, 2, 3], [4, 5, 6]] and c.labels.tolist() == [7, 8]

    import struct
    head = ("ply\nformat binary_little_endian 1.0\nelement vertex 1\nproperty float x\n"
            "property float y\nproperty float z\nproperty int scalar_label\nend_header\n")
    c = parse_ply(head.encode() + struct.pack("<fffi", 1.5, 2.5, 3.5, 9))
    assert c.points.tolist() == [[1.5, 2.5, 3.5]] and c.labels.tolist() == [9]


@pytest.mark.parametrize("data, err", [
    (b"not a ply", ParseError),
    (b"ply\nformat binary_big_endian 1.0\nelement vertex 0\nend_header\n", FormatError),
    (b"ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nend_header\n1\n", FormatError),
    (b"ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\n"
     b"property float z\nend_header\n1 2 3\n", ParseError),
])
def test_ply_errors(data, err):
    with pytest.raises(err):
        parse_ply(data)


def test_label_files(tmp_path):
    (tmp_path / "a.labels").write_text("1\n2\n\n3\n")
    assert read_labels(tmp_path / "a.labels").tolist() == [1, 2, 3]
    (tmp_path / "b.labels").write_text("1\nx\n")
    with pytest.raises(ParseError, match="line 2"):
        read_labels(tmp_path / "b.labels")
    write_cloud(PointCloud(np.zeros((2, 3)), labels=[4, 5]), tmp_path / "c.xyz")
    assert read_labels(tmp_path / "c.xyz").tolist() == [4, 5]
    write_cloud(PointCloud(np.zeros((2, 3))), tmp_path / "d.xyz")
    with pytest.raises(FormatError):
        read_labels(tmp_path / "d.xyz")


def test_label_map_file(tmp_path):
    (tmp_path / "m.txt").write_text("# h3d\n3 0\n7 1  # facade\n")
    lm = read_label_map(tmp_path / "m.txt", 255)
    assert lm.mapping == {3: 0, 7: 1} and lm.ignore_id == 255
    (tmp_path / "bad.txt").write_text("3 0\n3 1\n")
    with pytest.raises(ParseError, match="line 2"):
        read_label_map(tmp_path / "bad.txt", 255)


# -- configuration ----------------------------------------------------------

def test_config_defaults_snapshot():
    snap = snapshot(RunConfig())
    assert snap["angular_resolution"] == 0.01
    assert snap["view_heights"] == (2.0, 4.0, 8.0, 16.0, 32.0, 64.0)
    assert snap["spacing_range"] == (0.01, 0.5)
    assert snap["occupancy_voxel"] == 1.0 and snap["knn_k"] == 3 and snap["eps"] == 1e-8
    assert snap["patch"] == 32.0 and snap["overlap"] == 0.5
    g2 = make_config("group2")
    assert g2.patch == 50.0 and g2.seg_voxel == 0.3 and set(PRESETS) == {"group1", "group2"}


def test_make_config_overrides():
    cfg = make_config("group2", seed="7", view_heights="4,8", mode="both", patch=20)
    assert cfg.seed == 7 and cfg.cga.view_heights == (4.0, 8.0) and cfg.cga.mode == "both"
    assert cfg.patch == 20.0
    for bad in [{"nope": 1}, {"patch": "x"}, {"overlap": 1.5}, {"mode": "sideways"}]:
        with pytest.raises(InvalidArgumentError):
            make_config(**bad)
    with pytest.raises(InvalidArgumentError):
        make_config("group3")


def test_config_file(tmp_path):
    (tmp_path / "run.cfg").write_text("# run\nseed = 3\nview_heights = 2, 4\npreset = group2\n")
    vals = read_config_file(tmp_path / "run.cfg")
    assert vals == {"seed": "3", "view_heights": "2, 4", "preset": "group2"}
    preset = vals.pop("preset")
    cfg = make_config(preset, **vals)
    assert cfg.seed == 3 and cfg.cga.view_heights == (2.0, 4.0) and cfg.patch == 50.0
    (tmp_path / "bad.cfg").write_text("seed 3\n")
    with pytest.raises(ParseError, match="line 1"):
        read_config_file(tmp_path / "bad.cfg")
