"""Command-line interface.

Exit codes: 0 success, 1 operation error, 2 usage error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from collections import Counter
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .. import augment, core, metrics, occupancy
from ..errors import CvgcError
from .config import PRESETS, make_config, read_config_file
from .demo import DEMO_MODE, gcr_demo
from .io import CloudFileFormat, read_cloud, read_label_map, read_labels, write_cloud
from .synthetic import synthetic_scene

log = logging.getLogger("cvgc")


def worker_count():
    try:
        n = int(os.environ.get("CVGC_THREADS", "0"))
    except ValueError:
        n = 0
    return n if n > 0 else (os.cpu_count() or 1)


def _heights(text):
    try:
        vals = tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated meters, got {text!r}")
    if not vals:
        raise argparse.ArgumentTypeError("no heights given")
    return vals


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value run configuration file")
    common.add_argument("--preset", choices=sorted(PRESETS), help="dataset-group preset")
    common.add_argument("--format", choices=[f.value for f in CloudFileFormat],
                        help="force the input/output file format")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="cvgc", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    def cmd(name, help_):
        return sub.add_parser(name, help=help_, parents=[common])

    s = cmd("info", "point count, bounding box, label histogram, mean spacing")
    s.add_argument("input")

    s = cmd("tile", "split into overlapping square patches")
    s.add_argument("input")
    s.add_argument("outdir")
    s.add_argument("--patch", type=float)
    s.add_argument("--overlap", type=float)

    s = cmd("remap", "apply a label map file (lines 'src dst')")
    s.add_argument("input")
    s.add_argument("output")
    s.add_argument("--map", required=True, dest="map_file")
    s.add_argument("--ignore", type=int, default=core.IGNORE_ID)

    s = cmd("densify", "tangent-plane densification")
    s.add_argument("input")
    s.add_argument("output")
    s.add_argument("--k", type=int, required=True, help="samples per point")
    s.add_argument("--radius", type=float, required=True)
    s.add_argument("--normal-k", type=int)
    s.add_argument("--seed", type=int)

    s = cmd("sparsify", "keep the centroid-nearest point per voxel")
    s.add_argument("input")
    s.add_argument("output")
    s.add_argument("--voxel", type=float, required=True)

    s = cmd("visibility", "hidden-point removal from a random virtual viewpoint")
    s.add_argument("input")
    s.add_argument("output")
    s.add_argument("--seed", type=int)
    s.add_argument("--delta-alpha", type=float)
    s.add_argument("--heights", type=_heights)
    s.add_argument("--ground-class", type=int)

    s = cmd("cga", "one cross-view augmented variant")
    s.add_argument("input")
    s.add_argument("output")
    s.add_argument("--mode", choices=augment.MODES)
    s.add_argument("--seed", type=int)

    s = cmd("occupancy", "voxel occupancy grid")
    s.add_argument("input")
    s.add_argument("output")
    s.add_argument("--voxel", type=float)

    s = cmd("gcr-demo", "train the occupancy head on a source view and an augmented view")
    s.add_argument("input")
    s.add_argument("--seed", type=int)
    s.add_argument("--steps", type=int, default=200)
    s.add_argument("--lr", type=float, default=1.0)
    s.add_argument("--mode", choices=augment.MODES, default=DEMO_MODE)

    s = cmd("eval", "IoU / mIoU report from aligned label files")
    s.add_argument("gt")
    s.add_argument("pred")
    s.add_argument("--classes", type=int, required=True)
    s.add_argument("--ignore", type=int, default=core.IGNORE_ID)

    s = cmd("make-scene", "write the synthetic test scene")
    s.add_argument("output")
    s.add_argument("--points", type=int, default=50_000)
    s.add_argument("--seed", type=int)
    return p


def _config(args):
    file_values = read_config_file(args.config) if args.config else {}
    preset = args.preset or file_values.pop("preset", "group1")
    file_values.pop("preset", None)
    flags = {
        "seed": getattr(args, "seed", None),
        "patch": getattr(args, "patch", None),
        "overlap": getattr(args, "overlap", None),
        "occupancy_voxel": args.voxel if args.command == "occupancy" else None,
        "angular_resolution": getattr(args, "delta_alpha", None),
        "view_heights": getattr(args, "heights", None),
        "ground_class": getattr(args, "ground_class", None),
        "normal_k": getattr(args, "normal_k", None),
        "mode": args.mode if args.command == "cga" else None,
        "format": args.format,
    }
    merged = dict(file_values)
    merged.update({k: v for k, v in flags.items() if v is not None})
    return make_config(preset, **merged)


def _write(cloud, path, cfg):
    write_cloud(cloud, path, cfg.format)


def _read(path, cfg):
    return read_cloud(path, cfg.format)


def run_info(args, cfg, out):
    cloud = _read(args.input, cfg)
    print(f"points={len(cloud)}", file=out)
    if len(cloud):
        box = core.bbox(cloud)
        print("bbox_min={} {} {}".format(*map(repr, box.min)), file=out)
        print("bbox_max={} {} {}".format(*map(repr, box.max)), file=out)
    if cloud.labels is not None:
        ids, counts = np.unique(cloud.labels, return_counts=True)
        for i, c in zip(ids.tolist(), counts.tolist()):
            print(f"label={i} count={c}", file=out)
    if len(cloud) >= 2:
        print(f"mean_spacing={augment.estimate_mean_spacing(cloud):.6f}", file=out)


def run_tile(args, cfg, out):
    cloud = _read(args.input, cfg)
    patches = core.tile(cloud, cfg.patch, cfg.overlap)
    os.makedirs(args.outdir, exist_ok=True)
    ext = os.path.splitext(args.input)[1] or ".xyz"

    def save(item):
        (ix, iy), patch = item
        path = os.path.join(args.outdir, f"patch_{ix}_{iy}{ext}")
        _write(patch, path, cfg)
        return path

    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        paths = list(pool.map(save, patches))
    for path, (_, patch) in zip(paths, patches):
        print(f"{path} points={len(patch)}", file=out)


def run_remap(args, cfg, out):
    label_map = read_label_map(args.map_file, args.ignore)
    _write(core.remap_labels(_read(args.input, cfg), label_map), args.output, cfg)


def run_densify(args, cfg, out):
    counters = Counter()
    cloud = augment.densify(_read(args.input, cfg), args.k, args.radius, cfg.cga.normal_k,
                            augment.make_rng(cfg.seed), counters)
    _write(cloud, args.output, cfg)
    print(f"points={len(cloud)} degenerate_normals={counters['degenerate_normals']}", file=out)


def run_sparsify(args, cfg, out):
    cloud = augment.sparsify(_read(args.input, cfg), args.voxel)
    _write(cloud, args.output, cfg)
    print(f"points={len(cloud)}", file=out)


def run_visibility(args, cfg, out):
    cloud = _read(args.input, cfg)
    rng = augment.make_rng(cfg.seed)
    vp = augment.sample_viewpoint(cloud, cfg.cga.ground_class, cfg.cga.view_heights, rng)
    res = augment.visibility_filter(cloud, vp, cfg.cga.angular_resolution)
    _write(res, args.output, cfg)
    print("viewpoint={} {} {} points={}".format(*map(repr, vp.tolist()), len(res)), file=out)


def run_cga(args, cfg, out):
    res = augment.cga(_read(args.input, cfg), cfg.cga, augment.make_rng(cfg.seed))
    _write(res, args.output, cfg)
    print(f"points={len(res)}", file=out)


def run_occupancy(args, cfg, out):
    grid = occupancy.build_occupancy(_read(args.input, cfg), cfg.occupancy_voxel)
    grid.save(args.output)
    print(f"domain_voxels={grid.size} occupied={len(grid.occupied)}", file=out)


def run_gcr_demo(args, cfg, out):
    res = gcr_demo(_read(args.input, cfg), cfg, args.steps, args.lr, args.mode)
    print(f"domain_voxels={res.grid.size} occupied={len(res.grid.occupied)} "
          f"augmented_points={len(res.augmented)}", file=out)
    for t, v in enumerate(res.trace):
        print(f"step={t} mean_bce={v!r}", file=out)
    print(f"initial_mean_bce={res.trace[0]!r}", file=out)
    print(f"final_mean_bce={res.trace[-1]!r}", file=out)
    print(res.breakdown(), file=out)
    print(f"augmented_occupied_subset={res.augmented_subset}", file=out)


def run_eval(args, cfg, out):
    gt, pred = read_labels(args.gt), read_labels(args.pred)
    cm = metrics.accumulate(metrics.ConfusionMatrix(args.classes), gt, pred, args.ignore)
    print(metrics.report(cm), file=out)


def run_make_scene(args, cfg, out):
    cloud = synthetic_scene(args.points, seed=cfg.seed)
    _write(cloud, args.output, cfg)
    print(f"points={len(cloud)}", file=out)


COMMANDS = {
    "info": run_info, "tile": run_tile, "remap": run_remap, "densify": run_densify,
    "sparsify": run_sparsify, "visibility": run_visibility, "cga": run_cga,
    "occupancy": run_occupancy, "gcr-demo": run_gcr_demo, "eval": run_eval,
    "make-scene": run_make_scene,
}


def main(argv=None, out=None):
    out = sys.stdout if out is None else out
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        COMMANDS[args.command](args, cfg, out)
    except (CvgcError, OSError) as exc:
        print(f"cvgc {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
