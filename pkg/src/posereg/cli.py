"""Command-line interface: ``posereg {synth,train,predict,eval,augment}``.

Exit status: 0 success, 2 bad arguments or malformed input files,
3 numerical failure, 4 file-system error.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import augmentation as aug
from . import metrics
from ._fileio import atomic_write
from .network import CategoryBank, checkpoint_bytes, load_checkpoint
from .rotations import Viewpoint, mat_to_viewpoint, viewpoint_to_mat
from .synth import DatasetFormatError, SyntheticSpec, load_dataset, make_dataset, save_dataset, split
from .training import ConfigError, TrainConfig, format_trace, predict_rotations, train_two_stage

EXIT_OK, EXIT_PARSE, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
MANIFEST_HEADER = "# posereg augment-manifest v1"


class UsageError(ValueError):
    pass


def _floats(text, n=None):
    try:
        vals = [float(t) for t in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if n is not None and len(vals) != n:
        raise argparse.ArgumentTypeError(f"expected {n} comma-separated numbers, got {text!r}")
    return tuple(vals)


def _pair(text):
    return _floats(text, 2)


def _triple(text):
    return _floats(text, 3)


# -- synth -------------------------------------------------------------------


def cmd_synth(args):
    spec = SyntheticSpec(
        n_samples=args.n + args.holdout,
        feature_dim=args.dim,
        noise=args.noise,
        poses=args.poses,
        categories=tuple(args.categories.split(",")),
        az_range=args.az_range,
        el_range=args.el_range,
        ct_range=args.ct_range,
        seed=args.seed,
    )
    data = make_dataset(spec)
    if args.holdout:
        if not args.holdout_out:
            raise UsageError("--holdout needs --holdout-out")
        train, test = split(data, args.n, seed=args.seed)
        save_dataset(train, args.out)
        save_dataset(test, args.holdout_out)
    else:
        save_dataset(data, args.out)
    return EXIT_OK


# -- train -------------------------------------------------------------------


def load_config(args):
    cfg = TrainConfig.from_json(args.config) if args.config else TrainConfig()
    overrides = {k: v for k, v in (("seed", args.seed), ("head", args.head)) if v is not None}
    if overrides:
        cfg = TrainConfig.from_dict({**cfg.to_dict(), **overrides})
    return cfg


def cmd_train(args):
    cfg = load_config(args)
    data = load_dataset(args.data)
    layer_sizes = (data.features.shape[1],) + cfg.hidden
    bank = CategoryBank.create(data.category_names(), seed=cfg.seed, layer_sizes=layer_sizes, head=cfg.head)
    bank, trace = train_two_stage(bank, data, cfg)
    atomic_write(args.out, checkpoint_bytes(bank))
    atomic_write(args.trace or f"{args.out}.trace.csv", format_trace(trace))
    return EXIT_OK


# -- predict -----------------------------------------------------------------


def cmd_predict(args):
    bank = load_checkpoint(args.model)
    data = load_dataset(args.data)
    pred = predict_rotations(bank, data)
    entries = [metrics.RecordEntry(i, c, r) for i, c, r in zip(data.ids, data.categories, pred)]
    metrics.write_records(entries, args.out, angles=args.angles)
    if args.truth_out:
        truth = [metrics.RecordEntry(i, c, r) for i, c, r in zip(data.ids, data.categories, data.rotations)]
        metrics.write_records(truth, args.truth_out, angles=args.angles)
    return EXIT_OK


# -- eval --------------------------------------------------------------------


def _has_boxes(entries):
    return bool(entries) and entries[0].box is not None


def evaluate(args):
    """Report rows ``{label: {category: value}}`` for the selected metric."""
    gt = metrics.read_records(args.gt)
    if args.metric in ("cost1", "cost2"):
        if not args.train_poses:
            raise UsageError(f"--metric {args.metric} needs --train-poses")
        train = metrics.read_records(args.train_poses)
        row = {}
        for cat in dict.fromkeys(e.category for e in gt):
            test_r = np.array([e.rotation for e in gt if e.category == cat])
            train_r = np.array([e.rotation for e in train if e.category == cat])
            if len(train_r) == 0:
                raise UsageError(f"no training poses for category {cat!r}")
            if args.flips:
                train_r = metrics.with_flips(train_r)
            if args.metric == "cost1":
                row[cat] = metrics.cost1(test_r, train_r)
            else:
                row[cat] = metrics.cost2(test_r, train_r, args.eps)
        row["Mean"] = float(np.mean(list(row.values())))
        label = args.metric if args.metric == "cost1" else f"cost2(eps={args.eps:g})"
        return {args.label or label: row}
    if not args.pred:
        raise UsageError(f"--metric {args.metric} needs --pred")
    pred = metrics.read_records(args.pred)
    detection = _has_boxes(gt) and _has_boxes(pred)
    if args.metric == "median":
        if detection:
            recs = metrics.detection_records(gt, pred)
            gts = [r for r in recs if r.gt_box is not None]
            dets = [r for r in recs if r.det_box is not None]
            recs = metrics.matched_records(gts, dets)
        else:
            recs = metrics.pair_records(gt, pred)
        return {args.label or "median": metrics.median_angle_error(recs)}
    if not detection:
        raise UsageError(f"--metric {args.metric} needs boxes in both files and confidences in --pred")
    recs = metrics.detection_records(gt, pred)
    if args.metric == "arp":
        return {args.label or f"ARP_{args.theta:g}": metrics.arp(recs, np.deg2rad(args.theta))}
    bins = args.bins or list(metrics.AVP_BINS)
    return {f"{args.label + ' ' if args.label else ''}AVP {n}V": metrics.avp(recs, n) for n in bins}


def cmd_eval(args):
    rows = evaluate(args)
    precision = 3 if args.metric in ("arp", "avp", "cost1") else 2
    table = metrics.format_table(rows, precision)
    if args.out:
        atomic_write(args.out, table)
    sys.stdout.write(table)
    return EXIT_OK


# -- augment -----------------------------------------------------------------


def _read_pose_file(path):
    return [(e.id, Viewpoint(*(float(a) for a in mat_to_viewpoint(e.rotation)))) for e in metrics.read_records(path)]


def cmd_augment(args):
    cfg = aug.JitterConfig(
        ct_range=np.deg2rad(args.ct_range),
        ct_step=np.deg2rad(args.ct_step),
        az_range=np.deg2rad(args.az_range),
        az_step=np.deg2rad(args.az_step),
        include_flips=not args.no_flip,
    )
    sources = [(f"pose{i}", Viewpoint(*np.deg2rad(p))) for i, p in enumerate(args.pose or [])]
    if args.poses:
        sources += _read_pose_file(args.poses)
    if not sources:
        raise UsageError("give at least one --pose or a --poses file")
    image = cloud = camera = None
    if args.image:
        if args.image_dir is None:
            raise UsageError("--image needs --image-dir for the warped outputs")
        image = aug.read_image(args.image)
        if cfg.az_range > 0:
            if not args.cloud:
                raise UsageError("azimuth shifts on an image need --cloud")
            cloud = aug.read_point_cloud(args.cloud)
        camera = aug.centered_camera(image.shape, args.focal, args.distance)
        os.makedirs(args.image_dir, exist_ok=True)
    cols = ["source", "index", "d_az", "d_ct", "flip", "az", "el", "ct"] + (["image"] if image is not None else [])
    lines = [MANIFEST_HEADER, ",".join(cols)]
    for name, vp in sources:
        if image is not None:
            samples = aug.augment(image, vp, cfg, cloud=cloud, camera=camera)
        else:
            samples = [(None, s) for s in aug.jitter_grid(vp, cfg)]
        for k, (img, s) in enumerate(samples):
            vals = [repr(float(np.rad2deg(v))) for v in (s.d_az, s.d_ct)]
            vals.append("1" if s.flip else "0")
            vals += [repr(float(np.rad2deg(v))) for v in s.viewpoint]
            row = [name, str(k)] + vals
            if img is not None:
                fname = f"{name}-{k:04d}.img"
                aug.write_image(img, os.path.join(args.image_dir, fname))
                row.append(fname)
            lines.append(",".join(row))
    atomic_write(args.out, "\n".join(lines) + "\n")
    return EXIT_OK


def read_manifest(path):
    """Rows of an augment manifest as dicts (angles in degrees)."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != MANIFEST_HEADER:
        raise aug.FormatError(f"{path}:1: missing header {MANIFEST_HEADER!r}")
    cols = lines[1].split(",")
    rows = []
    for line in lines[2:]:
        row = dict(zip(cols, line.split(",")))
        for k in ("d_az", "d_ct", "az", "el", "ct"):
            row[k] = float(row[k])
        row["index"] = int(row["index"])
        row["flip"] = row["flip"] == "1"
        rows.append(row)
    return rows


def manifest_label_matrix(row):
    return viewpoint_to_mat(*np.deg2rad([row["az"], row["el"], row["ct"]]))


# -- entry point -------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="posereg", description="3D pose regression toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic feature-to-pose dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--n", type=int, default=500, help="samples per category (default 500)")
    s.add_argument("--holdout", type=int, default=0, help="extra held-out samples per category")
    s.add_argument("--holdout-out", help="file for the held-out samples")
    s.add_argument("--dim", type=int, default=32)
    s.add_argument("--noise", type=float, default=0.01)
    s.add_argument("--poses", choices=["uniform", "viewpoint"], default="viewpoint")
    s.add_argument("--categories", default="car")
    s.add_argument("--az-range", type=_pair, default=(-90.0, 90.0), help="degrees, lo,hi")
    s.add_argument("--el-range", type=_pair, default=(-30.0, 60.0), help="degrees, lo,hi")
    s.add_argument("--ct-range", type=_pair, default=(-20.0, 20.0), help="degrees, lo,hi")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="two-stage training from a JSON config")
    t.add_argument("--config", help="JSON file with TrainConfig fields")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--trace", help="loss-trace path (default: <out>.trace.csv)")
    t.add_argument("--seed", type=int)
    t.add_argument("--head", choices=["axisangle", "quat"])
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("predict", help="write predicted rotations as a record file")
    r.add_argument("--model", required=True)
    r.add_argument("--data", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--truth-out", help="also write the dataset's ground truth as records")
    r.add_argument("--angles", action="store_true", help="write az,el,ct in degrees instead of matrices")
    r.set_defaults(func=cmd_predict)

    e = sub.add_parser("eval", help="evaluate predictions against ground truth")
    e.add_argument("--gt", required=True)
    e.add_argument("--pred")
    e.add_argument("--metric", choices=["median", "arp", "avp", "cost1", "cost2"], default="median")
    e.add_argument("--theta", type=float, default=30.0, help="ARP pose threshold in degrees")
    e.add_argument("--bins", type=int, action="append", choices=list(metrics.AVP_BINS))
    e.add_argument("--eps", type=float, default=0.1, help="cost2 neighbourhood radius in radians")
    e.add_argument("--train-poses", help="record file of training poses for cost1/cost2")
    e.add_argument("--flips", action="store_true", help="add mirrored training poses for cost1/cost2")
    e.add_argument("--label", help="row label in the report")
    e.add_argument("--out", help="also write the report here")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("augment", help="3D pose jittering grid (and warped images)")
    a.add_argument("--pose", type=_triple, action="append", help="az,el,ct in degrees (repeatable)")
    a.add_argument("--poses", help="record file of source poses")
    a.add_argument("--ct-range", type=float, default=4.0, help="degrees")
    a.add_argument("--ct-step", type=float, default=1.0, help="degrees")
    a.add_argument("--az-range", type=float, default=2.0, help="degrees")
    a.add_argument("--az-step", type=float, default=0.5, help="degrees")
    a.add_argument("--no-flip", action="store_true")
    a.add_argument("--image", help="grayscale image file to warp")
    a.add_argument("--cloud", help="xyz point cloud for azimuth homographies")
    a.add_argument("--focal", type=float, default=500.0)
    a.add_argument("--distance", type=float, default=5.0)
    a.add_argument("--image-dir", help="directory for warped images")
    a.add_argument("--out", required=True, help="manifest path")
    a.set_defaults(func=cmd_augment)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DatasetFormatError, metrics.RecordFormatError, aug.FormatError, UsageError) as exc:
        code, msg = EXIT_PARSE, str(exc)
    except (FloatingPointError, aug.DegenerateConfigurationError) as exc:
        code, msg = EXIT_NUMERIC, str(exc)
    except OSError as exc:
        code, msg = EXIT_IO, f"{exc.strerror or exc}: {exc.filename}" if exc.filename else str(exc)
    except ValueError as exc:
        code, msg = EXIT_PARSE, str(exc)
    except KeyError as exc:
        code, msg = EXIT_PARSE, str(exc.args[0] if exc.args else exc)
    print(f"posereg {args.command}: error: {msg}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
