"""Pose evaluation metrics: median geodesic error, training-set coverage
costs, detection matching, ARP and AVP average precision.

Angles are radians internally; reported errors are degrees.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from ._fileio import atomic_write
from .rotations import geodesic_dist_mat, is_rotation, mat_to_viewpoint, viewpoint_to_mat

PASCAL_CATEGORIES = ("aero", "bike", "boat", "bottle", "bus", "car", "chair", "dtable", "mbike", "sofa", "train", "tv")
AVP_BINS = (4, 8, 16, 24)
_FLIP = np.diag([-1.0, 1.0, 1.0])


class BoundingBox(NamedTuple):
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def validate(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(f"invalid box {tuple(self)}: need x_min < x_max and y_min < y_max")
        return self

    @property
    def area(self):
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)


def iou(a, b):
    a, b = BoundingBox(*a).validate(), BoundingBox(*b).validate()
    w = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    h = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if w <= 0 or h <= 0:
        return 0.0
    inter = w * h
    return inter / (a.area + b.area - inter)


@dataclass
class EvalRecord:
    """A ground-truth/prediction pair, optionally with detection fields.

    For detection metrics a record may stand for a ground-truth object
    (``gt_box`` set) or a detection (``det_box`` and ``confidence`` set);
    ``image`` groups records that share an image.
    """

    category: str
    gt_rotation: np.ndarray | None = None
    pred_rotation: np.ndarray | None = None
    gt_box: tuple | None = None
    det_box: tuple | None = None
    confidence: float | None = None
    image: str | None = None


def _by_category(records):
    groups = {}
    for r in records:
        groups.setdefault(r.category, []).append(r)
    return groups


def median_angle_error(records):
    """Per-category median geodesic error in degrees, plus ``"Mean"`` over categories."""
    groups = _by_category(records)
    if not groups:
        raise ValueError("no records to evaluate")
    out = {}
    for cat, recs in groups.items():
        gt = np.array([r.gt_rotation for r in recs])
        pred = np.array([r.pred_rotation for r in recs])
        out[cat] = float(np.rad2deg(np.median(geodesic_dist_mat(gt, pred))))
    out["Mean"] = float(np.mean(list(out.values())))
    return out


def _pairwise_dist(a, b, chunk=256):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("pose sets must be nonempty")
    rows = [geodesic_dist_mat(a[i : i + chunk, None], b[None, :]) for i in range(0, len(a), chunk)]
    return np.concatenate(rows, axis=0)


def cost1(test_poses, train_poses):
    """Mean over test poses of the distance to the nearest training pose."""
    return float(np.mean(np.min(_pairwise_dist(test_poses, train_poses), axis=1)))


def cost2(test_poses, train_poses, eps):
    """Mean over test poses of the number of training poses at distance ``< eps``."""
    if not eps > 0:
        raise ValueError("eps must be > 0")
    return float(np.mean(np.sum(_pairwise_dist(test_poses, train_poses) < eps, axis=1)))


def with_flips(rotations):
    """``rotations`` followed by their mirror images ``S R S``, ``S = diag(-1, 1, 1)``."""
    r = np.asarray(rotations, dtype=float)
    return np.concatenate([r, _FLIP @ r @ _FLIP])


# -- detection matching and average precision --------------------------------


class Match(NamedTuple):
    gt_index: int
    det_index: int | None
    iou: float


def _split(records):
    gts = [r for r in records if r.gt_box is not None]
    dets = [r for r in records if r.det_box is not None]
    return gts, dets


def match_detections(gt_records, detections):
    """For every ground truth, the detection of the same image and category
    with the largest IoU; ties go to higher confidence, then earlier input.
    Ground truths with no overlapping detection get ``det_index=None``."""
    out = []
    for gi, g in enumerate(gt_records):
        best, best_key = None, None
        for di, d in enumerate(detections):
            if d.category != g.category or d.image != g.image:
                continue
            ov = iou(g.gt_box, d.det_box)
            if ov <= 0:
                continue
            key = (ov, d.confidence if d.confidence is not None else -np.inf, -di)
            if best_key is None or key > best_key:
                best, best_key = di, key
        out.append(Match(gi, best, best_key[0] if best_key else 0.0))
    return out


def matched_records(gt_records, detections):
    """Pose pairs for matched ground truths, for median error of detections."""
    return [
        EvalRecord(gt_records[m.gt_index].category, gt_records[m.gt_index].gt_rotation,
                   detections[m.det_index].pred_rotation, image=gt_records[m.gt_index].image)
        for m in match_detections(gt_records, detections)
        if m.det_index is not None
    ]


def interpolated_ap(tp, n_pos):
    """All-point interpolated AP of a confidence-ranked TP/FP sequence."""
    tp = np.asarray(tp, dtype=float)
    if n_pos == 0:
        return float("nan")
    if len(tp) == 0:
        return 0.0
    ctp = np.cumsum(tp)
    rec = ctp / n_pos
    prec = ctp / np.arange(1, len(tp) + 1)
    mrec = np.concatenate([[0.0], rec, [1.0]])
    mpre = np.concatenate([[0.0], prec, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.flatnonzero(mrec[1:] != mrec[:-1]) + 1
    return float(np.sum((mrec[steps] - mrec[steps - 1]) * mpre[steps]))


def ranked_outcomes(gts, dets, pose_ok, iou_threshold=0.5):
    """TP flags for detections of one category in descending confidence order.

    A detection claims its max-IoU ground truth when the IoU exceeds the
    threshold and that ground truth is unclaimed; it is a TP only if the
    claim succeeds and ``pose_ok(det, gt)`` holds. A claim is made whether or
    not the pose test passes, so a later detection cannot take over the object.
    """
    for d in dets:
        if d.confidence is None or d.det_box is None:
            raise ValueError("detections need a box and a confidence")
    order = np.argsort([-d.confidence for d in dets], kind="stable")
    claimed = [False] * len(gts)
    tp = []
    for di in order:
        d = dets[di]
        best, best_iou = None, 0.0
        for gi, g in enumerate(gts):
            if g.image != d.image:
                continue
            ov = iou(g.gt_box, d.det_box)
            if ov > best_iou:
                best, best_iou = gi, ov
        hit = False
        if best is not None and best_iou > iou_threshold and not claimed[best]:
            claimed[best] = True
            hit = bool(pose_ok(d, gts[best]))
        tp.append(hit)
    return tp


def _ap_by_category(records, pose_ok, iou_threshold):
    gts, dets = _split(records)
    cats = list(dict.fromkeys([r.category for r in gts] + [r.category for r in dets]))
    if not cats:
        raise ValueError("no detection records")
    out = {}
    for cat in cats:
        g = [r for r in gts if r.category == cat]
        d = [r for r in dets if r.category == cat]
        out[cat] = interpolated_ap(ranked_outcomes(g, d, pose_ok, iou_threshold), len(g))
    out["Mean"] = float(np.nanmean([out[c] for c in cats]))
    return out


def detection_ap(records, iou_threshold=0.5):
    return _ap_by_category(records, lambda d, g: True, iou_threshold)


def arp(records, angle_threshold=np.pi / 6, iou_threshold=0.5):
    """AP where a TP also needs geodesic pose error ``< angle_threshold``."""

    def ok(d, g):
        return geodesic_dist_mat(g.gt_rotation, d.pred_rotation) < angle_threshold

    return _ap_by_category(records, ok, iou_threshold)


def azimuth_bin(az, n_bins):
    """Bin index of azimuth(s) ``az`` (radians) for ``n_bins`` bins of width
    ``2 pi / n_bins`` centered on 0; bin k covers ``[k w - w/2, k w + w/2)``."""
    w = 360.0 / n_bins
    return np.floor((np.rad2deg(az) + w / 2) / w).astype(int) % n_bins


def avp(records, n_bins, iou_threshold=0.5):
    """AP where a TP also needs the predicted azimuth in the ground-truth bin."""
    if n_bins not in AVP_BINS:
        raise ValueError(f"n_bins must be one of {AVP_BINS}, got {n_bins}")

    def ok(d, g):
        az_gt = mat_to_viewpoint(g.gt_rotation).az
        az_pred = mat_to_viewpoint(d.pred_rotation).az
        return azimuth_bin(az_gt, n_bins) == azimuth_bin(az_pred, n_bins)

    return _ap_by_category(records, ok, iou_threshold)


# -- reporting ---------------------------------------------------------------


def ordered_categories(cats):
    """Known categories in table order, then any others in their given order."""
    cats = [c for c in cats if c != "Mean"]
    known = [c for c in PASCAL_CATEGORIES if c in cats]
    return known + [c for c in cats if c not in PASCAL_CATEGORIES]


def format_table(rows, precision=2):
    """Aligned text table: one column per category plus Mean; ``rows`` maps a
    row label to a ``{category: value}`` dict."""
    cats = []
    for values in rows.values():
        cats += [c for c in values if c not in cats]
    cols = ordered_categories(cats) + ["Mean"]
    label_w = max([len("Expt.")] + [len(k) for k in rows])
    cells = {k: [f"{v[c]:.{precision}f}" if c in v else "-" for c in cols] for k, v in rows.items()}
    widths = [max([len(c)] + [len(cells[k][i]) for k in rows]) for i, c in enumerate(cols)]
    lines = ["  ".join(["Expt.".ljust(label_w)] + [c.rjust(w) for c, w in zip(cols, widths)])]
    for k in rows:
        lines.append("  ".join([k.ljust(label_w)] + [s.rjust(w) for s, w in zip(cells[k], widths)]))
    return "\n".join(lines) + "\n"


# -- record files ------------------------------------------------------------
#
#   # posereg records v1
#   id,category,<rotation>[,x_min,y_min,x_max,y_max][,confidence]
#
# <rotation> is either az,el,ct in degrees or r00..r22 row-major; the layout
# is recognized from the number of fields (3/9 rotation values, +4 box,
# +1 confidence) and must be the same on every row. For detection files the
# id is the image id and may repeat.

RECORDS_HEADER = "# posereg records v1"
_LAYOUTS = {3: (3, False, False), 9: (9, False, False), 7: (3, True, False),
            13: (9, True, False), 8: (3, True, True), 14: (9, True, True)}


class RecordFormatError(ValueError):
    pass


class RecordEntry(NamedTuple):
    id: str
    category: str
    rotation: np.ndarray
    box: tuple | None = None
    confidence: float | None = None


def _columns(n_rot, box, conf):
    cols = ["id", "category"]
    cols += ["az", "el", "ct"] if n_rot == 3 else [f"r{i}{j}" for i in range(3) for j in range(3)]
    if box:
        cols += ["x_min", "y_min", "x_max", "y_max"]
    if conf:
        cols.append("confidence")
    return cols


def parse_records(text, source="<records>"):
    lines = text.splitlines()
    if not lines or lines[0].strip() != RECORDS_HEADER:
        raise RecordFormatError(f"{source}:1: missing header {RECORDS_HEADER!r}")
    if len(lines) < 2 or not lines[1].startswith("id,category"):
        raise RecordFormatError(f"{source}:2: missing column header 'id,category,...'")
    entries, layout = [], None
    for lineno, line in enumerate(lines[2:], start=3):
        if not line.strip():
            continue
        parts = [p.strip() for p in line.split(",")]
        n = len(parts) - 2
        if n not in _LAYOUTS:
            raise RecordFormatError(f"{source}:{lineno}: cannot interpret {n} value columns")
        if layout is None:
            layout = n
        elif n != layout:
            raise RecordFormatError(f"{source}:{lineno}: expected {layout} value columns like earlier rows, got {n}")
        try:
            vals = [float(p) for p in parts[2:]]
        except ValueError as exc:
            raise RecordFormatError(f"{source}:{lineno}: {exc}") from None
        if not np.all(np.isfinite(vals)):
            raise RecordFormatError(f"{source}:{lineno}: non-finite value")
        n_rot, has_box, has_conf = _LAYOUTS[n]
        if n_rot == 3:
            rot = viewpoint_to_mat(*np.deg2rad(vals[:3]))
        else:
            rot = np.array(vals[:9]).reshape(3, 3)
            if not is_rotation(rot, 1e-6):
                raise RecordFormatError(f"{source}:{lineno}: rotation matrix is not orthonormal with det +1")
        box = None
        if has_box:
            box = BoundingBox(*vals[n_rot : n_rot + 4])
            try:
                box.validate()
            except ValueError as exc:
                raise RecordFormatError(f"{source}:{lineno}: {exc}") from None
        conf = vals[-1] if has_conf else None
        entries.append(RecordEntry(parts[0], parts[1], rot, box, conf))
    return entries


def read_records(path):
    with open(path) as fh:
        return parse_records(fh.read(), str(path))


def records_to_text(entries, angles=False):
    """Serialize entries; ``angles=True`` writes az,el,ct in degrees."""
    entries = list(entries)
    has_box = bool(entries) and entries[0].box is not None
    has_conf = bool(entries) and entries[0].confidence is not None
    lines = [RECORDS_HEADER, ",".join(_columns(3 if angles else 9, has_box, has_conf))]
    for e in entries:
        if angles:
            rot = [float(np.rad2deg(a)) for a in mat_to_viewpoint(e.rotation)]
        else:
            rot = [float(v) for v in np.asarray(e.rotation).reshape(-1)]
        vals = rot + ([float(v) for v in e.box] if has_box else []) + ([float(e.confidence)] if has_conf else [])
        lines.append(",".join([e.id, e.category] + [repr(v) for v in vals]))
    return "\n".join(lines) + "\n"


def write_records(entries, path, angles=False):
    atomic_write(path, records_to_text(entries, angles))


def pair_records(gt_entries, pred_entries):
    """One-to-one join of ground truth and predictions by id."""
    preds = {}
    for e in pred_entries:
        if e.id in preds:
            raise RecordFormatError(f"duplicate prediction id {e.id!r}")
        preds[e.id] = e
    out = []
    for g in gt_entries:
        if g.id not in preds:
            raise RecordFormatError(f"no prediction for id {g.id!r}")
        p = preds.pop(g.id)
        if p.category != g.category:
            raise RecordFormatError(f"id {g.id!r}: category {p.category!r} != ground truth {g.category!r}")
        out.append(EvalRecord(g.category, g.rotation, p.rotation, g.box, p.box, p.confidence, g.id))
    if preds:
        raise RecordFormatError(f"predictions without ground truth: {sorted(preds)[:5]}")
    return out


def detection_records(gt_entries, det_entries):
    """Ground-truth objects and detections as separate records (id = image id)."""
    for kind, entries, need_conf in (("ground-truth", gt_entries, False), ("detection", det_entries, True)):
        for e in entries:
            if e.box is None or (need_conf and e.confidence is None):
                raise RecordFormatError(f"{kind} record {e.id!r} lacks a box{' or confidence' if need_conf else ''}")
    gts = [EvalRecord(e.category, gt_rotation=e.rotation, gt_box=e.box, image=e.id) for e in gt_entries]
    dets = [EvalRecord(e.category, pred_rotation=e.rotation, det_box=e.box, confidence=e.confidence, image=e.id)
            for e in det_entries]
    return gts + dets
