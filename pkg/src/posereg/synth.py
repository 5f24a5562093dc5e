"""Synthetic feature-to-pose datasets with recoverable ground truth.

Features are a seeded random linear function of the axis-angle vector of
each pose plus Gaussian noise, one linear map per category.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from ._fileio import atomic_write
from .rotations import log_map, random_rotations, viewpoint_to_mat
from .training import PoseDataset

DATASET_HEADER = "# posereg dataset v1"


@dataclass
class SyntheticSpec:
    """Angles in ``az_range``/``el_range``/``ct_range`` are degrees."""

    n_samples: int = 500
    feature_dim: int = 32
    noise: float = 0.01
    poses: str = "viewpoint"
    categories: tuple = ("car",)
    az_range: tuple = (-90.0, 90.0)
    el_range: tuple = (-30.0, 60.0)
    ct_range: tuple = (-20.0, 20.0)
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.noise < 0:
            raise ValueError("noise must be >= 0")
        if self.poses not in ("uniform", "viewpoint"):
            raise ValueError("poses must be 'uniform' or 'viewpoint'")
        self.categories = tuple(self.categories)


def sample_poses(spec, rng, n):
    if spec.poses == "uniform":
        return random_rotations(rng, n)
    az, el, ct = (np.deg2rad(rng.uniform(lo, hi, n)) for lo, hi in (spec.az_range, spec.el_range, spec.ct_range))
    return viewpoint_to_mat(az, el, ct)


def feature_maps(spec):
    """Per-category ``(feature_dim, 3)`` linear maps and offsets."""
    rng = np.random.default_rng([int(spec.seed), 0])
    maps = {}
    for cat in spec.categories:
        a = rng.standard_normal((spec.feature_dim, 3))
        off = rng.standard_normal(spec.feature_dim)
        maps[cat] = (a, off)
    return maps


def make_dataset(spec):
    maps = feature_maps(spec)
    rng = np.random.default_rng([int(spec.seed), 1])
    feats, rots, cats = [], [], []
    for cat in spec.categories:
        r = sample_poses(spec, rng, spec.n_samples)
        a, off = maps[cat]
        f = log_map(r) @ a.T + off + spec.noise * rng.standard_normal((spec.n_samples, spec.feature_dim))
        feats.append(f)
        rots.append(r)
        cats += [cat] * spec.n_samples
    ids = np.array([f"{c}-{i}" for c in spec.categories for i in range(spec.n_samples)], dtype=object)
    return PoseDataset(np.concatenate(feats), np.concatenate(rots), np.array(cats, dtype=object), ids)


def split(dataset, n_train, seed=0):
    """Per-category split: the first ``n_train`` of a seeded permutation train."""
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for cat in dataset.category_names():
        idx = np.flatnonzero(dataset.categories == cat)
        idx = idx[rng.permutation(len(idx))]
        train_idx.append(np.sort(idx[:n_train]))
        test_idx.append(np.sort(idx[n_train:]))
    return dataset.subset(np.concatenate(train_idx)), dataset.subset(np.concatenate(test_idx))


# -- dataset file ------------------------------------------------------------
#
#   # posereg dataset v1
#   id,category,r00,...,r22,f0,...,f{D-1}
#   one row per sample; floats written with repr() so reads are bit-exact.


def dataset_to_text(dataset):
    d = dataset.features.shape[1]
    buf = io.StringIO()
    buf.write(DATASET_HEADER + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", "category"] + [f"r{i}{j}" for i in range(3) for j in range(3)] + [f"f{k}" for k in range(d)])
    for i in range(len(dataset)):
        vals = [repr(float(v)) for v in dataset.rotations[i].reshape(-1)] + [repr(float(v)) for v in dataset.features[i]]
        w.writerow([dataset.ids[i], dataset.categories[i]] + vals)
    return buf.getvalue()


def save_dataset(dataset, path):
    atomic_write(path, dataset_to_text(dataset))


class DatasetFormatError(ValueError):
    pass


def load_dataset(path):
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != DATASET_HEADER:
        raise DatasetFormatError(f"{path}:1: missing header {DATASET_HEADER!r}")
    rows = list(csv.reader(lines[1:]))
    if not rows:
        raise DatasetFormatError(f"{path}:2: missing column header")
    head = rows[0]
    n_feat = len(head) - 11
    if head[:2] != ["id", "category"] or n_feat < 1:
        raise DatasetFormatError(f"{path}:2: unexpected column header")
    ids, cats, rots, feats = [], [], [], []
    for lineno, row in enumerate(rows[1:], start=3):
        if len(row) != len(head):
            raise DatasetFormatError(f"{path}:{lineno}: expected {len(head)} columns, got {len(row)}")
        try:
            vals = [float(v) for v in row[2:]]
        except ValueError as exc:
            raise DatasetFormatError(f"{path}:{lineno}: {exc}") from None
        ids.append(row[0])
        cats.append(row[1])
        rots.append(np.array(vals[:9]).reshape(3, 3))
        feats.append(vals[9:])
    if not ids:
        raise DatasetFormatError(f"{path}: no samples")
    return PoseDataset(np.array(feats), np.array(rots), np.array(cats, dtype=object), np.array(ids, dtype=object))
