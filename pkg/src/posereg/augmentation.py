"""3D pose jittering: perturbed-pose grids with exact labels, and the image
warps that synthesize them (in-plane rotation for tilt, homographies for
azimuth, horizontal flips).

Image coordinates are ``(col, row)`` = ``(u, v)`` with ``v`` pointing down the
rows. Images are 2-D float arrays.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import ndimage

from ._fileio import atomic_write
from .rotations import Viewpoint, flip_viewpoint, viewpoint_to_mat, wrap_angle

IMAGE_MAGIC = "POSEREG-IMAGE 1"


# -- pose grid ---------------------------------------------------------------


@dataclass(frozen=True)
class JitterConfig:
    """Shift ranges and steps in radians. Each range must be a whole number
    of steps so that the grid hits ``-range`` and ``+range`` exactly."""

    ct_range: float = np.deg2rad(4.0)
    ct_step: float = np.deg2rad(1.0)
    az_range: float = np.deg2rad(2.0)
    az_step: float = np.deg2rad(0.5)
    include_flips: bool = True

    def __post_init__(self):
        for name in ("ct", "az"):
            rng, step = getattr(self, f"{name}_range"), getattr(self, f"{name}_step")
            if not step > 0:
                raise ValueError(f"{name}_step must be > 0")
            if rng < 0:
                raise ValueError(f"{name}_range must be >= 0")
            ratio = 2 * rng / step
            if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
                raise ValueError(f"2*{name}_range must be a whole multiple of {name}_step")

    def shifts(self, name):
        rng, step = getattr(self, f"{name}_range"), getattr(self, f"{name}_step")
        n = int(round(2 * rng / step)) + 1
        return np.linspace(-rng, rng, n) if n > 1 else np.zeros(1)

    def __len__(self):
        return len(self.shifts("ct")) * len(self.shifts("az")) * (2 if self.include_flips else 1)


class JitterSample(NamedTuple):
    viewpoint: Viewpoint
    d_ct: float
    d_az: float
    flip: bool


def jitter_grid(vp, config=None):
    """All ``(ct shift) x (az shift) [x flip]`` perturbations of ``vp``.

    The unflipped label is ``(az + d_az, el, ct + d_ct)``; the flipped one is
    its mirror ``(-(az + d_az), el, -(ct + d_ct))``.
    """
    config = JitterConfig() if config is None else config
    az, el, ct = (float(v) for v in vp)
    flips = (False, True) if config.include_flips else (False,)
    out = []
    for flip, d_ct, d_az in itertools.product(flips, config.shifts("ct"), config.shifts("az")):
        label = Viewpoint(float(wrap_angle(az + d_az)), el, float(wrap_angle(ct + d_ct)))
        if flip:
            label = flip_viewpoint(label)
        out.append(JitterSample(label, float(d_ct), float(d_az), flip))
    return out


def label_matrices(samples):
    return np.array([viewpoint_to_mat(*s.viewpoint) for s in samples])


# -- camera ------------------------------------------------------------------


class Camera(NamedTuple):
    focal: float
    cx: float
    cy: float
    distance: float


def centered_camera(shape, focal, distance):
    """Pinhole camera whose principal point is the center of a ``shape`` image."""
    rows, cols = shape
    return Camera(float(focal), (cols - 1) / 2.0, (rows - 1) / 2.0, float(distance))


def project_points(cloud, vp, camera):
    """Pinhole projection of ``R(vp) X + (0, 0, d)`` to ``(N, 2)`` image points."""
    cloud = np.asarray(cloud, dtype=float)
    x = cloud @ viewpoint_to_mat(*vp).T
    x[:, 2] += camera.distance
    if np.any(x[:, 2] <= 0):
        bad = int(np.flatnonzero(x[:, 2] <= 0)[0])
        raise ValueError(f"point {bad} is at or behind the camera plane (depth {x[bad, 2]:.6g})")
    u = camera.focal * x[:, 0] / x[:, 2] + camera.cx
    v = camera.focal * x[:, 1] / x[:, 2] + camera.cy
    return np.stack([u, v], axis=1)


# -- homographies ------------------------------------------------------------


@dataclass(frozen=True)
class Homography:
    h: np.ndarray
    rms: float = 0.0


class DegenerateConfigurationError(ValueError):
    pass


def _normalizer(pts):
    centroid = pts.mean(axis=0)
    scale = np.sqrt(2.0) / np.sqrt(np.mean(np.sum((pts - centroid) ** 2, axis=1)))
    return np.array([[scale, 0, -scale * centroid[0]], [0, scale, -scale * centroid[1]], [0, 0, 1.0]])


def _to_h(pts):
    return np.hstack([pts, np.ones((len(pts), 1))])


def normalize_homography(h):
    h = np.asarray(h, dtype=float)
    h = h / h[2, 2] if abs(h[2, 2]) > 1e-12 * np.linalg.norm(h) else h / np.linalg.norm(h)
    if abs(np.linalg.det(h)) <= 1e-12:
        raise DegenerateConfigurationError("homography is singular")
    return h


def apply_homography(h, pts):
    h = h.h if isinstance(h, Homography) else np.asarray(h, dtype=float)
    p = _to_h(np.asarray(pts, dtype=float)) @ h.T
    return p[:, :2] / p[:, 2:3]


def estimate_homography(src, dst):
    """Least-squares DLT with centroid/RMS-sqrt(2) normalization of both point sets.

    Returns a :class:`Homography` with ``h[2, 2] == 1`` and the RMS transfer
    residual ``|H src - dst|`` in pixels.
    """
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 2:
        raise ValueError("src and dst must both be (N, 2)")
    n = len(src)
    if n < 4:
        raise DegenerateConfigurationError(f"need at least 4 correspondences, got {n}")
    for pts in (src, dst):
        if np.ptp(pts, axis=0).max() == 0:
            raise DegenerateConfigurationError("all points coincide")
    t_src, t_dst = _normalizer(src), _normalizer(dst)
    a_pts = _to_h(src) @ t_src.T
    b_pts = _to_h(dst) @ t_dst.T
    if n == 4:
        for pts in (a_pts, b_pts):
            for tri in itertools.combinations(range(4), 3):
                if abs(np.linalg.det(pts[list(tri)])) < 1e-10:
                    raise DegenerateConfigurationError("three of the four points are collinear")
    rows = []
    for (x, y, _), (u, v, _) in zip(a_pts, b_pts):
        rows.append([-x, -y, -1, 0, 0, 0, u * x, u * y, u])
        rows.append([0, 0, 0, -x, -y, -1, v * x, v * y, v])
    _, s, vt = np.linalg.svd(np.array(rows))
    # rank 8 is needed for a unique (up to scale) solution
    if s[7] <= 1e-10 * s[0]:
        raise DegenerateConfigurationError("design matrix is rank deficient")
    hn = vt[-1].reshape(3, 3)
    h = normalize_homography(np.linalg.inv(t_dst) @ hn @ t_src)
    resid = apply_homography(h, src) - dst
    return Homography(h, float(np.sqrt(np.mean(np.sum(resid**2, axis=1)))))


def azimuth_homography(cloud, vp, d_az, camera):
    """Homography taking the view at ``vp`` to the view at azimuth ``az + d_az``."""
    az, el, ct = vp
    src = project_points(cloud, (az, el, ct), camera)
    dst = project_points(cloud, (az + d_az, el, ct), camera)
    return estimate_homography(src, dst)


# -- image warps -------------------------------------------------------------


def _check_image(img):
    img = np.asarray(img, dtype=float)
    if img.ndim != 2 or min(img.shape) < 1:
        raise ValueError(f"image must be a non-empty 2-D array, got shape {img.shape}")
    return img


def _sample(img, cols, rows):
    # bilinear; out-of-bounds samples replicate the nearest edge pixel
    return ndimage.map_coordinates(img, [rows, cols], order=1, mode="nearest")


def _grid(shape):
    rows, cols = np.indices(shape, dtype=float)
    return cols, rows


def rotate_inplane(img, angle, center=None):
    """Rotate ``img`` by ``angle`` about ``center`` (default: geometric center).

    A point at ``q`` in the input appears at ``Rz(angle) (q - c) + c`` in the
    output, which is how a camera-tilt change moves projected points.
    """
    img = _check_image(img)
    if center is None:
        center = ((img.shape[1] - 1) / 2.0, (img.shape[0] - 1) / 2.0)
    cu, cv = center
    cols, rows = _grid(img.shape)
    c, s = np.cos(angle), np.sin(angle)
    du, dv = cols - cu, rows - cv
    return _sample(img, c * du + s * dv + cu, -s * du + c * dv + cv)


def warp_homography(img, h):
    """Inverse warp: ``output(q) = img(H^-1 q)``."""
    img = _check_image(img)
    h = h.h if isinstance(h, Homography) else normalize_homography(h)
    cols, rows = _grid(img.shape)
    src = apply_homography(np.linalg.inv(h), np.stack([cols.ravel(), rows.ravel()], axis=1))
    return _sample(img, src[:, 0].reshape(img.shape), src[:, 1].reshape(img.shape))


def flip_image(img):
    return np.fliplr(_check_image(img)).copy()


def augment(img, vp, config=None, cloud=None, camera=None):
    """Images and labels for every entry of ``jitter_grid(vp, config)``.

    Each image is the azimuth homography (estimated from ``cloud``), then the
    in-plane tilt rotation about the principal point, then an optional flip.
    ``cloud`` and ``camera`` are only needed when azimuth shifts are nonzero.
    """
    img = _check_image(img)
    samples = jitter_grid(vp, config)
    if camera is None:
        center = None
    else:
        center = (camera.cx, camera.cy)
    warped = {}
    out = []
    for s in samples:
        if s.d_az not in warped:
            if s.d_az == 0.0:
                warped[s.d_az] = img
            else:
                if cloud is None or camera is None:
                    raise ValueError("azimuth shifts need a point cloud and a camera")
                warped[s.d_az] = warp_homography(img, azimuth_homography(cloud, vp, s.d_az, camera))
        a = warped[s.d_az]
        if s.d_ct != 0.0:
            a = rotate_inplane(a, s.d_ct, center)
        if s.flip:
            a = flip_image(a)
        out.append((a, s))
    return out


# -- file formats ------------------------------------------------------------
#
# Point cloud: one "x y z" triple per line; blank lines and '#' comments skipped.
# Image:
#   POSEREG-IMAGE 1
#   <rows> <cols>
#   <rows> lines of <cols> whitespace-separated values (repr floats)


class FormatError(ValueError):
    pass


def read_point_cloud(path):
    pts = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 3:
                raise FormatError(f"{path}:{lineno}: expected 3 coordinates, got {len(parts)}")
            try:
                pts.append([float(p) for p in parts])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
    if len(pts) < 4:
        raise FormatError(f"{path}: need at least 4 points, got {len(pts)}")
    return np.array(pts)


def write_point_cloud(cloud, path):
    atomic_write(path, "".join(" ".join(repr(float(c)) for c in p) + "\n" for p in np.asarray(cloud)))


def image_to_text(img):
    img = _check_image(img)
    lines = [IMAGE_MAGIC, f"{img.shape[0]} {img.shape[1]}"]
    lines += [" ".join(repr(float(v)) for v in row) for row in img]
    return "\n".join(lines) + "\n"


def write_image(img, path):
    atomic_write(path, image_to_text(img))


def read_image(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != IMAGE_MAGIC:
        raise FormatError(f"{path}:1: missing header {IMAGE_MAGIC!r}")
    try:
        rows, cols = (int(t) for t in lines[1].split())
    except (IndexError, ValueError):
        raise FormatError(f"{path}:2: expected '<rows> <cols>'") from None
    if rows < 1 or cols < 1:
        raise FormatError(f"{path}:2: dimensions must be positive")
    body = lines[2:]
    if len(body) != rows:
        raise FormatError(f"{path}: expected {rows} pixel rows, got {len(body)}")
    img = np.empty((rows, cols))
    for i, line in enumerate(body):
        parts = line.split()
        if len(parts) != cols:
            raise FormatError(f"{path}:{i + 3}: expected {cols} values, got {len(parts)}")
        try:
            img[i] = [float(p) for p in parts]
        except ValueError as exc:
            raise FormatError(f"{path}:{i + 3}: {exc}") from None
    return img
