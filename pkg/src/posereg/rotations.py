"""Rotation representations on SO(3) and the geodesic distances between them.

Conventions
-----------
* Axis-angle vectors ``y = theta * v`` live in the open ball ``|y| < pi``;
  the zero vector is the identity.
* Quaternions are stored scalar-first, ``q = (c, s1, s2, s3)``, and returned
  in the hemisphere ``c >= 0`` (ties at ``c == 0`` resolved by making the first
  nonzero vector component positive).
* Viewpoint angles factor a rotation as ``R = Rz(ct) @ Rx(el) @ Rz(az)``.
* All angles are radians.

Every function accepts arrays with arbitrary leading batch dimensions, e.g.
``exp_map`` maps ``(..., 3)`` to ``(..., 3, 3)``.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

# Below these angles the closed-form Rodrigues coefficients lose precision to
# cancellation and their Taylor expansions are used instead.
_SMALL_ANGLE = 1e-4
_SMALL_ANGLE_DERIV = 1e-2

# cos(theta) below this value switches log_map to the symmetric-part axis.
_NEAR_PI_COS = -0.9

GIMBAL_TOL = 1e-6


class Viewpoint(NamedTuple):
    """Azimuth, elevation and camera tilt in radians."""

    az: float
    el: float
    ct: float


def skew(v):
    """Cross-product matrix ``[v]x`` such that ``skew(v) @ w == cross(v, w)``."""
    v = np.asarray(v, dtype=float)
    z = np.zeros(v.shape[:-1])
    x, y, w = v[..., 0], v[..., 1], v[..., 2]
    return np.stack(
        [
            np.stack([z, -w, y], axis=-1),
            np.stack([w, z, -x], axis=-1),
            np.stack([-y, x, z], axis=-1),
        ],
        axis=-2,
    )


def vee(a):
    """Inverse of :func:`skew` applied to the antisymmetric part convention
    ``(A21 - A12, A02 - A20, A10 - A01)``; equals ``2 w`` for ``A = [w]x``."""
    a = np.asarray(a, dtype=float)
    return np.stack(
        [
            a[..., 2, 1] - a[..., 1, 2],
            a[..., 0, 2] - a[..., 2, 0],
            a[..., 1, 0] - a[..., 0, 1],
        ],
        axis=-1,
    )


def rodrigues_coefficients(theta, derivatives=False):
    """Coefficients of ``exp([y]x) = I + a [y]x + b [y]x^2`` with ``theta = |y|``.

    ``a = sin(theta)/theta`` and ``b = (1 - cos(theta))/theta**2``. With
    ``derivatives=True`` also returns ``a'(theta)/theta`` and
    ``b'(theta)/theta``, which are the factors needed for the gradient with
    respect to ``y``.
    """
    theta = np.asarray(theta, dtype=float)
    t2 = theta * theta
    small = theta < _SMALL_ANGLE
    safe = np.where(small, 1.0, theta)
    half_sin = np.sin(0.5 * safe)
    a = np.where(small, 1.0 - t2 / 6.0 + t2 * t2 / 120.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - t2 / 24.0 + t2 * t2 / 720.0, 2.0 * half_sin**2 / safe**2)
    if not derivatives:
        return a, b
    small_d = theta < _SMALL_ANGLE_DERIV
    sd = np.where(small_d, 1.0, theta)
    one_minus_cos = 2.0 * np.sin(0.5 * sd) ** 2
    da = np.where(
        small_d,
        -1.0 / 3.0 + t2 / 30.0 - t2 * t2 / 840.0,
        (sd * np.cos(sd) - np.sin(sd)) / sd**3,
    )
    db = np.where(
        small_d,
        -1.0 / 12.0 + t2 / 180.0 - t2 * t2 / 6720.0,
        (sd * np.sin(sd) - 2.0 * one_minus_cos) / sd**4,
    )
    return a, b, da, db


def exp_map(y):
    """Matrix exponential of ``[y]x`` for any finite ``y`` (no range check)."""
    y = np.asarray(y, dtype=float)
    theta = np.linalg.norm(y, axis=-1)
    a, b = rodrigues_coefficients(theta)
    k = skew(y)
    eye = np.broadcast_to(np.eye(3), k.shape)
    return eye + a[..., None, None] * k + b[..., None, None] * (k @ k)


def _check_canonical(y, what):
    norm = np.linalg.norm(y, axis=-1)
    if np.any(norm >= np.pi) or not np.all(np.isfinite(norm)):
        raise ValueError(
            f"{what}: axis-angle norm must lie in [0, pi), got max {np.max(norm):.17g}"
        )


def exp_rodrigues(y):
    """Rotation matrix of a canonical axis-angle vector via Rodrigues' formula.

    Raises
    ------
    ValueError
        If ``|y| >= pi``. Use :func:`exp_map` for unconstrained inputs.
    """
    y = np.asarray(y, dtype=float)
    _check_canonical(y, "exp_rodrigues")
    return exp_map(y)


def _largest_positive(v):
    """Flip each vector so that its largest-magnitude component is positive."""
    idx = np.argmax(np.abs(v), axis=-1)
    lead = np.take_along_axis(v, idx[..., None], axis=-1)
    return np.where(lead < 0, -v, v)


def log_map(r):
    """Axis-angle vector of a rotation matrix (inverse of :func:`exp_rodrigues`).

    Exact half-turns have two valid axes; the one whose largest-magnitude
    component is positive is returned, with norm ``pi``.
    """
    r = np.asarray(r, dtype=float)
    w = 0.5 * vee(r)  # sin(theta) * v
    s = np.linalg.norm(w, axis=-1)
    c = 0.5 * (np.trace(r, axis1=-2, axis2=-1) - 1.0)
    theta = np.arctan2(s, c)

    small = theta < _SMALL_ANGLE
    t2 = theta * theta
    safe_s = np.where(small | (s == 0), 1.0, s)
    ratio = np.where(small, 1.0 + t2 / 6.0 + 7.0 * t2 * t2 / 360.0, theta / safe_s)
    y = ratio[..., None] * w

    near_pi = c < _NEAR_PI_COS
    if np.any(near_pi):
        sym = 0.5 * (r + np.swapaxes(r, -1, -2))
        denom = np.where(near_pi, 1.0 - c, 1.0)
        outer = (sym - c[..., None, None] * np.eye(3)) / denom[..., None, None]
        diag = np.diagonal(outer, axis1=-2, axis2=-1)
        j = np.argmax(diag, axis=-1)
        col = np.take_along_axis(outer, j[..., None, None], axis=-1)[..., 0]
        col_norm = np.linalg.norm(col, axis=-1, keepdims=True)
        axis = col / np.where(col_norm > 0, col_norm, 1.0)
        dot = np.sum(axis * w, axis=-1)
        resolved = np.where((dot < 0)[..., None], -axis, axis)
        axis = np.where((s > 1e-10)[..., None], resolved, _largest_positive(axis))
        y = np.where(near_pi[..., None], theta[..., None] * axis, y)
    return y


def canonical_quat(q):
    """Representative of ``+-q`` with nonnegative scalar part."""
    q = np.asarray(q, dtype=float)
    vec = q[..., 1:]
    nz = vec != 0
    first = np.argmax(nz, axis=-1)
    lead = np.take_along_axis(vec, first[..., None], axis=-1)[..., 0]
    flip = (q[..., 0] < 0) | ((q[..., 0] == 0) & (lead < 0))
    return np.where(flip[..., None], -q, q)


def axisangle_to_quat(y):
    """Unit quaternion ``(cos(theta/2), sin(theta/2) v)`` of a canonical axis-angle vector."""
    y = np.asarray(y, dtype=float)
    _check_canonical(y, "axisangle_to_quat")
    theta = np.linalg.norm(y, axis=-1)
    small = theta < _SMALL_ANGLE
    t2 = theta * theta
    safe = np.where(small, 1.0, theta)
    k = np.where(small, 0.5 - t2 / 48.0, np.sin(0.5 * safe) / safe)
    return np.concatenate([np.cos(0.5 * theta)[..., None], k[..., None] * y], axis=-1)


def quat_to_axisangle(q):
    """Axis-angle vector of a unit quaternion; ``q`` and ``-q`` give the same result."""
    q = canonical_quat(q)
    c, s = q[..., 0], q[..., 1:]
    n = np.linalg.norm(s, axis=-1)
    theta = 2.0 * np.arctan2(n, c)
    small = n < 1e-8
    ratio = np.where(small, 2.0 / np.where(small, c, 1.0), theta / np.where(small, 1.0, n))
    return ratio[..., None] * s


def quat_mul(q1, q2):
    """Hamilton product ``(c1 c2 - <s1, s2>, c1 s2 + c2 s1 + s1 x s2)``."""
    q1 = np.asarray(q1, dtype=float)
    q2 = np.asarray(q2, dtype=float)
    c1, s1 = q1[..., 0], q1[..., 1:]
    c2, s2 = q2[..., 0], q2[..., 1:]
    c = c1 * c2 - np.sum(s1 * s2, axis=-1)
    s = c1[..., None] * s2 + c2[..., None] * s1 + np.cross(s1, s2)
    return np.concatenate([c[..., None], s], axis=-1)


def quat_inv(q):
    """Inverse of a unit quaternion, ``(c, -s)``."""
    q = np.asarray(q, dtype=float)
    return np.concatenate([q[..., :1], -q[..., 1:]], axis=-1)


def quat_to_mat(q):
    q = np.asarray(q, dtype=float)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    return np.stack(
        [
            np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], axis=-1),
            np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], axis=-1),
            np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], axis=-1),
        ],
        axis=-2,
    )


def mat_to_quat(r):
    """Unit quaternion of a rotation matrix (Shepperd's method), canonical hemisphere."""
    r = np.asarray(r, dtype=float)
    m00, m11, m22 = r[..., 0, 0], r[..., 1, 1], r[..., 2, 2]
    tr = m00 + m11 + m22
    # Candidate with the largest pivot is numerically safest.
    pivots = np.stack([tr, m00, m11, m22], axis=-1)
    k = np.argmax(pivots, axis=-1)

    def cand(w, x, y, z):
        return np.stack([w, x, y, z], axis=-1)

    d21 = r[..., 2, 1] - r[..., 1, 2]
    d02 = r[..., 0, 2] - r[..., 2, 0]
    d10 = r[..., 1, 0] - r[..., 0, 1]
    s01 = r[..., 0, 1] + r[..., 1, 0]
    s02 = r[..., 0, 2] + r[..., 2, 0]
    s12 = r[..., 1, 2] + r[..., 2, 1]
    with np.errstate(invalid="ignore", divide="ignore"):
        t0 = np.sqrt(np.maximum(1.0 + tr, 0.0)) * 2.0
        t1 = np.sqrt(np.maximum(1.0 + m00 - m11 - m22, 0.0)) * 2.0
        t2 = np.sqrt(np.maximum(1.0 - m00 + m11 - m22, 0.0)) * 2.0
        t3 = np.sqrt(np.maximum(1.0 - m00 - m11 + m22, 0.0)) * 2.0
        cands = np.stack(
            [
                cand(t0 / 4, d21 / t0, d02 / t0, d10 / t0),
                cand(d21 / t1, t1 / 4, s01 / t1, s02 / t1),
                cand(d02 / t2, s01 / t2, t2 / 4, s12 / t2),
                cand(d10 / t3, s02 / t3, s12 / t3, t3 / 4),
            ],
            axis=-2,
        )
    q = np.take_along_axis(cands, k[..., None, None], axis=-2)[..., 0, :]
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    return canonical_quat(q)


def rot_x(angle):
    angle = np.asarray(angle, dtype=float)
    c, s = np.cos(angle), np.sin(angle)
    o, z = np.ones_like(c), np.zeros_like(c)
    return np.stack(
        [np.stack([o, z, z], -1), np.stack([z, c, -s], -1), np.stack([z, s, c], -1)], axis=-2
    )


def rot_z(angle):
    angle = np.asarray(angle, dtype=float)
    c, s = np.cos(angle), np.sin(angle)
    o, z = np.ones_like(c), np.zeros_like(c)
    return np.stack(
        [np.stack([c, -s, z], -1), np.stack([s, c, z], -1), np.stack([z, z, o], -1)], axis=-2
    )


def viewpoint_to_mat(az, el, ct):
    """``Rz(ct) @ Rx(el) @ Rz(az)``."""
    return rot_z(ct) @ rot_x(el) @ rot_z(az)


def wrap_angle(a):
    """Map angles into ``[-pi, pi)``, leaving values already in range untouched."""
    a = np.asarray(a, dtype=float)
    inside = (a >= -np.pi) & (a < np.pi)
    wrapped = np.mod(a + np.pi, 2.0 * np.pi) - np.pi
    # mod can round up to exactly pi
    wrapped = np.where(wrapped >= np.pi, -np.pi, wrapped)
    out = np.where(inside, a, wrapped)
    return out if out.ndim else float(out)


def mat_to_viewpoint(r):
    """Factor ``R = Rz(ct) Rx(el) Rz(az)``.

    The elevation is returned in ``[0, pi]``, which picks the non-negative
    elevation among the two factorizations ``(az, el, ct)`` and
    ``(az + pi, -el, ct + pi)``. When ``sin(el)`` is within :data:`GIMBAL_TOL`
    of zero only ``az + ct`` (or ``ct - az``) is determined; ``az`` is then
    set to 0 and the whole in-plane angle is assigned to ``ct``.

    Returns
    -------
    Viewpoint
        With scalar fields for a single matrix, array fields for a batch.
    """
    r = np.asarray(r, dtype=float)
    s_el = np.hypot(r[..., 2, 0], r[..., 2, 1])
    el = np.arctan2(s_el, r[..., 2, 2])
    az = np.arctan2(r[..., 2, 0], r[..., 2, 1])
    ct = np.arctan2(r[..., 0, 2], -r[..., 1, 2])
    locked = s_el < GIMBAL_TOL
    az = np.where(locked, 0.0, az)
    ct = np.where(locked, np.arctan2(r[..., 1, 0], r[..., 0, 0]), ct)
    return Viewpoint(wrap_angle(az), el if el.ndim else float(el), wrap_angle(ct))


def is_gimbal_locked(r):
    r = np.asarray(r, dtype=float)
    return np.hypot(r[..., 2, 0], r[..., 2, 1]) < GIMBAL_TOL


def flip_viewpoint(vp):
    """Viewpoint of the horizontally mirrored image, ``(-az, el, -ct)``."""
    az, el, ct = vp
    return Viewpoint(wrap_angle(-np.asarray(az, dtype=float)), el, wrap_angle(-np.asarray(ct, dtype=float)))


def geodesic_dist_mat(r1, r2):
    """``|log(R1 R2^T)|_F / sqrt(2)``, evaluated through :func:`log_map`."""
    rel = np.asarray(r1, dtype=float) @ np.swapaxes(np.asarray(r2, dtype=float), -1, -2)
    d = np.linalg.norm(log_map(rel), axis=-1)
    return d if d.ndim else float(d)


def geodesic_dist_aa(r1, r2):
    """``arccos((tr(R1^T R2) - 1) / 2)`` with the argument clamped to ``[-1, 1]``."""
    r1 = np.asarray(r1, dtype=float)
    r2 = np.asarray(r2, dtype=float)
    tr = np.sum(r1 * r2, axis=(-2, -1))
    d = np.arccos(np.clip(0.5 * (tr - 1.0), -1.0, 1.0))
    return d if d.ndim else float(d)


def geodesic_dist_quat(q1, q2):
    """``2 arccos(|<q1, q2>|)`` for unit quaternions.

    Evaluated as ``4 atan2(|q1 - s q2|, |q1 + s q2|)`` with ``s`` the sign of
    the inner product, which equals the arccos form on unit inputs but keeps
    full precision when ``q2 = +-q1`` (arccos loses about 1e-8 there).
    """
    q1 = np.asarray(q1, dtype=float)
    q2 = np.asarray(q2, dtype=float)
    s = np.where(np.sum(q1 * q2, axis=-1) < 0, -1.0, 1.0)[..., None]
    d = 4.0 * np.arctan2(np.linalg.norm(q1 - s * q2, axis=-1), np.linalg.norm(q1 + s * q2, axis=-1))
    return d if d.ndim else float(d)


def random_rotations(rng, size=None):
    """Haar-uniform rotation matrices, via normalized Gaussian quaternions."""
    shape = () if size is None else (size,) if np.isscalar(size) else tuple(size)
    q = rng.standard_normal(shape + (4,))
    q /= np.linalg.norm(q, axis=-1, keepdims=True)
    return quat_to_mat(q)


def is_rotation(r, tol=1e-9):
    r = np.asarray(r, dtype=float)
    if r.shape[-2:] != (3, 3) or not np.all(np.isfinite(r)):
        return False
    orth = np.abs(np.swapaxes(r, -1, -2) @ r - np.eye(3)).max()
    det = np.abs(np.linalg.det(r) - 1.0).max()
    return bool(orth <= tol and det <= tol)
