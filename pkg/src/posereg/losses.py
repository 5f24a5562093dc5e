"""Output activations and losses with analytic gradients.

Every loss returns a :class:`LossValue` holding per-sample values and the
gradient with respect to the prediction. Inputs may carry a leading batch
axis; reductions over the batch happen in the trainer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rotations import exp_map, rodrigues_coefficients, vee

# 1 - u^2 is floored here before taking 1/sqrt(1 - u^2) in acos derivatives.
ACOS_FLOOR = 1e-12
# Losses within this distance of 0 or pi sit on the acos singular set.
SINGULAR_TOL = 1e-6


@dataclass
class LossValue:
    """Loss values and gradient with respect to the loss input.

    ``singular`` marks samples whose gradient went through the clipped acos
    derivative (value within ``SINGULAR_TOL`` of 0 or pi).
    """

    value: np.ndarray
    grad: np.ndarray
    singular: np.ndarray | None = None


def pi_tanh(x):
    """``pi * tanh(x)`` and its (diagonal) Jacobian, shape ``(..., 3, 3)``."""
    x = np.asarray(x, dtype=float)
    t = np.tanh(x)
    jac = np.pi * (1.0 - t * t)
    return np.pi * t, jac[..., :, None] * np.eye(x.shape[-1])


def l2_normalize(x, min_norm=1e-12):
    """``x / |x|`` with Jacobian ``(I - xhat xhat^T) / |x|``.

    Raises
    ------
    ValueError
        When any ``|x| <= min_norm``; the direction is undefined there.
    """
    x = np.asarray(x, dtype=float)
    n = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(n <= min_norm):
        raise ValueError(f"l2_normalize: input norm {float(n.min()):.3g} is too small to normalize")
    xhat = x / n
    eye = np.eye(x.shape[-1])
    jac = (eye - xhat[..., :, None] * xhat[..., None, :]) / n[..., None]
    return xhat, jac


def mse_loss(pred, target):
    """Mean over the last axis of squared differences."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape[-1] != target.shape[-1]:
        raise ValueError(f"mse_loss: dimension mismatch {pred.shape[-1]} vs {target.shape[-1]}")
    diff = pred - target
    dim = pred.shape[-1]
    return LossValue(np.mean(diff * diff, axis=-1), 2.0 * diff / dim)


def _acos_with_grad(u):
    value = np.arccos(np.clip(u, -1.0, 1.0))
    dvalue_du = -1.0 / np.sqrt(np.maximum(1.0 - u * u, ACOS_FLOOR))
    return value, dvalue_du


def _on_singular_set(value):
    return (value < SINGULAR_TOL) | (value > np.pi - SINGULAR_TOL)


def gve_loss_aa(pred_y, target_r):
    """Geodesic error between ``exp([pred_y]x)`` and the target rotation.

    ``value = arccos((tr(R^T exp([y]x)) - 1) / 2)``. The exponential is the
    total map, so ``pred_y`` may leave the canonical ball (as ``pi * tanh``
    outputs can). With ``K = [y]x``, ``exp = I + aK + bK^2`` and

        tr(R^T exp) = tr R + a (y . w) + b y^T R y - (1 - cos theta) tr R

    where ``w = vee(R - R^T)``, which gives the gradient in closed form.
    """
    y = np.asarray(pred_y, dtype=float)
    r = np.asarray(target_r, dtype=float)
    theta = np.linalg.norm(y, axis=-1)
    a, b, da, db = rodrigues_coefficients(theta, derivatives=True)
    w = vee(r)
    tr = np.trace(r, axis1=-2, axis2=-1)
    yw = np.sum(y * w, axis=-1)
    ry = r @ y[..., None]
    yry = np.sum(y * ry[..., 0], axis=-1)
    sym_y = ry[..., 0] + (np.swapaxes(r, -1, -2) @ y[..., None])[..., 0]

    # Trace through the explicit matrix is better conditioned than the
    # expanded form (which suffers from 1 - cos cancellation near theta = 0).
    trace = np.sum(r * exp_map(y), axis=(-2, -1))
    grad_trace = (
        (da * yw)[..., None] * y
        + a[..., None] * w
        + (db * yry)[..., None] * y
        + b[..., None] * sym_y
        - (a * tr)[..., None] * y
    )
    value, dvalue_du = _acos_with_grad(0.5 * (trace - 1.0))
    grad = (0.5 * dvalue_du)[..., None] * grad_trace
    return LossValue(value, grad, _on_singular_set(value))


def gve_loss_quat(pred_x, target_q):
    """``2 arccos(|<x/|x|, q>|)`` with gradient with respect to raw ``x``.

    ``x`` is the pre-normalization output; passing an already-normalized
    quaternion is fine and yields the tangent-projected gradient. The
    subgradient of ``|.|`` at 0 uses sign +1.
    """
    x = np.asarray(pred_x, dtype=float)
    q = np.asarray(target_q, dtype=float)
    xhat, jac = l2_normalize(x)
    p = np.sum(xhat * q, axis=-1)
    sign = np.where(p < 0, -1.0, 1.0)
    half, dvalue_du = _acos_with_grad(np.abs(p))
    dq = (2.0 * dvalue_du * sign)[..., None] * q
    grad = (jac @ dq[..., None])[..., 0]  # jac is symmetric
    value = 2.0 * half
    return LossValue(value, grad, _on_singular_set(value))
