"""Continuous 3D pose regression: rotation representations, geodesic losses,
per-category pose networks, 3D pose jittering and pose-estimation metrics."""

from .rotations import (
    axisangle_to_quat,
    exp_map,
    exp_rodrigues,
    flip_viewpoint,
    geodesic_dist_aa,
    geodesic_dist_mat,
    geodesic_dist_quat,
    log_map,
    mat_to_quat,
    mat_to_viewpoint,
    quat_to_axisangle,
    quat_to_mat,
    viewpoint_to_mat,
)

__version__ = "0.1.0"
