"""Vertebra registration, drill tracking and evaluation."""

from ._core import (
    Error,
    PoseRow,
    RigidTransform,
    decode_packet,
    dice_loss,
    geodesic_angle,
    perforation,
    read_poses,
    run_synthetic,
    smooth_mask,
    total_loss,
    umeyama,
    z_rotation_quat,
)

__all__ = [
    "Error",
    "PoseRow",
    "RigidTransform",
    "decode_packet",
    "dice_loss",
    "geodesic_angle",
    "perforation",
    "read_poses",
    "run_synthetic",
    "smooth_mask",
    "total_loss",
    "umeyama",
    "z_rotation_quat",
]
