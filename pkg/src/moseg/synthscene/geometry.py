"""Rigid-motion and pinhole-projection primitives for the scene generator.

World coordinates coincide with the frame-1 camera frame: x right, y down,
z into the scene. Pixel coordinates are (x, y) = (column, row).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial.transform import Rotation

# Rotation matrices must be orthonormal with det +1 within this tolerance.
ROTATION_TOL = 1e-6
# A transform is "identity" when every component is within this of identity.
MOTION_TOL = 1e-9


def _as_float_array(x, shape) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.shape != shape:
        raise ValueError(f"expected array of shape {shape}, got {arr.shape}")
    return arr


@dataclass(frozen=True)
class RigidTransform:
    """A rotation followed by a translation: x -> R @ x + t."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "rotation", _as_float_array(self.rotation, (3, 3)))
        object.__setattr__(self, "translation", _as_float_array(self.translation, (3,)))
        err = np.abs(self.rotation @ self.rotation.T - np.eye(3)).max()
        if err > ROTATION_TOL or abs(np.linalg.det(self.rotation) - 1.0) > ROTATION_TOL:
            raise ValueError("rotation must be orthonormal with determinant +1")

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform()

    @staticmethod
    def from_rotvec(rotvec, translation=(0.0, 0.0, 0.0)) -> "RigidTransform":
        rot = Rotation.from_rotvec(np.asarray(rotvec, dtype=np.float64)).as_matrix()
        return RigidTransform(rot, np.asarray(translation, dtype=np.float64))

    @staticmethod
    def about_center(rotvec, translation, center) -> "RigidTransform":
        """Rotation about `center` composed with a translation, as one plain transform."""
        center = np.asarray(center, dtype=np.float64)
        rot = Rotation.from_rotvec(np.asarray(rotvec, dtype=np.float64)).as_matrix()
        t = center - rot @ center + np.asarray(translation, dtype=np.float64)
        return RigidTransform(rot, t)

    def apply(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """Transform equal to applying `other` first, then `self`."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "RigidTransform":
        rot_inv = self.rotation.T
        return RigidTransform(rot_inv, -rot_inv @ self.translation)

    def rotvec(self) -> np.ndarray:
        return Rotation.from_matrix(self.rotation).as_rotvec()

    def is_identity(self, tol: float = MOTION_TOL) -> bool:
        return (
            np.abs(self.rotation - np.eye(3)).max() <= tol
            and np.abs(self.translation).max() <= tol
        )

    def as_sixvec(self) -> np.ndarray:
        """Axis-angle (3) + translation (3) packed into one vector."""
        return np.concatenate([self.rotvec(), self.translation]).astype(np.float64)


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera; `pose_delta` is the camera's own rigid motion (world frame)
    between frame 1 and frame 2.

    A world point p is seen by frame 2 at R^T (p - t) with (R, t) = pose_delta:
    translating the camera by +t shifts static image content by -t.
    """

    focal: float
    principal_point: tuple
    image_size: tuple  # (H, W)
    pose_delta: RigidTransform = field(default_factory=RigidTransform.identity)

    def __post_init__(self):
        if not self.focal > 0:
            raise ValueError("focal must be > 0")
        h, w = self.image_size
        if h < 32 or w < 32:
            raise ValueError("image size must be at least 32x32")

    @property
    def height(self) -> int:
        return int(self.image_size[0])

    @property
    def width(self) -> int:
        return int(self.image_size[1])

    def pixel_grid(self) -> np.ndarray:
        """(H, W, 2) array of (x, y) pixel coordinates."""
        ys, xs = np.mgrid[0 : self.height, 0 : self.width]
        return np.stack([xs, ys], axis=-1).astype(np.float64)

    def back_project(self, pixels: np.ndarray, depth: np.ndarray) -> np.ndarray:
        """Pixels (..., 2) and depth (...) to 3D points (..., 3) in the frame-1 camera."""
        cx, cy = self.principal_point
        x = (pixels[..., 0] - cx) * depth / self.focal
        y = (pixels[..., 1] - cy) * depth / self.focal
        return np.stack([x, y, np.asarray(depth, dtype=np.float64)], axis=-1)

    def project(self, points: np.ndarray) -> tuple:
        """3D points (..., 3) to pixel coordinates (..., 2) plus depth (...)."""
        cx, cy = self.principal_point
        z = points[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            px = self.focal * points[..., 0] / z + cx
            py = self.focal * points[..., 1] / z + cy
        return np.stack([px, py], axis=-1), z

    def world_to_frame2(self, points: np.ndarray) -> np.ndarray:
        """World points into frame-2 camera coordinates."""
        rot = self.pose_delta.rotation
        t = self.pose_delta.translation
        return (points - t) @ rot  # (R^T (p - t))^T rows


def project_flow(
    depth: np.ndarray,
    camera: CameraModel,
    masks: np.ndarray,
    motions: dict,
) -> tuple:
    """Forward flow for every pixel from geometry alone.

    Each pixel is back-projected with `depth`, moved by the rigid motion of the
    region it belongs to (`masks` holds region ids; ids missing from `motions`
    are static), mapped into the frame-2 camera and re-projected. Flow is the
    pixel displacement; pixels that land behind the camera are flagged invalid.

    Returns (flow (H, W, 2) float64, valid (H, W) bool).
    """
    depth = np.asarray(depth, dtype=np.float64)
    if np.any(depth <= 0):
        raise ValueError("depth must be positive everywhere")
    if masks.shape != depth.shape:
        raise ValueError("masks must match depth shape")

    pixels = camera.pixel_grid()
    points = camera.back_project(pixels, depth)

    moved = points.copy()
    for body_id, motion in motions.items():
        sel = masks == body_id
        if not np.any(sel):
            continue
        moved[sel] = motion.apply(moved[sel])

    cam2 = camera.world_to_frame2(moved.reshape(-1, 3)).reshape(moved.shape)
    valid = cam2[..., 2] > 1e-9
    pix2, _ = camera.project(cam2)
    flow = pix2 - pixels
    flow[~valid] = 0.0
    return flow, valid


def ego_flow(depth: np.ndarray, camera: CameraModel) -> np.ndarray:
    """Flow induced by camera motion alone (all content static)."""
    flow, _ = project_flow(depth, camera, np.zeros_like(depth, dtype=np.int32), {})
    return flow
