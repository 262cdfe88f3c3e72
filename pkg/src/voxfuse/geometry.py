"""Pinhole camera model and rigid-body transforms.

Conventions
-----------
* A :class:`RigidPose` maps points from a source frame into a target frame,
  ``p_target = R @ p_source + t``.  Camera poses are stored world->camera.
* Pixel coordinates are continuous, ``x`` along image columns and ``y`` along
  rows.  The integer coordinate ``(x, y)`` is the center of pixel ``(x, y)``,
  so pixel ``(x, y)`` covers ``[x - 0.5, x + 0.5) x [y - 0.5, y + 0.5)``.
* No lens distortion: images are assumed rectified.

All functions accept a single point of shape ``(3,)`` or a batch ``(..., 3)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidPose, NonPositiveDepth, PointBehindCamera, ValidationError

_ORTHO_TOL = 1e-9


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValidationError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if self.width < 1 or self.height < 1:
            raise ValidationError(f"image size must be >= 1, got {self.width}x{self.height}")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def contains(self, pixels) -> np.ndarray:
        """Half-open in-image test: ``-0.5 <= x < width - 0.5`` (same for y)."""
        pixels = np.asarray(pixels, dtype=np.float64)
        x, y = pixels[..., 0], pixels[..., 1]
        return (x >= -0.5) & (x < self.width - 0.5) & (y >= -0.5) & (y < self.height - 0.5)

    def pixel_grid(self) -> np.ndarray:
        """Centers of every pixel as an ``(height, width, 2)`` array of (x, y)."""
        ys, xs = np.meshgrid(np.arange(self.height), np.arange(self.width), indexing="ij")
        return np.stack([xs, ys], axis=-1).astype(np.float64)


@dataclass(frozen=True, eq=False)
class RigidPose:
    """Proper rigid motion ``p -> R p + t`` (rotation unitless, translation in meters)."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise InvalidPose("pose contains non-finite values")
        if np.abs(R.T @ R - np.eye(3)).max() > _ORTHO_TOL or abs(np.linalg.det(R) - 1.0) > _ORTHO_TOL:
            raise InvalidPose("rotation is not orthonormal with det +1")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> RigidPose:
        return cls()

    @classmethod
    def from_matrix(cls, matrix, orthonormalize: bool = False) -> RigidPose:
        """Build from a 3x4 or 4x4 ``[R | t]`` matrix.

        With ``orthonormalize`` the rotation block is snapped to the nearest
        rotation (SVD), which is needed for poses stored at float precision.
        """
        m = np.asarray(matrix, dtype=np.float64)
        if m.shape not in ((3, 4), (4, 4)):
            raise ValidationError(f"expected a 3x4 or 4x4 matrix, got shape {m.shape}")
        R = m[:3, :3]
        if orthonormalize:
            R = nearest_rotation(R)
        return cls(R, m[:3, 3])

    @classmethod
    def from_translation(cls, translation) -> RigidPose:
        return cls(np.eye(3), translation)

    @property
    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation

    def rotate(self, vectors) -> np.ndarray:
        return np.asarray(vectors, dtype=np.float64) @ self.rotation.T

    def inverse(self) -> RigidPose:
        Rt = self.rotation.T
        return RigidPose(Rt, -Rt @ self.translation)

    def compose(self, other: RigidPose) -> RigidPose:
        """``self ∘ other``: apply ``other`` first, then ``self``."""
        return RigidPose(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def __matmul__(self, other: RigidPose) -> RigidPose:
        return self.compose(other)

    def allclose(self, other: RigidPose, atol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.rotation, other.rotation, rtol=0, atol=atol)
            and np.allclose(self.translation, other.translation, rtol=0, atol=atol)
        )

    @property
    def center(self) -> np.ndarray:
        """Origin of the target frame expressed in the source frame."""
        return -self.rotation.T @ self.translation

    def __repr__(self):
        return f"RigidPose(rotation={self.rotation.tolist()}, translation={self.translation.tolist()})"


def nearest_rotation(m) -> np.ndarray:
    u, _, vt = np.linalg.svd(np.asarray(m, dtype=np.float64))
    r = u @ vt
    if np.linalg.det(r) < 0:
        u[:, -1] *= -1
        r = u @ vt
    return r


def rotation_about_axis(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation matrix for ``angle`` radians about ``axis``."""
    a = np.asarray(axis, dtype=np.float64)
    a = a / np.linalg.norm(a)
    k = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
    return np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * (k @ k)


def project_camera(points_cam, K: CameraIntrinsics):
    """Perspective divide for camera-frame points; no depth check."""
    points_cam = np.asarray(points_cam, dtype=np.float64)
    z = points_cam[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        x = K.fx * points_cam[..., 0] / z + K.cx
        y = K.fy * points_cam[..., 1] / z + K.cy
    return np.stack([x, y], axis=-1), z


def project(points, pose: RigidPose, K: CameraIntrinsics):
    """Project world points into the image.

    Returns ``(pixels, depth)`` with continuous pixel coordinates and the
    camera-frame depth Z in meters.

    Raises
    ------
    PointBehindCamera
        If any point has camera-frame ``Z <= 0``.
    """
    pc = pose.apply(points)
    if np.any(pc[..., 2] <= 0):
        raise PointBehindCamera("camera-frame depth must be positive")
    return project_camera(pc, K)


def back_project(pixels, depth, pose: RigidPose, K: CameraIntrinsics) -> np.ndarray:
    """Lift pixels at camera-frame depth ``depth`` (meters) to world points."""
    pixels = np.asarray(pixels, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    if np.any(~(depth > 0)):
        raise NonPositiveDepth("depth must be positive")
    pc = np.stack(
        [
            (pixels[..., 0] - K.cx) / K.fx * depth,
            (pixels[..., 1] - K.cy) / K.fy * depth,
            np.broadcast_to(depth, pixels.shape[:-1]),
        ],
        axis=-1,
    )
    return pose.inverse().apply(pc)


def relative_transform(pose_prev: RigidPose, pose_curr: RigidPose) -> RigidPose:
    """Motion taking points in the previous camera frame to the current one."""
    return pose_curr.compose(pose_prev.inverse())


def relative_in_frame(pose_prev: RigidPose, pose_curr: RigidPose, frame_to_cam: RigidPose) -> RigidPose:
    """Relative camera motion expressed in a rig frame (e.g. LiDAR) mounted at ``frame_to_cam``."""
    cam = relative_transform(pose_prev, pose_curr)
    return frame_to_cam.inverse().compose(cam).compose(frame_to_cam)


def ray_through_pixel(pixels, pose: RigidPose, K: CameraIntrinsics):
    """Viewing ray of each pixel.

    Returns ``(origin, direction)`` in the world frame, ``direction`` of unit
    length.  A point at camera depth ``d`` is ``origin + d * norm * direction``
    with ``norm = |((x-cx)/fx, (y-cy)/fy, 1)|``; see :func:`ray_depth_scale`.
    """
    pixels = np.asarray(pixels, dtype=np.float64)
    dc = np.stack(
        [(pixels[..., 0] - K.cx) / K.fx, (pixels[..., 1] - K.cy) / K.fy, np.ones(pixels.shape[:-1])],
        axis=-1,
    )
    dc /= np.linalg.norm(dc, axis=-1, keepdims=True)
    direction = pose.inverse().rotate(dc)
    origin = np.broadcast_to(pose.center, direction.shape).copy()
    return origin, direction


def ray_depth_scale(pixels, K: CameraIntrinsics) -> np.ndarray:
    """Ray length per unit of camera depth for each pixel."""
    pixels = np.asarray(pixels, dtype=np.float64)
    u = (pixels[..., 0] - K.cx) / K.fx
    v = (pixels[..., 1] - K.cy) / K.fy
    return np.sqrt(u * u + v * v + 1.0)
