"""Synthetic labeled worlds with known answers.

A world is a label grid in a fixed world frame (z up).  A simple rig mirrors
the SemanticKITTI layout: each frame has a vehicle pose (world -> vehicle,
x forward, y left, z up), the scene volume is axis-aligned in the vehicle
frame, and the camera is rigidly attached through a vehicle -> camera
extrinsic.  Vehicle motions default to whole-voxel steps so that every frame
volume lies on the world lattice.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .depth_prior import DepthMap
from .errors import ValidationError
from .geometry import CameraIntrinsics, RigidPose, ray_depth_scale, ray_through_pixel, rotation_about_axis
from .voxel import CLASS_IDS, EMPTY, UNKNOWN, GridSpec, LabelGrid, MaskGrid, points_to_indices

RECIPES = ("ground-plane", "boxes", "random-blobs")
DEFAULT_PALETTE = tuple(CLASS_IDS[n] for n in ("car", "building", "fence", "vegetation", "trunk", "pole", "truck"))
BLOB_PALETTE = tuple(CLASS_IDS[n] for n in ("vegetation", "terrain", "traffic-sign", "person"))
MAX_WORLD_VOXELS = 64 ** 3


@dataclass(eq=False)
class SyntheticWorld:
    grid: LabelGrid
    seed: int
    palette: tuple


def generate_world(seed: int, dims=(64, 64, 16), recipe=("ground-plane", "boxes"), voxel_size: float = 0.2,
                   boxes=None, n_boxes: int = 8, n_blobs: int = 12, palette=DEFAULT_PALETTE) -> SyntheticWorld:
    """Build a deterministic world.

    ``boxes`` overrides the random boxes with explicit ``(lo, hi, label)``
    voxel ranges (``hi`` exclusive).  Random boxes stand on the ground layer;
    blobs are balls that only fill empty voxels.
    """
    dims = tuple(int(d) for d in dims)
    if np.prod(dims) > MAX_WORLD_VOXELS:
        raise ValidationError(f"world dims {dims} exceed {MAX_WORLD_VOXELS} voxels")
    unknown = set(recipe) - set(RECIPES)
    if unknown:
        raise ValidationError(f"unknown recipe parts {sorted(unknown)}; choose from {RECIPES}")
    rng = np.random.default_rng(seed)
    spec = GridSpec(dims, voxel_size, (0.0, 0.0, 0.0))
    lab = np.zeros(dims, dtype=np.uint8)
    nx, ny, nz = dims
    ground = "ground-plane" in recipe
    if ground:
        lab[:, :, 0] = CLASS_IDS["road"]
    if boxes is not None:
        for lo, hi, label in boxes:
            lab[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]] = label
    elif "boxes" in recipe:
        z0 = 1 if ground else 0
        for _ in range(n_boxes):
            size = rng.integers([2, 2, 2], [max(3, nx // 6), max(3, ny // 6), max(3, nz - z0)], endpoint=True)
            lo = rng.integers([0, 0], [nx - size[0], ny - size[1]], endpoint=True)
            lab[lo[0]:lo[0] + size[0], lo[1]:lo[1] + size[1], z0:z0 + size[2]] = rng.choice(palette)
    if "random-blobs" in recipe:
        centers = np.stack(np.meshgrid(*[np.arange(n) + 0.5 for n in dims], indexing="ij"), axis=-1)
        for _ in range(n_blobs):
            c = rng.uniform([0, 0, 1], dims)
            r = rng.uniform(1.0, 3.0)
            inside = (np.sum((centers - c) ** 2, axis=-1) <= r * r) & (lab == EMPTY)
            lab[inside] = rng.choice(BLOB_PALETTE)
    return SyntheticWorld(LabelGrid(spec, lab), seed, tuple(palette))


@dataclass(eq=False)
class Rig:
    """Frame volume (vehicle frame) and the camera mounted on the vehicle."""

    spec: GridSpec
    extrinsic: RigidPose  # vehicle -> camera
    K: CameraIntrinsics

    @classmethod
    def desk(cls, dims=(32, 32, 16), voxel_size: float = 0.2, image_size=(96, 64), fov_deg: float = 70.0,
             camera_height: float = 0.6, pitch_deg: float = 12.0, height_below: float = 1.0) -> Rig:
        """A small forward-looking rig; the volume starts at the vehicle origin and is centered in y."""
        nx, ny, nz = dims
        spec = GridSpec(dims, voxel_size, (0.0, -ny * voxel_size / 2, -height_below))
        w, h = image_size
        f = 0.5 * w / np.tan(np.radians(fov_deg) / 2)
        K = CameraIntrinsics(f, f, (w - 1) / 2, (h - 1) / 2, w, h)
        return cls(spec, camera_extrinsic(pitch_deg, (0.0, 0.0, camera_height)), K)


def camera_extrinsic(pitch_deg: float, position) -> RigidPose:
    """Vehicle -> camera for a camera at ``position`` looking forward, tilted down by ``pitch_deg``."""
    th = np.radians(pitch_deg)
    forward = np.array([np.cos(th), 0.0, -np.sin(th)])
    right = np.array([0.0, -1.0, 0.0])
    down = np.cross(forward, right)
    R = np.stack([right, down, forward])
    return RigidPose(R, -R @ np.asarray(position, dtype=np.float64))


@dataclass(eq=False)
class Trajectory:
    poses: list  # world -> vehicle per frame
    specs: list  # frame volume per frame (vehicle frame)
    max_translation: float = np.inf
    max_rotation: float = np.inf

    def __post_init__(self):
        if len(self.poses) != len(self.specs):
            raise ValidationError("one grid spec per pose is required")
        for a, b in zip(self.poses, self.poses[1:]):
            rel = b.compose(a.inverse())
            ang = np.arccos(np.clip((np.trace(rel.rotation) - 1) / 2, -1, 1))
            if np.linalg.norm(rel.translation) > self.max_translation + 1e-12 or ang > self.max_rotation + 1e-12:
                raise ValidationError("consecutive poses exceed the configured motion bound")


def straight_trajectory(n_frames: int, spec: GridSpec, start_voxels=(2, 16, 5), step_voxels=(2, 0, 0),
                        yaw_quarter_turns: int = 0, max_step: float = 1.0) -> Trajectory:
    """Vehicle moving by whole voxels along world axes.

    ``start_voxels`` is the vehicle origin in world voxel units.  A yaw of whole
    quarter turns keeps the frame volume on the world lattice.
    """
    s = spec.voxel_size
    R = rotation_about_axis((0, 0, 1), np.pi / 2 * yaw_quarter_turns).round(15)
    R = np.where(np.abs(R) < 1e-12, 0.0, R)
    poses = []
    for k in range(n_frames):
        pos = (np.asarray(start_voxels, dtype=np.float64) + k * np.asarray(step_voxels, dtype=np.float64)) * s
        poses.append(RigidPose(R.T, -R.T @ pos))
    return Trajectory(poses, [spec] * n_frames, max_translation=max_step)


@dataclass(eq=False)
class RaycastResult:
    depth: DepthMap  # camera depth of the first surface hit
    labels: np.ndarray  # (H, W) class id of the hit voxel, EMPTY where nothing is hit
    hit_index: np.ndarray  # (H, W, 3) voxel index in the cast grid, -1 where nothing is hit
    distance: np.ndarray  # (H, W) ray length to the hit, NaN where nothing is hit


def raycast_depth_semantics(world, pose: RigidPose, K: CameraIntrinsics) -> RaycastResult:
    """Cast one ray per pixel center and report the first non-empty voxel.

    ``world`` is a :class:`SyntheticWorld` or a :class:`LabelGrid`; ``pose``
    maps its frame into the camera.  Depth is the camera depth of the point
    where the ray enters the hit voxel.
    """
    grid = world.grid if isinstance(world, SyntheticWorld) else world
    spec = grid.spec
    pix = K.pixel_grid().reshape(-1, 2)
    origins, dirs = ray_through_pixel(pix, pose, K)
    t, lab, hit = _kernels.raycast_labels(
        np.ascontiguousarray(origins), np.ascontiguousarray(dirs), grid.labels, spec.origin.copy(), spec.voxel_size,
        np.array(spec.dims, dtype=np.int64), EMPTY, UNKNOWN,
    )
    valid = (lab >= 0) & (t > 0)
    depth = np.where(valid, t / ray_depth_scale(pix, K), 0.0)
    nx, ny, nz = spec.dims
    idx = np.stack([hit // (ny * nz), (hit // nz) % ny, hit % nz], axis=-1)
    idx = np.where(valid[:, None], idx, -1)
    H, W = K.height, K.width
    return RaycastResult(
        DepthMap(depth.reshape(H, W), valid.reshape(H, W)),
        np.where(valid, lab, EMPTY).reshape(H, W).astype(np.uint8),
        idx.reshape(H, W, 3),
        np.where(valid, t, np.nan).reshape(H, W),
    )


def slice_frame_gt(world, pose: RigidPose, spec: GridSpec):
    """Resample the world into a frame volume (nearest); ``pose`` is world -> frame.

    Returns ``(labels, known)``; voxels whose center maps outside the world are
    UNKNOWN and not known.
    """
    grid = world.grid if isinstance(world, SyntheticWorld) else world
    src = pose.inverse().apply(spec.centers())
    idx, inside = points_to_indices(src, grid.spec)
    idx = np.where(inside[..., None], idx, 0)
    lab = np.where(inside, grid.labels[idx[..., 0], idx[..., 1], idx[..., 2]], UNKNOWN)
    return LabelGrid(spec, lab), MaskGrid(spec, inside)


def _splitmix64(x):
    with np.errstate(over="ignore"):
        z = x + np.uint64(0x9E3779B97F4A7C15)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))


def counter_uniform(seed: int, index, stream: int) -> np.ndarray:
    """Uniform ``[0, 1)`` draws keyed by ``(seed, index, stream)``; order-independent."""
    key = _splitmix64(np.uint64(seed & 0xFFFFFFFFFFFFFFFF))
    with np.errstate(over="ignore"):
        ctr = np.asarray(index, dtype=np.uint64) * np.uint64(4) + np.uint64(stream)
    h = _splitmix64(key ^ _splitmix64(ctr))
    return (h >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


def degrade_depth(dense: DepthMap, keep_fraction: float, noise_stddev: float, seed: int) -> DepthMap:
    """Subsample and corrupt a depth map, like a sparse noisy LiDAR rendering.

    Pixel ``i`` is kept when its hashed uniform draw is below ``keep_fraction``;
    kept depths get additive Gaussian noise (meters).  Noise pushing a depth to
    zero or below invalidates the pixel.
    """
    if not 0 < keep_fraction <= 1:
        raise ValidationError(f"keep_fraction must be in (0, 1], got {keep_fraction}")
    if noise_stddev < 0:
        raise ValidationError("noise_stddev must be nonnegative")
    index = np.arange(dense.values.size, dtype=np.uint64).reshape(dense.values.shape)
    keep = dense.valid & (counter_uniform(seed, index, 0) < keep_fraction)
    values = dense.values
    if noise_stddev > 0:
        u1 = 1.0 - counter_uniform(seed, index, 1)
        u2 = counter_uniform(seed, index, 2)
        values = values + noise_stddev * np.sqrt(-2.0 * np.log(u1)) * np.cos(2 * np.pi * u2)
    keep &= values > 0
    return DepthMap(np.where(keep, values, 0.0), keep)


@dataclass(eq=False)
class Frame:
    vehicle_pose: RigidPose  # world -> vehicle
    camera_pose: RigidPose  # world -> camera
    raycast: RaycastResult
    gt: LabelGrid
    known: MaskGrid
    visible: MaskGrid


@dataclass(eq=False)
class SyntheticSequence:
    world: SyntheticWorld
    rig: Rig
    trajectory: Trajectory
    frames: list = field(default_factory=list)


def visible_surface(raycast: RaycastResult, world_spec: GridSpec, vehicle_pose: RigidPose, spec: GridSpec) -> MaskGrid:
    """Frame voxels that are the first hit of at least one pixel ray."""
    hits = raycast.hit_index.reshape(-1, 3)
    hits = hits[hits[:, 0] >= 0]
    mask = np.zeros(spec.dims, dtype=bool)
    if hits.size:
        pts = vehicle_pose.apply(world_spec.voxel_center(hits))
        idx, inside = points_to_indices(pts, spec)
        idx = idx[inside]
        mask[idx[:, 0], idx[:, 1], idx[:, 2]] = True
    return MaskGrid(spec, mask)


def make_sequence(world: SyntheticWorld, rig: Rig, trajectory: Trajectory) -> SyntheticSequence:
    seq = SyntheticSequence(world, rig, trajectory)
    for pose, spec in zip(trajectory.poses, trajectory.specs):
        cam = rig.extrinsic.compose(pose)
        rc = raycast_depth_semantics(world, cam, rig.K)
        gt, known = slice_frame_gt(world, pose, spec)
        seq.frames.append(Frame(pose, cam, rc, gt, known, visible_surface(rc, world.grid.spec, pose, spec)))
    return seq
