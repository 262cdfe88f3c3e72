"""Dense scene volumes, world<->grid indexing, FoV and overlap masks.

A grid is axis-aligned in its own frame.  Voxel ``(i, j, k)`` covers the
half-open cube ``[origin + idx*s, origin + (idx+1)*s)``.  Arrays are stored
``(nx, ny, nz[, C])`` in C order, i.e. flat index ``x*(ny*nz) + y*nz + z``,
the SemanticKITTI on-disk order.

Poses handed to this module map points of the grid's frame into the camera
(or other grid) frame.  For SemanticKITTI the grid lives in the LiDAR frame
and that pose is the LiDAR->camera extrinsic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SpecMismatch, ValidationError
from .geometry import CameraIntrinsics, RigidPose, project_camera

NUM_CLASSES = 20  # empty + 19 semantic classes
EMPTY = 0
UNKNOWN = 255

# Training ids 1..19, in benchmark table order.
CLASS_NAMES = (
    "car",
    "bicycle",
    "motorcycle",
    "truck",
    "other-vehicle",
    "person",
    "bicyclist",
    "motorcyclist",
    "road",
    "parking",
    "sidewalk",
    "other-ground",
    "building",
    "fence",
    "vegetation",
    "trunk",
    "terrain",
    "pole",
    "traffic-sign",
)
CLASS_IDS = {name: i + 1 for i, name in enumerate(CLASS_NAMES)}


@dataclass(frozen=True, eq=False)
class GridSpec:
    dims: tuple
    voxel_size: float
    origin: np.ndarray

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 3 or min(dims) < 1:
            raise ValidationError(f"dims must be three positive ints, got {self.dims}")
        if not self.voxel_size > 0:
            raise ValidationError(f"voxel_size must be positive, got {self.voxel_size}")
        origin = np.array(self.origin, dtype=np.float64).reshape(3)
        origin.setflags(write=False)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "voxel_size", float(self.voxel_size))
        object.__setattr__(self, "origin", origin)

    @classmethod
    def semantic_kitti(cls) -> GridSpec:
        """256 x 256 x 32 at 0.2 m, LiDAR frame: x in [0, 51.2), y in [-25.6, 25.6), z in [-2, 4.4)."""
        return cls((256, 256, 32), 0.2, (0.0, -25.6, -2.0))

    def __eq__(self, other):
        if not isinstance(other, GridSpec):
            return NotImplemented
        return (
            self.dims == other.dims
            and self.voxel_size == other.voxel_size
            and bool(np.array_equal(self.origin, other.origin))
        )

    def __hash__(self):
        return hash((self.dims, self.voxel_size, tuple(self.origin)))

    def __repr__(self):
        return f"GridSpec(dims={self.dims}, voxel_size={self.voxel_size}, origin={self.origin.tolist()})"

    @property
    def num_voxels(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    @property
    def extent(self) -> np.ndarray:
        return np.array(self.dims, dtype=np.float64) * self.voxel_size

    @property
    def upper(self) -> np.ndarray:
        return self.origin + self.extent

    def voxel_center(self, idx) -> np.ndarray:
        return self.origin + (np.asarray(idx, dtype=np.float64) + 0.5) * self.voxel_size

    def centers(self) -> np.ndarray:
        """Centers of all voxels, shape ``(nx, ny, nz, 3)``."""
        axes = [self.origin[a] + (np.arange(n) + 0.5) * self.voxel_size for a, n in enumerate(self.dims)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def to_dict(self) -> dict:
        return {"dims": list(self.dims), "voxel_size": self.voxel_size, "origin": self.origin.tolist()}

    @classmethod
    def from_dict(cls, d) -> GridSpec:
        return cls(tuple(d["dims"]), d["voxel_size"], d["origin"])


def _check_shape(spec: GridSpec, arr: np.ndarray, trailing=0, name="grid"):
    if arr.shape[:3] != spec.dims or arr.ndim != 3 + trailing:
        raise SpecMismatch(f"{name} has shape {arr.shape}, spec dims are {spec.dims}")


@dataclass(eq=False)
class LabelGrid:
    spec: GridSpec
    labels: np.ndarray  # uint8, values in 0..19 or UNKNOWN

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.uint8)
        _check_shape(self.spec, self.labels, name="labels")
        bad = (self.labels >= NUM_CLASSES) & (self.labels != UNKNOWN)
        if bad.any():
            raise ValidationError(f"label grid holds ids outside 0..19 and UNKNOWN: {np.unique(self.labels[bad])}")

    @classmethod
    def empty(cls, spec: GridSpec, fill=EMPTY) -> LabelGrid:
        return cls(spec, np.full(spec.dims, fill, dtype=np.uint8))

    def known(self) -> MaskGrid:
        return MaskGrid(self.spec, self.labels != UNKNOWN)


@dataclass(eq=False)
class ProbGrid:
    spec: GridSpec
    probs: np.ndarray  # (nx, ny, nz, 20)

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        _check_shape(self.spec, self.probs, trailing=1, name="probs")
        if self.probs.shape[3] != NUM_CLASSES:
            raise ValidationError(f"expected {NUM_CLASSES} class channels, got {self.probs.shape[3]}")

    def validate(self, atol=1e-5):
        if np.any(self.probs < 0) or np.abs(self.probs.sum(axis=-1) - 1.0).max() > atol:
            raise ValidationError("probability vectors must be nonnegative and sum to one")
        return self

    @classmethod
    def one_hot(cls, labels: LabelGrid) -> ProbGrid:
        lab = np.where(labels.labels == UNKNOWN, EMPTY, labels.labels)
        return cls(labels.spec, np.eye(NUM_CLASSES)[lab])

    def argmax(self) -> LabelGrid:
        return LabelGrid(self.spec, np.argmax(self.probs, axis=-1).astype(np.uint8))


@dataclass(eq=False)
class FeatureGrid:
    spec: GridSpec
    features: np.ndarray  # (nx, ny, nz, C)

    def __post_init__(self):
        self.features = np.asarray(self.features)
        _check_shape(self.spec, self.features, trailing=1, name="features")

    @property
    def channels(self) -> int:
        return self.features.shape[3]


@dataclass(eq=False)
class MaskGrid:
    spec: GridSpec
    bits: np.ndarray  # bool (nx, ny, nz)

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=bool)
        _check_shape(self.spec, self.bits, name="mask")

    @classmethod
    def full(cls, spec: GridSpec, value=True) -> MaskGrid:
        return cls(spec, np.full(spec.dims, value, dtype=bool))

    def __and__(self, other: MaskGrid) -> MaskGrid:
        require_same_spec(self.spec, other.spec)
        return MaskGrid(self.spec, self.bits & other.bits)

    def __or__(self, other: MaskGrid) -> MaskGrid:
        require_same_spec(self.spec, other.spec)
        return MaskGrid(self.spec, self.bits | other.bits)

    def __invert__(self) -> MaskGrid:
        return MaskGrid(self.spec, ~self.bits)

    def count(self) -> int:
        return int(self.bits.sum())


def require_same_spec(a: GridSpec, b: GridSpec):
    if a != b:
        raise SpecMismatch(f"grid specs differ: {a} vs {b}")


def continuous_index(points, spec: GridSpec) -> np.ndarray:
    """Position in voxel units relative to the grid corner (no flooring)."""
    return (np.asarray(points, dtype=np.float64) - spec.origin) / spec.voxel_size


def points_to_indices(points, spec: GridSpec):
    """Vectorized :func:`world_to_index`: ``(indices, inside)`` for ``(..., 3)`` points.

    Indices of points outside the volume are undefined (masked by ``inside``).
    """
    idx = np.floor(continuous_index(points, spec))
    inside = np.all((idx >= 0) & (idx < np.array(spec.dims)), axis=-1)
    return idx.astype(np.int64), inside


def world_to_index(point, spec: GridSpec):
    """Index of the voxel containing ``point``, or ``None`` outside the volume."""
    idx, inside = points_to_indices(np.asarray(point, dtype=np.float64).reshape(3), spec)
    if not inside:
        return None
    return tuple(int(i) for i in idx)


def fov_mask(spec: GridSpec, pose: RigidPose, K: CameraIntrinsics) -> MaskGrid:
    """Voxels whose center lands inside the image with positive camera depth.

    ``pose`` maps the grid frame into the camera frame.
    """
    pc = pose.apply(spec.centers())
    pix, z = project_camera(pc, K)
    inside = (z > 0) & K.contains(np.where((z > 0)[..., None], pix, -1.0))
    return MaskGrid(spec, inside)


def source_positions(spec_curr: GridSpec, rel: RigidPose) -> np.ndarray:
    """Centers of the current grid mapped back into the previous frame.

    ``rel`` takes previous-frame points to current-frame points.
    """
    return rel.inverse().apply(spec_curr.centers())


def overlap_mask(spec_curr: GridSpec, rel: RigidPose, spec_prev: GridSpec) -> MaskGrid:
    """Current voxels whose center, mapped through ``rel^-1``, is inside the previous volume."""
    _, inside = points_to_indices(source_positions(spec_curr, rel), spec_prev)
    return MaskGrid(spec_curr, inside)
