"""Readers and writers for the SemanticKITTI / KITTI-odometry file formats.

Binary readers take ``bytes`` and writers return ``bytes``; the ``load_*``
helpers wrap them for paths.  Formats:

* LiDAR scan ``.bin``: little-endian float32 quadruples ``(x, y, z, intensity)``.
* Voxel occupancy ``.bin`` / ``.invalid``: one bit per voxel, MSB first, voxels
  in x-major order (``x*(ny*nz) + y*nz + z``).
* Voxel ``.label``: little-endian uint16 raw ids in the same order, remapped to
  training ids through a YAML table (``learning_map`` / ``learning_map_inv``).
* ``calib.txt``: ``KEY: 12 floats`` lines (``P2`` and ``Tr`` are used).
* ``poses.txt``: 12 floats per line, row-major 3x4 camera->world.
* PFM: ``Pf`` (1 channel) or ``PF`` (3 channels) float32 images, rows stored
  bottom-up, negative scale meaning little-endian.  A feature stack is several
  ``Pf`` images of the same size concatenated in one file, one per channel.
"""

from __future__ import annotations

import importlib.resources
import os
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .errors import ParseError, SizeMismatch, TruncatedFile, UnknownRawLabel
from .geometry import CameraIntrinsics, RigidPose
from .voxel import NUM_CLASSES, UNKNOWN, GridSpec, LabelGrid, MaskGrid

REMAP_ENV = "VOXFUSE_REMAP"
KITTI_IMAGE_SIZE = (1241, 376)


def _as_spec(spec_or_dims) -> GridSpec:
    if isinstance(spec_or_dims, GridSpec):
        return spec_or_dims
    dims = tuple(int(d) for d in spec_or_dims)
    kitti = GridSpec.semantic_kitti()
    if dims == kitti.dims:
        return kitti
    return GridSpec(dims, kitti.voxel_size, (0.0, 0.0, 0.0))


# -- LiDAR ------------------------------------------------------------------

def read_lidar_bin(data: bytes) -> np.ndarray:
    """``(N, 4)`` float32 array of ``x, y, z, intensity``."""
    if len(data) % 16:
        raise TruncatedFile(f"LiDAR scan length {len(data)} is not a multiple of 16", offset=len(data) - len(data) % 16)
    return np.frombuffer(data, dtype="<f4").reshape(-1, 4).astype(np.float32)


def write_lidar_bin(points) -> bytes:
    pts = np.asarray(points, dtype="<f4")
    if pts.ndim != 2 or pts.shape[1] != 4:
        raise ValueError(f"expected (N, 4) points, got {pts.shape}")
    return pts.tobytes()


# -- packed voxel masks -------------------------------------------------------

def read_voxel_bin(data: bytes, spec=(256, 256, 32)) -> MaskGrid:
    spec = _as_spec(spec)
    n = spec.num_voxels
    expected = (n + 7) // 8
    if len(data) != expected:
        raise SizeMismatch(f"packed voxel file has {len(data)} bytes, dims {spec.dims} need {expected}",
                           offset=min(len(data), expected))
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8), bitorder="big")[:n]
    return MaskGrid(spec, bits.reshape(spec.dims).astype(bool))


def write_voxel_bin(mask: MaskGrid) -> bytes:
    return np.packbits(mask.bits.reshape(-1), bitorder="big").tobytes()


# -- labels -------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RemapTable:
    """Raw-id <-> training-id lookup tables."""

    lut: np.ndarray  # (65536,) uint8, UNKNOWN where unmapped
    mapped: np.ndarray  # (65536,) bool
    inverse: np.ndarray  # (256,) uint16 raw id written for each training id
    unknown_raw: int = 65535

    @classmethod
    def from_mapping(cls, learning_map: dict, learning_map_inv: dict, unknown_raw: int = 65535) -> RemapTable:
        lut = np.full(65536, UNKNOWN, dtype=np.uint8)
        mapped = np.zeros(65536, dtype=bool)
        for raw, train in learning_map.items():
            raw, train = int(raw), int(train)
            if not (0 <= raw < 65536 and 0 <= train < NUM_CLASSES):
                raise ParseError(f"remap entry {raw}: {train} out of range")
            lut[raw] = train
            mapped[raw] = True
        inverse = np.full(256, unknown_raw, dtype=np.uint16)
        for train, raw in learning_map_inv.items():
            inverse[int(train)] = int(raw)
        mapped[unknown_raw] = True
        lut[unknown_raw] = UNKNOWN
        return cls(lut, mapped, inverse, int(unknown_raw))

    @classmethod
    def load(cls, path=None) -> RemapTable:
        """Table from ``path``, else ``$VOXFUSE_REMAP``, else the bundled SemanticKITTI table."""
        path = path or os.environ.get(REMAP_ENV)
        if path:
            text = Path(path).read_text()
        else:
            text = importlib.resources.files("voxfuse").joinpath("data/semantic-kitti.yaml").read_text()
        try:
            cfg = yaml.safe_load(text)
            return cls.from_mapping(cfg["learning_map"], cfg["learning_map_inv"], cfg.get("unknown_raw", 65535))
        except (yaml.YAMLError, KeyError, TypeError, AttributeError) as exc:
            raise ParseError(f"bad remap table {path or '<bundled>'}: {exc}") from exc


def read_label(data: bytes, spec=(256, 256, 32), remap: RemapTable | None = None, strict: bool = False) -> LabelGrid:
    """Decode a ``.label`` file into training ids.

    Raw ids missing from the table become UNKNOWN, or raise
    :class:`UnknownRawLabel` with ``strict``.
    """
    spec = _as_spec(spec)
    remap = remap or RemapTable.load()
    expected = 2 * spec.num_voxels
    if len(data) != expected:
        raise SizeMismatch(f"label file has {len(data)} bytes, dims {spec.dims} need {expected}",
                           offset=min(len(data), expected))
    raw = np.frombuffer(data, dtype="<u2")
    if strict:
        bad = np.flatnonzero(~remap.mapped[raw])
        if bad.size:
            raise UnknownRawLabel(f"raw label {int(raw[bad[0]])} is not in the remap table", offset=int(2 * bad[0]))
    return LabelGrid(spec, remap.lut[raw].reshape(spec.dims))


def write_label(grid: LabelGrid, remap: RemapTable | None = None) -> bytes:
    remap = remap or RemapTable.load()
    return remap.inverse[grid.labels.reshape(-1)].astype("<u2").tobytes()


# -- calibration and poses ----------------------------------------------------

_FLOAT = re.compile(r"^[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?$|^[+-]?(?:inf|nan)$", re.IGNORECASE)


def _parse_floats(tokens, line_no, first_field=1):
    out = []
    for i, tok in enumerate(tokens):
        if not _FLOAT.match(tok):
            raise ParseError(f"not a number: {tok!r}", line=line_no, field=first_field + i)
        out.append(float(tok))
    return out


def read_calib_matrices(text: str) -> dict:
    """Every ``KEY: 12 floats`` line as a 3x4 float64 array, keyed by name."""
    mats = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        key, sep, rest = line.partition(":")
        if not sep:
            raise ParseError("expected 'KEY: values'", line=line_no)
        vals = _parse_floats(rest.split(), line_no)
        if len(vals) != 12:
            raise ParseError(f"{key.strip()} has {len(vals)} values, expected 12", line=line_no)
        mats[key.strip()] = np.array(vals).reshape(3, 4)
    return mats


def _fmt(x) -> str:
    return repr(float(x))


def write_calib_matrices(mats: dict) -> str:
    return "".join(f"{k}: " + " ".join(_fmt(v) for v in np.asarray(m).reshape(-1)) + "\n" for k, m in mats.items())


@dataclass(frozen=True, eq=False)
class Calib:
    K: CameraIntrinsics
    lidar_to_cam: RigidPose  # Tr: LiDAR -> rectified reference camera
    cam_offset: np.ndarray  # translation from the reference camera to camera 2, from P2's last column
    P2: np.ndarray

    @property
    def lidar_to_cam2(self) -> RigidPose:
        return RigidPose.from_translation(self.cam_offset).compose(self.lidar_to_cam)


def read_calib(text: str, image_size=KITTI_IMAGE_SIZE) -> Calib:
    mats = read_calib_matrices(text)
    for key in ("P2", "Tr"):
        if key not in mats:
            raise ParseError(f"calibration is missing {key}")
    P2 = mats["P2"]
    fx, fy, cx, cy = P2[0, 0], P2[1, 1], P2[0, 2], P2[1, 2]
    try:
        K = CameraIntrinsics(fx, fy, cx, cy, int(image_size[0]), int(image_size[1]))
    except ValueError as exc:
        raise ParseError(f"bad P2: {exc}") from exc
    # P2 = K [I | t2]; recover t2 from the fourth column
    tz = P2[2, 3]
    offset = np.array([(P2[0, 3] - cx * tz) / fx, (P2[1, 3] - cy * tz) / fy, tz])
    Tr = RigidPose.from_matrix(mats["Tr"], orthonormalize=True)
    return Calib(K, Tr, offset, P2)


def write_calib(K: CameraIntrinsics, lidar_to_cam: RigidPose, cam_offset=(0.0, 0.0, 0.0)) -> str:
    t = np.asarray(cam_offset, dtype=np.float64)
    P = np.hstack([K.matrix, (K.matrix @ t)[:, None]])
    return write_calib_matrices({"P2": P, "Tr": lidar_to_cam.matrix[:3]})


def read_pose_matrices(text: str) -> np.ndarray:
    """Raw ``(N, 3, 4)`` camera->world matrices."""
    rows = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        vals = _parse_floats(line.split(), line_no)
        if len(vals) != 12:
            raise ParseError(f"pose has {len(vals)} values, expected 12", line=line_no)
        rows.append(vals)
    return np.array(rows, dtype=np.float64).reshape(-1, 3, 4)


def write_pose_matrices(mats) -> str:
    return "".join(" ".join(_fmt(v) for v in m.reshape(-1)) + "\n" for m in np.asarray(mats, dtype=np.float64))


def read_poses(text: str) -> list:
    """World->camera poses (file stores camera->world; rotations re-orthonormalized)."""
    return [RigidPose.from_matrix(m, orthonormalize=True).inverse() for m in read_pose_matrices(text)]


def write_poses(poses) -> str:
    return write_pose_matrices([p.inverse().matrix[:3] for p in poses])


# -- PFM ----------------------------------------------------------------------

def _read_pfm_at(data: bytes, pos: int):
    fields = []
    while len(fields) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ParseError("truncated PFM header", offset=pos)
        fields.append((data[start:pos], start))
        if len(fields) == 4:
            pos += 1  # the single whitespace byte ending the header
    magic, at = fields[0]
    if magic not in (b"Pf", b"PF"):
        raise ParseError(f"bad PFM magic {magic!r}", offset=at)
    try:
        w, h = int(fields[1][0]), int(fields[2][0])
        scale = float(fields[3][0])
    except ValueError as exc:
        raise ParseError(f"bad PFM header: {exc}", offset=fields[1][1]) from exc
    if w < 1 or h < 1 or scale == 0:
        raise ParseError("PFM dims must be positive and scale nonzero", offset=fields[1][1])
    ch = 1 if magic == b"Pf" else 3
    n = w * h * ch * 4
    if len(data) - pos < n:
        raise TruncatedFile(f"PFM payload has {len(data) - pos} bytes, expected {n}", offset=len(data))
    dtype = "<f4" if scale < 0 else ">f4"
    img = np.frombuffer(data, dtype=dtype, count=w * h * ch, offset=pos).astype(np.float32)
    img = img.reshape(h, w, ch)[::-1]
    return np.ascontiguousarray(img[..., 0] if ch == 1 else img), pos + n


def read_pfm(data: bytes) -> np.ndarray:
    """Float32 image with row 0 at the top; ``(H, W)`` or ``(H, W, 3)``."""
    img, _ = _read_pfm_at(data, 0)
    return img


def read_pfm_stack(data: bytes) -> np.ndarray:
    """Concatenated single-channel PFMs as one ``(H, W, C)`` float32 array."""
    chans, pos = [], 0
    while pos < len(data):
        img, pos = _read_pfm_at(data, pos)
        if img.ndim != 2:
            raise ParseError("feature stacks hold single-channel (Pf) images only", offset=pos)
        if chans and img.shape != chans[0].shape:
            raise SizeMismatch(f"stack channel {len(chans)} is {img.shape}, expected {chans[0].shape}", offset=pos)
        chans.append(img)
    if not chans:
        raise ParseError("empty PFM stack", offset=0)
    return np.stack(chans, axis=-1)


def write_pfm(image, little_endian: bool = True) -> bytes:
    img = np.asarray(image, dtype=np.float32)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[..., 0]
    if img.ndim == 2:
        magic = b"Pf"
    elif img.ndim == 3 and img.shape[2] == 3:
        magic = b"PF"
    else:
        raise ValueError(f"PFM holds 1 or 3 channels, got shape {img.shape}")
    h, w = img.shape[:2]
    scale = -1.0 if little_endian else 1.0
    header = magic + f"\n{w} {h}\n{scale:.4f}\n".encode("ascii")
    return header + np.ascontiguousarray(img[::-1]).astype("<f4" if little_endian else ">f4").tobytes()


def write_pfm_stack(image, little_endian: bool = True) -> bytes:
    img = np.asarray(image, dtype=np.float32)
    if img.ndim == 2:
        img = img[..., None]
    return b"".join(write_pfm(img[..., c], little_endian) for c in range(img.shape[2]))


# -- dataset frames -----------------------------------------------------------

def load_bytes(path) -> bytes:
    return Path(path).read_bytes()


@dataclass(eq=False)
class FrameBundle:
    rgb_path: Path | None
    points: np.ndarray | None
    calib: Calib
    pose: RigidPose  # world -> reference camera
    gt: LabelGrid | None = None
    invalid: MaskGrid | None = None
    occupancy: MaskGrid | None = None


def load_frame(sequence_dir, frame: int, spec: GridSpec | None = None, remap: RemapTable | None = None,
               image_size=KITTI_IMAGE_SIZE) -> FrameBundle:
    """Load one frame of a ``sequences/XX`` directory; voxel files are optional."""
    seq = Path(sequence_dir)
    spec = spec or GridSpec.semantic_kitti()
    name = f"{frame:06d}"
    calib = read_calib((seq / "calib.txt").read_text(), image_size)
    poses = read_poses((seq / "poses.txt").read_text())
    if frame >= len(poses):
        raise ParseError(f"poses.txt has {len(poses)} poses, frame {frame} requested")
    scan = seq / "velodyne" / f"{name}.bin"
    rgb = seq / "image_2" / f"{name}.png"
    vox = seq / "voxels"
    bundle = FrameBundle(
        rgb if rgb.exists() else None,
        read_lidar_bin(scan.read_bytes()) if scan.exists() else None,
        calib,
        poses[frame],
    )
    if (vox / f"{name}.label").exists():
        bundle.gt = read_label((vox / f"{name}.label").read_bytes(), spec, remap)
    if (vox / f"{name}.invalid").exists():
        bundle.invalid = read_voxel_bin((vox / f"{name}.invalid").read_bytes(), spec)
    if (vox / f"{name}.bin").exists():
        bundle.occupancy = read_voxel_bin((vox / f"{name}.bin").read_bytes(), spec)
    return bundle

