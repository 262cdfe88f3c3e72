"""Gaussian-decay depth-prior projection of image features into a voxel volume.

Each pixel with a valid depth prior spreads its feature vector over the voxels
its viewing ray pierces.  A voxel with center ``c`` receives weight
``exp(-|c - P_hat|^2 / (2 sigma^2))``, where ``P_hat`` is the pixel lifted to
its prior depth; voxels farther than ``truncation_radius * sigma`` from
``P_hat`` receive nothing.

Two formulations produce the same grid: :func:`gdp_scatter` walks pixel rays
through the volume, :func:`gdp_gather` visits voxels and collects the pixels
whose rays cross them.  The gather is parallel over voxels and its result does
not depend on the thread count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from . import _kernels
from .depth_prior import DepthMap
from .errors import DimensionMismatch, ValidationError
from .geometry import CameraIntrinsics, RigidPose, back_project, ray_depth_scale, ray_through_pixel
from .voxel import FeatureGrid, GridSpec, MaskGrid

NORMALIZATIONS = ("none", "per-ray", "per-voxel")
ACCUMULATIONS = ("weighted-sum", "weighted-mean")


@dataclass(eq=False)
class FeatureImage:
    """``(height, width, C)`` per-pixel feature vectors."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim == 2:
            v = v[..., None]
        if v.ndim != 3:
            raise DimensionMismatch(f"feature image must be (H, W, C), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValidationError("feature image holds non-finite values")
        self.values = v

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return self.values.shape[2]


@dataclass(frozen=True)
class GdpConfig:
    """Projection settings.

    ``sigma`` is in voxel units (``sigma=1`` is one voxel edge).
    ``normalization='per-ray'`` rescales each pixel's weights to sum to one;
    ``'per-voxel'`` divides each voxel's accumulated weight (and, under
    weighted-sum, its features) by the number of rays that reached it.
    """

    sigma: float = 16.0
    truncation_radius: float = 3.0
    normalization: str = "none"
    accumulation: str = "weighted-mean"

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValidationError(f"sigma must be positive, got {self.sigma}")
        if not self.truncation_radius > 0:
            raise ValidationError(f"truncation_radius must be positive, got {self.truncation_radius}")
        if self.normalization not in NORMALIZATIONS:
            raise ValidationError(f"normalization must be one of {NORMALIZATIONS}, got {self.normalization!r}")
        if self.accumulation not in ACCUMULATIONS:
            raise ValidationError(f"accumulation must be one of {ACCUMULATIONS}, got {self.accumulation!r}")


@dataclass(eq=False)
class GdpResult:
    features: FeatureGrid
    touched: MaskGrid
    weights: np.ndarray  # (nx, ny, nz) accumulated weight
    ray_counts: np.ndarray  # (nx, ny, nz) number of contributing pixels


def gaussian_weight(P, P_hat, sigma_meters: float):
    """``exp(-|P - P_hat|^2 / (2 sigma^2))``; broadcasts over leading axes."""
    if not sigma_meters > 0:
        raise ValidationError(f"sigma must be positive, got {sigma_meters}")
    diff = np.asarray(P, dtype=np.float64) - np.asarray(P_hat, dtype=np.float64)
    return np.exp(-np.sum(diff * diff, axis=-1) / (2.0 * sigma_meters * sigma_meters))


def traverse_ray(origin, direction, spec: GridSpec, t_min: float = 0.0, t_max: float = math.inf):
    """Voxels pierced by the ray, in order, as ``[((i, j, k), t_entry, t_exit), ...]``.

    ``direction`` must be unit length so that parameters are distances in
    meters.  Only ``t`` in ``[t_min, t_max]`` is considered (by default the
    forward half-line).
    """
    o = np.asarray(origin, dtype=np.float64).reshape(3)
    d = np.asarray(direction, dtype=np.float64).reshape(3)
    if abs(np.linalg.norm(d) - 1.0) > 1e-9:
        raise ValidationError("direction must be a unit vector")
    dims = np.array(spec.dims, dtype=np.int64)
    cap = int(dims.sum()) + 3
    idx = np.empty((cap, 3), np.int64)
    tt = np.empty((cap, 2))
    n = _kernels.dda(o, d, spec.origin.copy(), spec.voxel_size, dims, float(t_min), float(t_max), idx, tt)
    return [((int(idx[m, 0]), int(idx[m, 1]), int(idx[m, 2])), float(tt[m, 0]), float(tt[m, 1])) for m in range(n)]


def _set_threads(threads):
    if threads is None:
        return numba.get_num_threads()
    n = max(1, min(int(threads), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(n)
    return n


class _Rays:
    """Per-pixel quantities shared by scatter and gather, flattened row-major."""

    def __init__(self, feat, depth_prior, pose, K, spec, cfg):
        if feat.height != depth_prior.height or feat.width != depth_prior.width:
            raise DimensionMismatch(
                f"feature image {feat.width}x{feat.height} vs depth prior {depth_prior.width}x{depth_prior.height}"
            )
        if (K.width, K.height) != (feat.width, feat.height):
            raise DimensionMismatch(f"camera is {K.width}x{K.height}, image is {feat.width}x{feat.height}")
        pix = K.pixel_grid().reshape(-1, 2)
        self.valid = depth_prior.valid.reshape(-1).copy()
        depth = np.where(self.valid, depth_prior.values.reshape(-1), 1.0)
        self.phat = back_project(pix, depth, pose, K)
        origin, dirs = ray_through_pixel(pix, pose, K)
        self.origin = pose.center.copy()
        self.dirs = np.ascontiguousarray(dirs)
        self.t_hat = depth * ray_depth_scale(pix, K)
        self.feats = np.ascontiguousarray(feat.values.reshape(-1, feat.channels))
        self.lo = spec.origin.copy()
        self.s = spec.voxel_size
        self.dims = np.array(spec.dims, dtype=np.int64)
        self.sigma = cfg.sigma * spec.voxel_size
        self.radius = cfg.truncation_radius * self.sigma if math.isfinite(cfg.truncation_radius) else math.inf
        if cfg.normalization == "per-ray":
            self.ray_norm = _kernels.ray_weight_sums(
                self.origin, self.dirs, self.phat, self.t_hat, self.valid, self.lo, self.s, self.dims,
                self.sigma, self.radius,
            )
        else:
            self.ray_norm = np.zeros(self.valid.size)


def _finish(acc, wsum, nrays, spec, cfg) -> GdpResult:
    C = acc.shape[1]
    if cfg.accumulation == "weighted-mean":
        ok = wsum > 1e-12
        acc = np.where(ok[:, None], acc / np.where(ok, wsum, 1.0)[:, None], 0.0)
    if cfg.normalization == "per-voxel":
        hit = nrays > 0
        wsum = np.where(hit, wsum / np.maximum(nrays, 1), 0.0)
        if cfg.accumulation == "weighted-sum":
            acc = np.where(hit[:, None], acc / np.maximum(nrays, 1)[:, None], 0.0)
    shape = spec.dims
    return GdpResult(
        FeatureGrid(spec, acc.reshape(*shape, C)),
        MaskGrid(spec, (nrays > 0).reshape(shape)),
        wsum.reshape(shape),
        nrays.reshape(shape),
    )


def gdp_scatter(feat: FeatureImage, depth_prior: DepthMap, pose: RigidPose, K: CameraIntrinsics, spec: GridSpec,
                cfg: GdpConfig = GdpConfig(), strict: bool = True, threads=None) -> GdpResult:
    """Splat every valid pixel along its ray.

    ``pose`` maps the grid frame into the camera frame.  In ``strict`` mode
    pixels are processed in row-major order, making the output bit-exact
    reproducible; otherwise pixel chunks accumulate in parallel and partial
    sums are merged (per-thread buffers, one grid each).
    """
    r = _Rays(feat, depth_prior, pose, K, spec, cfg)
    args = (r.origin, r.dirs, r.phat, r.t_hat, r.valid, r.feats, r.ray_norm, r.lo, r.s, r.dims, r.sigma, r.radius)
    n = _set_threads(threads)
    if strict or n == 1:
        acc, wsum, nrays = _kernels.scatter_strict(*args)
    else:
        acc, wsum, nrays = _kernels.scatter_fast(*args, n)
    return _finish(acc, wsum, nrays, spec, cfg)


def gdp_gather(feat: FeatureImage, depth_prior: DepthMap, pose: RigidPose, K: CameraIntrinsics, spec: GridSpec,
               cfg: GdpConfig = GdpConfig(), strict: bool = True, threads=None) -> GdpResult:
    """Voxel-parallel equivalent of :func:`gdp_scatter`.

    Each voxel projects its eight corners to find the candidate pixels, then
    keeps those whose ray actually crosses the voxel cube and whose ``P_hat``
    is within the truncation radius of the voxel center.  Pixels are visited
    in row-major order, so the result matches the strict scatter up to
    rounding.  ``strict`` switches on compensated summation.
    """
    r = _Rays(feat, depth_prior, pose, K, spec, cfg)
    _set_threads(threads)
    acc, wsum, nrays = _kernels.gather(
        r.origin, r.dirs, r.phat, r.valid, r.feats, r.ray_norm,
        np.ascontiguousarray(pose.rotation), pose.translation.copy(), K.fx, K.fy, K.cx, K.cy, K.width, K.height,
        r.lo, r.s, r.dims, r.sigma, r.radius, bool(strict),
    )
    return _finish(acc, wsum, nrays, spec, cfg)
