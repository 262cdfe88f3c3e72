"""Metric depth prior: sparse LiDAR rendering and affine scaling of relative depth."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateFit, DimensionMismatch, InsufficientSamples, ValidationError
from .geometry import CameraIntrinsics, RigidPose, project_camera

# Consistency constant turning the median absolute deviation into a
# Gaussian-equivalent standard deviation.
_MAD_SCALE = 1.4826


@dataclass(eq=False)
class DepthMap:
    """Per-pixel camera depth in meters, indexed ``[row, col]``."""

    values: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.values.ndim != 2 or self.values.shape != self.valid.shape:
            raise DimensionMismatch(f"depth {self.values.shape} and validity {self.valid.shape} must be equal 2-D shapes")
        self.valid = self.valid & np.isfinite(self.values) & (self.values > 0)

    @classmethod
    def from_array(cls, values) -> DepthMap:
        """Treat non-finite and non-positive entries as invalid (the PFM convention)."""
        values = np.asarray(values, dtype=np.float64)
        valid = np.isfinite(values) & (values > 0)
        return cls(np.where(valid, values, 0.0), valid)

    @classmethod
    def invalid(cls, height: int, width: int) -> DepthMap:
        return cls(np.zeros((height, width)), np.zeros((height, width), dtype=bool))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def filled(self, fill=0.0) -> np.ndarray:
        return np.where(self.valid, self.values, fill)


@dataclass(eq=False)
class RelativeDepthMap:
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DimensionMismatch(f"relative depth must be 2-D, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValidationError("relative depth must be finite")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class FitConfig:
    """Robust affine fit settings.

    ``space='inverse'`` fits ``1/d = a*r + b``, useful for relative depth given
    as (affine-invariant) inverse depth.
    """

    trim: bool = True
    k: float = 3.0
    rounds: int = 3
    space: str = "depth"

    def __post_init__(self):
        if self.space not in ("depth", "inverse"):
            raise ValidationError(f"space must be 'depth' or 'inverse', got {self.space!r}")
        if self.k <= 0 or self.rounds < 0:
            raise ValidationError("k must be positive and rounds nonnegative")


@dataclass(frozen=True)
class ScaleFit:
    a: float
    b: float
    inlier_count: int
    rms_residual: float
    space: str = "depth"

    def evaluate(self, r) -> np.ndarray:
        y = self.a * np.asarray(r, dtype=np.float64) + self.b
        if self.space == "depth":
            return y
        with np.errstate(divide="ignore"):
            return np.where(y > 0, 1.0 / y, np.inf)


def render_sparse_depth(points, lidar_to_cam: RigidPose, K: CameraIntrinsics) -> DepthMap:
    """Z-buffer LiDAR points into a sparse depth image (nearest pixel, nearest surface wins).

    ``points`` is ``(N, 3)`` or ``(N, 4)`` (intensity ignored), in the sensor frame.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] not in (3, 4):
        raise DimensionMismatch(f"expected an (N, 3) or (N, 4) point array, got {pts.shape}")
    depth = np.full((K.height, K.width), np.inf)
    pc = lidar_to_cam.apply(pts[:, :3])
    front = pc[:, 2] > 0
    pix, z = project_camera(pc[front], K)
    keep = K.contains(pix)
    pix, z = pix[keep], z[keep]
    cols = np.floor(pix[:, 0] + 0.5).astype(np.int64)
    rows = np.floor(pix[:, 1] + 0.5).astype(np.int64)
    np.minimum.at(depth, (rows, cols), z)
    valid = np.isfinite(depth)
    return DepthMap(np.where(valid, depth, 0.0), valid)


def _lstsq_affine(r, d):
    A = np.stack([r, np.ones_like(r)], axis=1)
    (a, b), *_ = np.linalg.lstsq(A, d, rcond=None)
    return float(a), float(b)


def fit_scale(rel: RelativeDepthMap, sparse: DepthMap, cfg: FitConfig = FitConfig()) -> ScaleFit:
    """Least-squares ``d ~ a*r + b`` over the valid sparse pixels.

    With ``cfg.trim`` the fit is repeated ``cfg.rounds`` times, each round
    dropping samples whose residual deviates from the median residual by more
    than ``cfg.k`` robust standard deviations (1.4826 * MAD).
    """
    if rel.values.shape != sparse.values.shape:
        raise DimensionMismatch(f"relative depth {rel.values.shape} vs sparse depth {sparse.values.shape}")
    r = rel.values[sparse.valid]
    d = sparse.values[sparse.valid]
    if r.size < 2:
        raise InsufficientSamples(f"need at least 2 valid sparse pixels, got {r.size}")
    if np.all(r == r[0]):
        raise DegenerateFit("all relative depth values are equal at the sparse pixels")
    y = d if cfg.space == "depth" else 1.0 / d

    keep = np.ones(r.size, dtype=bool)
    a, b = _lstsq_affine(r, y)
    if cfg.trim:
        for _ in range(cfg.rounds):
            res = y - (a * r + b)
            med = np.median(res[keep])
            mad = _MAD_SCALE * np.median(np.abs(res[keep] - med))
            # floor keeps exactly-affine samples when the fit is already perfect
            cutoff = max(cfg.k * mad, 1e-9 * max(1.0, float(np.abs(y).max())))
            new_keep = np.abs(res - med) <= cutoff
            if new_keep.sum() < 2 or np.all(r[new_keep] == r[new_keep][0]):
                break
            if np.array_equal(new_keep, keep):
                break
            keep = new_keep
            a, b = _lstsq_affine(r[keep], y[keep])

    fit = ScaleFit(a, b, int(keep.sum()), 0.0, cfg.space)
    pred = fit.evaluate(r[keep])
    rms = float(np.sqrt(np.mean((pred - d[keep]) ** 2)))
    return ScaleFit(a, b, int(keep.sum()), rms, cfg.space)


def apply_scale(rel: RelativeDepthMap, fit: ScaleFit, clamp=(0.1, 80.0)) -> DepthMap:
    """Dense metric depth ``clip(a*r + b, d_min, d_max)``; every pixel is valid."""
    d_min, d_max = clamp
    if not 0 < d_min < d_max:
        raise ValidationError(f"clamp bounds must satisfy 0 < d_min < d_max, got {clamp}")
    d = np.clip(fit.evaluate(rel.values), d_min, d_max)
    return DepthMap(d, np.ones_like(d, dtype=bool))
