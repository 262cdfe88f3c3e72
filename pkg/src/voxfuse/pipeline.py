"""End-to-end helpers over synthetic sequences: lift semantics, score surfaces."""

from __future__ import annotations

import numpy as np

from .depth_prior import DepthMap
from .gdp import FeatureImage, GdpConfig, gdp_gather, gdp_scatter
from .synth import Frame, Rig, degrade_depth
from .voxel import NUM_CLASSES, FeatureGrid, LabelGrid, MaskGrid, require_same_spec


def one_hot_features(class_image, valid=None, channels: int = NUM_CLASSES) -> FeatureImage:
    """One channel per class id; invalid pixels get an all-zero vector."""
    cls = np.asarray(class_image, dtype=np.int64)
    feat = np.eye(channels)[np.clip(cls, 0, channels - 1)]
    if valid is not None:
        feat[~np.asarray(valid, dtype=bool)] = 0.0
    return FeatureImage(feat)


def argmax_labels(features: FeatureGrid) -> LabelGrid:
    """Per-voxel argmax; voxels with an all-zero vector come out as class 0 (empty)."""
    f = features.features
    lab = np.argmax(f, axis=-1)
    lab = np.where(np.any(f != 0, axis=-1), lab, 0)
    return LabelGrid(features.spec, lab.astype(np.uint8))


def surface_accuracy(features: FeatureGrid, gt: LabelGrid, visible: MaskGrid) -> float:
    """Fraction of visible surface voxels whose argmax class equals the ground truth."""
    require_same_spec(features.spec, gt.spec)
    require_same_spec(gt.spec, visible.spec)
    n = visible.count()
    if n == 0:
        return float("nan")
    pred = argmax_labels(features).labels
    return float(np.sum((pred == gt.labels) & visible.bits)) / n


def lift_frame(frame: Frame, rig: Rig, cfg: GdpConfig, depth: DepthMap | None = None, method: str = "scatter",
               **kw):
    """Project the frame's one-hot semantics into its volume using ``depth`` (default: exact)."""
    depth = frame.raycast.depth if depth is None else depth
    feat = one_hot_features(frame.raycast.labels, frame.raycast.depth.valid)
    fn = gdp_scatter if method == "scatter" else gdp_gather
    return fn(feat, depth, rig.extrinsic, rig.K, frame.gt.spec, cfg, **kw)


def sigma_sweep(frames, rig: Rig, sigmas, depth_noise: float, seed: int = 0, truncation_radius: float = 3.0,
                accumulation: str = "weighted-mean") -> dict:
    """Mean surface-label accuracy over ``frames`` for each sigma (voxel units).

    Depth priors are the exact ray-cast depths plus i.i.d. Gaussian noise of
    ``depth_noise`` meters per pixel (seeded per frame).
    """
    noisy = [degrade_depth(f.raycast.depth, 1.0, depth_noise, seed + i) for i, f in enumerate(frames)]
    out = {}
    for sigma in sigmas:
        cfg = GdpConfig(sigma=sigma, truncation_radius=truncation_radius, accumulation=accumulation)
        accs = [surface_accuracy(lift_frame(f, rig, cfg, d).features, f.gt, f.visible) for f, d in zip(frames, noisy)]
        out[sigma] = float(np.mean(accs))
    return out


ABLATION_SIGMAS = (1, 2, 4, 8, 16, 64, 256)


def ablation_sequence(seed: int, n_frames: int = 4, image_size=(48, 32), n_blobs: int = 300, n_boxes: int = 24,
                      tube: int = 1):
    """Cluttered desk scene for sigma sweeps.

    Dense floating clutter gives many partly occluded surfaces (which large
    sigma contaminates) and the coarse image leaves few rays per voxel (which
    small sigma under-covers once depth is noisy).  A thin tube along the
    camera path is cleared so the camera never starts inside an object.
    """
    from .synth import generate_world, make_sequence, straight_trajectory
    from .voxel import EMPTY, LabelGrid

    world = generate_world(seed, (64, 64, 16), ("ground-plane", "boxes", "random-blobs"), n_blobs=n_blobs,
                           n_boxes=n_boxes)
    rig = Rig.desk(image_size=image_size)
    start, step = (2, 32, 5), 2
    lab = world.grid.labels.copy()
    cz = start[2] + int(round(rig.extrinsic.center[2] / world.grid.spec.voxel_size))
    lab[: start[0] + step * n_frames + 2, start[1] - tube: start[1] + tube, max(1, cz - tube): cz + tube] = EMPTY
    world = type(world)(LabelGrid(world.grid.spec, lab), world.seed, world.palette)
    traj = straight_trajectory(n_frames, rig.spec, start_voxels=start, step_voxels=(step, 0, 0))
    return make_sequence(world, rig, traj), rig
