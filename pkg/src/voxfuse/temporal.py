"""Carry voxel grids from the previous frame into the current one.

All warps are backward: every current voxel center is mapped through the
inverse motion into the previous volume and the previous grid is sampled
there.  Voxels whose source falls outside the previous volume are zero (or
UNKNOWN for labels) and flagged False in the returned mask; that mask is
exactly :func:`voxfuse.voxel.overlap_mask`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ChannelMismatch, SpecMismatch, ValidationError
from .geometry import RigidPose
from .voxel import (
    UNKNOWN,
    FeatureGrid,
    GridSpec,
    LabelGrid,
    MaskGrid,
    ProbGrid,
    continuous_index,
    points_to_indices,
    source_positions,
)

WARP_MODES = ("nearest", "trilinear")
# Snap sample positions this close to a voxel center onto it, so that
# identity and integer-voxel motions reproduce the source exactly.
_SNAP = 1e-9


def _nearest(values, spec_prev, src):
    idx, inside = points_to_indices(src, spec_prev)
    idx = np.where(inside[..., None], idx, 0)
    return values[idx[..., 0], idx[..., 1], idx[..., 2]], inside


def trilinear_sample(values, spec: GridSpec, points):
    """Sample a ``(nx, ny, nz, C)`` array at ``(..., 3)`` points between voxel centers.

    Positions within half a voxel of the volume boundary use the nearest
    boundary layer (edge replication), so results never overshoot the eight
    surrounding values.
    """
    u = continuous_index(points, spec) - 0.5
    r = np.round(u)
    u = np.where(np.abs(u - r) < _SNAP, r, u)
    base = np.floor(u)
    frac = u - base
    base = base.astype(np.int64)
    dims = np.array(spec.dims)
    out = 0.0
    for corner in range(8):
        off = np.array([(corner >> a) & 1 for a in range(3)])
        idx = np.clip(base + off, 0, dims - 1)
        w = np.prod(np.where(off == 1, frac, 1.0 - frac), axis=-1)
        out = out + w[..., None] * values[idx[..., 0], idx[..., 1], idx[..., 2]]
    return out


def warp_feature_grid(prev: FeatureGrid, rel: RigidPose, spec_curr: GridSpec, mode: str = "trilinear"):
    """Resample ``prev`` into ``spec_curr``; returns ``(FeatureGrid, MaskGrid)``.

    ``rel`` maps previous-frame points to current-frame points.
    """
    if mode not in WARP_MODES:
        raise ValidationError(f"warp mode must be one of {WARP_MODES}, got {mode!r}")
    src = source_positions(spec_curr, rel)
    _, inside = points_to_indices(src, prev.spec)
    if mode == "nearest":
        out, _ = _nearest(prev.features, prev.spec, src)
    else:
        out = trilinear_sample(prev.features, prev.spec, src)
    out = np.where(inside[..., None], out, 0).astype(prev.features.dtype, copy=False)
    return FeatureGrid(spec_curr, out), MaskGrid(spec_curr, inside)


def warp_prob_grid(prev: ProbGrid, rel: RigidPose, spec_curr: GridSpec):
    """Trilinear per-class warp followed by per-voxel renormalization.

    Voxels outside the source volume get an all-zero vector and a False mask bit.
    """
    feat, mask = warp_feature_grid(FeatureGrid(prev.spec, prev.probs), rel, spec_curr, "trilinear")
    p = feat.features
    tot = p.sum(axis=-1, keepdims=True)
    p = np.where(tot > 0, p / np.where(tot > 0, tot, 1.0), 0.0)
    return ProbGrid(spec_curr, p), mask


def warp_label_grid(prev: LabelGrid, rel: RigidPose, spec_curr: GridSpec) -> LabelGrid:
    """Nearest-neighbour label warp; voxels without a source become UNKNOWN."""
    src = source_positions(spec_curr, rel)
    lab, inside = _nearest(prev.labels, prev.spec, src)
    return LabelGrid(spec_curr, np.where(inside, lab, UNKNOWN))


@dataclass(frozen=True)
class InitPolicy:
    """How to fill the hidden state before the first frame.

    ``kind`` is ``'zeros'``, ``'random'`` (i.i.d. normal with ``stddev``,
    drawn from ``seed``) or ``'constant'`` (every voxel gets ``values``).
    """

    kind: str = "zeros"
    seed: int = 0
    stddev: float = 1.0
    values: tuple = ()

    def __post_init__(self):
        if self.kind not in ("zeros", "random", "constant"):
            raise ValidationError(f"unknown init policy {self.kind!r}")


def init_hidden(spec: GridSpec, channels: int, policy: InitPolicy = InitPolicy()) -> FeatureGrid:
    if channels < 1:
        raise ValidationError(f"channels must be >= 1, got {channels}")
    shape = (*spec.dims, channels)
    if policy.kind == "zeros":
        return FeatureGrid(spec, np.zeros(shape))
    if policy.kind == "random":
        rng = np.random.default_rng(policy.seed)
        return FeatureGrid(spec, rng.normal(0.0, policy.stddev, size=shape))
    vec = np.asarray(policy.values, dtype=np.float64).reshape(-1)
    if vec.size != channels:
        raise ChannelMismatch(f"constant init has {vec.size} values for {channels} channels")
    return FeatureGrid(spec, np.broadcast_to(vec, shape).copy())


@dataclass(eq=False)
class SequenceState:
    hidden: FeatureGrid
    overlap: MaskGrid
    frame_index: int = 0

    @classmethod
    def start(cls, spec: GridSpec, channels: int, policy: InitPolicy = InitPolicy()) -> SequenceState:
        return cls(init_hidden(spec, channels, policy), MaskGrid.full(spec, False), 0)


def step_state(state: SequenceState, rel: RigidPose, spec_curr: GridSpec,
               new_hidden_producer: Callable[[FeatureGrid], FeatureGrid]) -> SequenceState:
    """Align the hidden state with the current frame and hand it to the producer.

    The producer stands in for the network; its output becomes the new hidden
    state and must live on ``spec_curr``.
    """
    aligned, overlap = warp_feature_grid(state.hidden, rel, spec_curr, "trilinear")
    new_hidden = new_hidden_producer(aligned)
    if new_hidden.spec != spec_curr:
        raise SpecMismatch("producer returned a grid on a different spec")
    return SequenceState(new_hidden, overlap, state.frame_index + 1)
