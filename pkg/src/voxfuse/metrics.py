"""Scene-completion IoU, semantic mIoU, inter-frame consistency and losses.

Evaluation always skips voxels whose reference label is UNKNOWN, in addition
to whatever ``eval_mask`` excludes.  Classes absent from both prediction and
reference (zero union) are left out of the mIoU mean by default.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyEvaluation, ValidationError
from .geometry import RigidPose
from .temporal import warp_label_grid, warp_prob_grid
from .voxel import (
    CLASS_NAMES,
    EMPTY,
    NUM_CLASSES,
    UNKNOWN,
    LabelGrid,
    MaskGrid,
    ProbGrid,
    overlap_mask,
    require_same_spec,
)

_PROB_FLOOR = 1e-12


@dataclass
class EvalReport:
    sc_iou: float
    miou: float
    per_class_iou: np.ndarray  # (19,), NaN where the class is absent
    present: np.ndarray  # (19,) bool, union > 0
    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray
    sc_counts: tuple  # (tp, fp, fn) for occupancy
    evaluated_voxel_count: int
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        per_class = []
        for c, name in enumerate(CLASS_NAMES):
            per_class.append({
                "class": name,
                "id": c + 1,
                "present": bool(self.present[c]),
                "iou": None if not self.present[c] else float(self.per_class_iou[c]),
                "tp": int(self.tp[c]),
                "fp": int(self.fp[c]),
                "fn": int(self.fn[c]),
            })
        d = {
            "sc_iou": float(self.sc_iou),
            "miou": None if math.isnan(self.miou) else float(self.miou),
            "sc_tp": int(self.sc_counts[0]),
            "sc_fp": int(self.sc_counts[1]),
            "sc_fn": int(self.sc_counts[2]),
            "evaluated_voxel_count": int(self.evaluated_voxel_count),
            "per_class": per_class,
        }
        d.update(self.extra)
        return d

    def to_text(self) -> str:
        """``key=value`` lines; ratios printed as percentages with two decimals."""
        lines = [
            f"sc_iou={_pct(self.sc_iou)}",
            f"miou={_pct(self.miou)}",
            f"sc_tp={self.sc_counts[0]}",
            f"sc_fp={self.sc_counts[1]}",
            f"sc_fn={self.sc_counts[2]}",
            f"evaluated_voxel_count={self.evaluated_voxel_count}",
        ]
        for c, name in enumerate(CLASS_NAMES):
            iou = _pct(self.per_class_iou[c]) if self.present[c] else "absent"
            lines.append(f"iou.{name}={iou}")
        for c, name in enumerate(CLASS_NAMES):
            lines.append(f"counts.{name}={self.tp[c]},{self.fp[c]},{self.fn[c]}")
        for k, v in self.extra.items():
            lines.append(f"{k}={v}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n"


def _pct(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "nan"
    return f"{100.0 * float(x):.2f}"


def _evaluated(gt: LabelGrid, eval_mask):
    m = gt.labels != UNKNOWN
    if eval_mask is not None:
        require_same_spec(gt.spec, eval_mask.spec)
        m &= eval_mask.bits
    if not m.any():
        raise EmptyEvaluation("no voxel is both masked-in and known")
    return m


def _occupied(labels):
    return (labels != EMPTY) & (labels != UNKNOWN)


def _sc_counts(p, g):
    return int(np.sum(p & g)), int(np.sum(p & ~g)), int(np.sum(~p & g))


def sc_iou(pred: LabelGrid, gt: LabelGrid, eval_mask: MaskGrid | None = None) -> float:
    """Binary occupancy IoU over masked, known voxels."""
    require_same_spec(pred.spec, gt.spec)
    m = _evaluated(gt, eval_mask)
    tp, fp, fn = _sc_counts(_occupied(pred.labels[m]), _occupied(gt.labels[m]))
    union = tp + fp + fn
    return tp / union if union else 1.0


def miou(pred: LabelGrid, gt: LabelGrid, eval_mask: MaskGrid | None = None,
         absent_as_zero: bool = False) -> EvalReport:
    """Per-class IoU over classes 1..19 plus the occupancy IoU.

    Classes with zero union are reported absent and skipped by the mean,
    unless ``absent_as_zero`` counts them as 0.
    """
    require_same_spec(pred.spec, gt.spec)
    m = _evaluated(gt, eval_mask)
    p = pred.labels[m].astype(np.int64)
    g = gt.labels[m].astype(np.int64)
    # confusion counts over ids 0..19 with UNKNOWN binned past the end
    p = np.where(p == UNKNOWN, NUM_CLASSES, p)
    conf = np.bincount(g * (NUM_CLASSES + 1) + p, minlength=(NUM_CLASSES + 1) ** 2)
    conf = conf.reshape(NUM_CLASSES + 1, NUM_CLASSES + 1)
    diag = np.diag(conf)[1:NUM_CLASSES]
    tp = diag
    fp = conf[:, 1:NUM_CLASSES].sum(axis=0) - diag
    fn = conf[1:NUM_CLASSES, :].sum(axis=1) - diag
    union = tp + fp + fn
    present = union > 0
    with np.errstate(invalid="ignore", divide="ignore"):
        ious = np.where(present, tp / np.maximum(union, 1), np.nan)
    if absent_as_zero:
        mean = float(np.where(present, ious, 0.0).mean())
    else:
        mean = float(ious[present].mean()) if present.any() else math.nan
    sc = _sc_counts(_occupied(pred.labels[m]), _occupied(gt.labels[m]))
    u = sum(sc)
    return EvalReport(
        sc_iou=sc[0] / u if u else 1.0,
        miou=mean,
        per_class_iou=ious,
        present=present,
        tp=tp,
        fp=fp,
        fn=fn,
        sc_counts=sc,
        evaluated_voxel_count=int(m.sum()),
    )


def consistency_report(pred_prev: LabelGrid, pred_curr: LabelGrid, rel: RigidPose) -> EvalReport:
    """Score the current prediction against the previous one warped into the current frame."""
    warped = warp_label_grid(pred_prev, rel, pred_curr.spec)
    mask = overlap_mask(pred_curr.spec, rel, pred_prev.spec)
    return miou(pred_curr, warped, mask)


def consistency(pred_prev: LabelGrid, pred_curr: LabelGrid, rel: RigidPose):
    """``(iou, miou)`` between adjacent predictions within their overlap."""
    rep = consistency_report(pred_prev, pred_curr, rel)
    return rep.sc_iou, rep.miou


def _mean(values) -> float:
    return math.fsum(values.tolist()) / values.size


def cross_entropy_loss(pred: ProbGrid, gt: LabelGrid, eval_mask: MaskGrid | None = None) -> float:
    """Mean ``-log p(gt class)`` in nats over masked, known voxels."""
    require_same_spec(pred.spec, gt.spec)
    m = _evaluated(gt, eval_mask)
    p = np.take_along_axis(pred.probs[m], gt.labels[m].astype(np.int64)[:, None], axis=1)[:, 0]
    return _mean(-np.log(np.maximum(p, _PROB_FLOOR)))


def consistency_loss(prob_prev: ProbGrid, prob_curr: ProbGrid, rel: RigidPose, gt_known_mask_curr: MaskGrid,
                     mode: str = "hard") -> float:
    """Cross-entropy of the current estimate against the warped previous one.

    ``hard`` uses the argmax of the warped previous distribution as a pseudo
    label (ties go to the lower class id); ``soft`` uses the whole
    distribution as the target.
    """
    if mode not in ("hard", "soft"):
        raise ValidationError(f"mode must be 'hard' or 'soft', got {mode!r}")
    require_same_spec(prob_curr.spec, gt_known_mask_curr.spec)
    warped, inside = warp_prob_grid(prob_prev, rel, prob_curr.spec)
    m = inside.bits & gt_known_mask_curr.bits
    if not m.any():
        raise EmptyEvaluation("overlap with known voxels is empty")
    q = warped.probs[m]
    logp = np.log(np.maximum(prob_curr.probs[m], _PROB_FLOOR))
    if mode == "hard":
        pseudo = np.argmax(q, axis=1)
        return _mean(-logp[np.arange(pseudo.size), pseudo])
    return _mean(-np.sum(q * logp, axis=1))


@dataclass
class LossReport:
    ce: float
    con: float | None = None

    def to_dict(self) -> dict:
        total = None if self.con is None else self.ce + self.con
        # the monocular term belongs to a separate reconstruction pipeline; never computed here
        return {"l_ce": self.ce, "l_con": self.con, "l_mono": "not-computed", "l_partial_total": total}
