"""
PATrack Evaluation - Tracking metrics.

All boxes are corner form (x, y, w, h) in frame pixels. Every rate is a
fraction in [0, 1]; curves are sampled on evenly spaced threshold grids
whose k-th sample is k * upper / (samples - 1).
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from patrack.config import EvalSection
from patrack.exceptions import InputException, UndefinedResultException
from patrack.modules.evaluation.schemas import (
    AttributeMetrics,
    Curve,
    EvalResult,
    MetricSummary,
    SequenceResult,
    TrackedSequence,
)
from patrack.modules.synth.schemas import ATTRIBUTES, FrameBox

PRECISION_CURVE_MAX_PX = 50

BoxLike = FrameBox | Sequence[float]


@dataclass(frozen=True)
class ScoredCurve:
    score: float
    thresholds: np.ndarray
    values: np.ndarray

    def to_curve(self) -> Curve:
        return Curve(thresholds=self.thresholds.tolist(), values=self.values.tolist())


@dataclass(frozen=True)
class PrReF:
    precision: float
    recall: float
    f_score: float
    threshold: float
    sweep: np.ndarray  # (samples, 4): theta, Pr, Re, F


def threshold_grid(samples: int, upper: float) -> np.ndarray:
    return np.arange(samples, dtype=np.float64) * upper / (samples - 1)


def _rows(boxes: Sequence[BoxLike] | np.ndarray) -> np.ndarray:
    if isinstance(boxes, np.ndarray):
        return boxes.astype(np.float64).reshape(-1, 4)
    return np.array(
        [b.as_tuple() if isinstance(b, FrameBox) else tuple(b) for b in boxes], dtype=np.float64
    ).reshape(-1, 4)


def _confidences(boxes: Sequence[FrameBox]) -> np.ndarray:
    return np.array([1.0 if b.confidence is None else b.confidence for b in boxes], dtype=np.float64)


# =============================================================================
# Overlap and center error
# =============================================================================


def iou(a: BoxLike, b: BoxLike) -> float:
    """Intersection over union; 0 for disjoint boxes."""
    return float(overlaps(_rows([a]), _rows([b]))[0])


def overlaps(pred: Sequence[BoxLike] | np.ndarray, gt: Sequence[BoxLike] | np.ndarray) -> np.ndarray:
    """Per-frame IoU. Areas come from the same corners as the intersection."""
    p, g = _rows(pred), _rows(gt)
    px1, py1, px2, py2 = p[:, 0], p[:, 1], p[:, 0] + p[:, 2], p[:, 1] + p[:, 3]
    gx1, gy1, gx2, gy2 = g[:, 0], g[:, 1], g[:, 0] + g[:, 2], g[:, 1] + g[:, 3]
    iw = np.maximum(np.minimum(px2, gx2) - np.maximum(px1, gx1), 0.0)
    ih = np.maximum(np.minimum(py2, gy2) - np.maximum(py1, gy1), 0.0)
    inter = iw * ih
    union = (px2 - px1) * (py2 - py1) + (gx2 - gx1) * (gy2 - gy1) - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(union > 0, inter / union, 0.0)
    return np.clip(out, 0.0, 1.0)


def center_errors(pred: Sequence[BoxLike] | np.ndarray, gt: Sequence[BoxLike] | np.ndarray) -> np.ndarray:
    p, g = _rows(pred), _rows(gt)
    dx = (p[:, 0] + p[:, 2] / 2) - (g[:, 0] + g[:, 2] / 2)
    dy = (p[:, 1] + p[:, 3] / 2) - (g[:, 1] + g[:, 3] / 2)
    return np.sqrt(dx * dx + dy * dy)


# =============================================================================
# Rates
# =============================================================================


def precision_rate(errors: Sequence[float] | np.ndarray, threshold: float = 20.0) -> float:
    values = np.asarray(errors, dtype=np.float64)
    if values.size == 0:
        raise UndefinedResultException("precision_rate")
    return float(np.count_nonzero(values <= threshold)) / values.size


def precision_curve(errors: Sequence[float] | np.ndarray, threshold: float = 20.0) -> ScoredCurve:
    """Precision at every integer pixel threshold 0..50; score is PR at `threshold`."""
    values = np.asarray(errors, dtype=np.float64)
    grid = np.arange(PRECISION_CURVE_MAX_PX + 1, dtype=np.float64)
    curve = np.array([precision_rate(values, t) for t in grid])
    return ScoredCurve(precision_rate(values, threshold), grid, curve)


def success_rate(ious: Sequence[float] | np.ndarray, samples: int = 21) -> ScoredCurve:
    """success(t) = fraction with IoU >= t; SR is the mean over the grid."""
    values = np.asarray(ious, dtype=np.float64)
    if values.size == 0:
        raise UndefinedResultException("success_rate")
    grid = threshold_grid(samples, 1.0)
    curve = np.array([np.count_nonzero(values >= t) / values.size for t in grid])
    return ScoredCurve(float(curve.mean()), grid, curve)


def normalized_errors(pred: Sequence[BoxLike] | np.ndarray, gt: Sequence[BoxLike] | np.ndarray) -> np.ndarray:
    p, g = _rows(pred), _rows(gt)
    degenerate = np.flatnonzero((g[:, 2] <= 0) | (g[:, 3] <= 0))
    if degenerate.size:
        raise InputException(
            "normalized precision needs ground truth with positive width and height",
            details={"frames": degenerate[:10].tolist()},
        )
    dx = ((p[:, 0] + p[:, 2] / 2) - (g[:, 0] + g[:, 2] / 2)) / g[:, 2]
    dy = ((p[:, 1] + p[:, 3] / 2) - (g[:, 1] + g[:, 3] / 2)) / g[:, 3]
    return np.sqrt(dx * dx + dy * dy)


def normalized_precision(
    pred: Sequence[BoxLike] | np.ndarray,
    gt: Sequence[BoxLike] | np.ndarray,
    samples: int = 101,
    upper: float = 0.5,
) -> ScoredCurve:
    errors = normalized_errors(pred, gt)
    if errors.size == 0:
        raise UndefinedResultException("normalized_precision")
    grid = threshold_grid(samples, upper)
    curve = np.array([np.count_nonzero(errors <= t) / errors.size for t in grid])
    return ScoredCurve(float(curve.mean()), grid, curve)


def pr_re_f(
    pred: Sequence[FrameBox],
    gt: Sequence[BoxLike] | np.ndarray,
    visible: Sequence[int] | np.ndarray,
    samples: int = 101,
) -> PrReF:
    """Long-term precision/recall/F over a confidence sweep; the F-maximizing point wins.

    A frame is reported at threshold t when its confidence is >= t. Overlap is
    counted 0 on invisible frames. Pr averages over reported frames, Re over
    visible frames; ties keep the lowest threshold.
    """
    if len(pred) == 0:
        raise UndefinedResultException("pr_re_f")
    vis = np.asarray(visible, dtype=bool)
    ov = np.where(vis, overlaps(pred, gt), 0.0)
    conf = _confidences(pred)
    grid = threshold_grid(samples, 1.0)

    reported = conf[None, :] >= grid[:, None]
    n_reported = reported.sum(axis=1)
    hits = (reported * ov[None, :]).sum(axis=1)
    precision = np.where(n_reported > 0, hits / np.maximum(n_reported, 1), 0.0)
    n_visible = int(vis.sum())
    recall = hits / n_visible if n_visible else np.zeros_like(hits)
    denom = precision + recall
    with np.errstate(divide="ignore", invalid="ignore"):
        f = np.where(denom > 0, 2 * precision * recall / denom, 0.0)

    best = int(np.argmax(f))
    return PrReF(
        precision=float(precision[best]),
        recall=float(recall[best]),
        f_score=float(f[best]),
        threshold=float(grid[best]),
        sweep=np.stack([grid, precision, recall, f], axis=1),
    )


# =============================================================================
# Breakdown and aggregation
# =============================================================================


def attribute_breakdown(
    pred: Sequence[BoxLike] | np.ndarray,
    gt: Sequence[BoxLike] | np.ndarray,
    attributes: Sequence[frozenset[str]],
    threshold: float = 20.0,
    samples: int = 21,
) -> dict[str, AttributeMetrics]:
    """PR/SR over the frames carrying each attribute; empty attributes are omitted."""
    p, g = _rows(pred), _rows(gt)
    errors = center_errors(p, g)
    ious = overlaps(p, g)
    out: dict[str, AttributeMetrics] = {}
    known = list(ATTRIBUTES) + sorted({t for tags in attributes for t in tags} - set(ATTRIBUTES))
    for tag in known:
        mask = np.array([tag in tags for tags in attributes], dtype=bool)
        if not mask.any():
            continue
        out[tag] = AttributeMetrics(
            frames=int(mask.sum()),
            pr=precision_rate(errors[mask], threshold),
            sr=success_rate(ious[mask], samples).score,
        )
    return out


def summarize(
    pred: Sequence[FrameBox],
    gt: Sequence[BoxLike] | np.ndarray,
    visible: Sequence[int] | np.ndarray,
    section: EvalSection | None = None,
) -> MetricSummary:
    section = section or EvalSection()
    lt = pr_re_f(pred, gt, visible, section.f_samples)
    return MetricSummary(
        frames=len(pred),
        pr=precision_rate(center_errors(pred, gt), section.precision_threshold),
        sr=success_rate(overlaps(pred, gt), section.success_samples).score,
        npr=normalized_precision(pred, gt, section.npr_samples, section.npr_max).score,
        precision=lt.precision,
        recall=lt.recall,
        f_score=lt.f_score,
        f_threshold=lt.threshold,
    )


def evaluate_sequences(tracked: Sequence[TrackedSequence], section: EvalSection | None = None) -> EvalResult:
    """Per-sequence metrics plus the pooled one-pass aggregate (frames of all sequences together)."""
    section = section or EvalSection()
    if not tracked:
        raise UndefinedResultException("evaluate_sequences")
    ordered = sorted(tracked, key=lambda t: t.name)
    per_sequence = [
        SequenceResult(
            name=t.name,
            modality=t.modality,
            metrics=summarize(t.predictions, t.ground_truth, t.visible, section),
        )
        for t in ordered
    ]
    pred = [box for t in ordered for box in t.predictions]
    gt = [box for t in ordered for box in t.ground_truth]
    visible = [v for t in ordered for v in t.visible]
    attributes = [tags for t in ordered for tags in t.attributes]

    return EvalResult(
        aggregate=summarize(pred, gt, visible, section),
        sequences=per_sequence,
        success_curve=success_rate(overlaps(pred, gt), section.success_samples).to_curve(),
        precision_curve=precision_curve(center_errors(pred, gt), section.precision_threshold).to_curve(),
        npr_curve=normalized_precision(pred, gt, section.npr_samples, section.npr_max).to_curve(),
        attributes=attribute_breakdown(
            pred, gt, attributes, section.precision_threshold, section.success_samples
        ),
    )
