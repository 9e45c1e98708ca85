"""
PATrack Synth - Degradations.

Each kind touches one modality only, over a frame span, and tags the affected
frames. Noise is drawn from a generator keyed by (seed, kind, frame), so a
degradation is a pure function of (record, degradation).
"""

from __future__ import annotations

import math
from collections.abc import Callable

import numpy as np
import structlog

from patrack.core.rng import Rng
from patrack.exceptions import InputException
from patrack.modules.synth.schemas import Degradation, FrameBox, SequenceRecord

logger = structlog.get_logger(__name__)

OCCLUSION_VISIBLE_LIMIT = 0.9
EVENT_NEUTRAL = 128


def _to_u8(image: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(image), 0, 255).astype(np.uint8)


def _box_slices(box: FrameBox, shape: tuple[int, int], width_fraction: float = 1.0) -> tuple[slice, slice]:
    """Pixel rows/cols whose centers fall inside the left `width_fraction` of the box."""
    h, w = shape
    x0 = max(0, math.ceil(box.x - 0.5))
    x1 = min(w, math.ceil(box.x + box.w * width_fraction - 0.5))
    y0 = max(0, math.ceil(box.y - 0.5))
    y1 = min(h, math.ceil(box.y + box.h - 0.5))
    return slice(y0, max(y0, y1)), slice(x0, max(x0, x1))


def _low_illumination(rgb: np.ndarray, severity: float, rng: Rng) -> np.ndarray:
    dimmed = rgb.astype(np.float64) * (1.0 - 0.9 * severity)
    return _to_u8(dimmed + rng.normal_array(rgb.shape, std=2.0 * severity))


def _high_illumination(rgb: np.ndarray, severity: float, rng: Rng) -> np.ndarray:
    values = rgb.astype(np.float64)
    return _to_u8(values + (255.0 - values) * 0.9 * severity)


def _horizontal_blur(rgb: np.ndarray, severity: float, rng: Rng) -> np.ndarray:
    length = 1 + 2 * int(round(4 * severity))
    if length == 1:
        return rgb
    pad = length // 2
    padded = np.pad(rgb.astype(np.float64), ((0, 0), (0, 0), (pad, pad)), mode="edge")
    windows = np.lib.stride_tricks.sliding_window_view(padded, length, axis=2)
    return _to_u8(windows.mean(axis=-1))


_RGB_KINDS: dict[str, tuple[Callable[[np.ndarray, float, Rng], np.ndarray], str]] = {
    "low_illumination": (_low_illumination, "LI"),
    "high_illumination": (_high_illumination, "HI"),
    "fast_motion": (_horizontal_blur, "FM"),
}
KINDS = (*_RGB_KINDS, "occlusion", "thermal_crossover")


def _frame_range(record: SequenceRecord, degradation: Degradation) -> range:
    if degradation.span is None:
        return range(record.num_frames)
    start, stop = degradation.span
    if not 0 <= start < stop <= record.num_frames:
        raise InputException(
            f"degradation span {degradation.span} is outside 0..{record.num_frames}",
            details={"span": list(degradation.span), "frames": record.num_frames},
        )
    return range(start, stop)


def _occlude(record: SequenceRecord, frames: range, degradation: Degradation) -> SequenceRecord:
    rgb, x = list(record.rgb), list(record.x)
    visible, attributes = list(record.visible), list(record.attributes)
    coverage = degradation.severity
    rng = Rng.derive(degradation.seed, "occlusion")
    colour = np.array([rng.integers(40, 216) for _ in range(3)], dtype=np.uint8)
    tag = "TO" if coverage > OCCLUSION_VISIBLE_LIMIT else "PO"
    for i in frames:
        rows, cols = _box_slices(record.boxes[i], record.frame_shape, coverage)
        frame_rgb, frame_x = rgb[i].copy(), x[i].copy()
        frame_rgb[:, rows, cols] = colour[:, None, None]
        fill = EVENT_NEUTRAL if record.modality == "event" else int(np.median(frame_x))
        frame_x[:, rows, cols] = fill
        rgb[i], x[i] = frame_rgb, frame_x
        if coverage > OCCLUSION_VISIBLE_LIMIT:
            visible[i] = 0
        attributes[i] = (attributes[i] - {"NO"}) | {tag}
    return record.evolve(rgb=rgb, x=x, visible=visible, attributes=attributes)


def _thermal_crossover(record: SequenceRecord, frames: range, degradation: Degradation) -> SequenceRecord:
    """Blend the target region of X toward the mean X value outside it."""
    x, attributes = list(record.x), list(record.attributes)
    for i in frames:
        rows, cols = _box_slices(record.boxes[i], record.frame_shape)
        frame = x[i].astype(np.float64)
        outside = np.ones(frame.shape[1:], dtype=bool)
        outside[rows, cols] = False
        background = float(frame[0][outside].mean()) if outside.any() else float(frame.mean())
        region = frame[:, rows, cols]
        frame[:, rows, cols] = region + degradation.severity * (background - region)
        x[i] = _to_u8(frame)
        attributes[i] = attributes[i] | {"TC"}
    return record.evolve(x=x, attributes=attributes)


def apply_degradation(record: SequenceRecord, degradation: Degradation) -> SequenceRecord:
    """Degraded copy of `record`; severity 0 returns the record unchanged."""
    if degradation.kind not in KINDS:
        raise InputException(
            f"unknown degradation kind '{degradation.kind}'", details={"known": list(KINDS)}
        )
    frames = _frame_range(record, degradation)
    if degradation.severity == 0:
        return record

    if degradation.kind == "occlusion":
        degraded = _occlude(record, frames, degradation)
    elif degradation.kind == "thermal_crossover":
        degraded = _thermal_crossover(record, frames, degradation)
    else:
        transform, tag = _RGB_KINDS[degradation.kind]
        rgb, attributes = list(record.rgb), list(record.attributes)
        for i in frames:
            rng = Rng.derive(degradation.seed, degradation.kind, i)
            rgb[i] = transform(rgb[i], degradation.severity, rng)
            attributes[i] = attributes[i] | {tag}
        degraded = record.evolve(rgb=rgb, attributes=attributes)

    logger.debug(
        "degradation_applied",
        sequence=record.name,
        kind=degradation.kind,
        severity=degradation.severity,
        frames=len(frames),
    )
    return degraded
