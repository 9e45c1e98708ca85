"""
PATrack Synth - Scene rendering.

A static textured background, a moving target and optional distractors,
rendered once per frame into RGB and into the auxiliary modality:

- thermal: per-object temperature on a smooth field, independent of lighting
- depth: quantized inverse-distance floor plane with sparse holes
- event: thresholded luminance change since the previous RGB frame
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import structlog

from patrack.core.rng import Rng
from patrack.exceptions import ConfigurationException
from patrack.modules.evaluation.entropy import luminance
from patrack.modules.synth.schemas import FrameBox, SceneSpec, SequenceRecord

logger = structlog.get_logger(__name__)

EVENT_THRESHOLD = 15.0
DEPTH_STEP = 16
DEPTH_HOLE_RATE = 0.03
EVENT_ZERO = 128


@dataclass
class _Mover:
    """Object path: centers per frame plus base size."""

    centers: np.ndarray  # (T, 2)
    w: float
    h: float


def _bounded(value: np.ndarray, low: float, high: float) -> np.ndarray:
    """Reflect a 1-D path into [low, high]."""
    span = high - low
    if span <= 0:
        return np.full_like(value, (low + high) / 2.0)
    folded = np.mod(value - low, 2 * span)
    return low + np.where(folded > span, 2 * span - folded, folded)


def _path(spec: SceneSpec, rng: Rng, w: float, h: float, max_scale: float) -> np.ndarray:
    size = spec.frame_size
    t = np.arange(spec.num_frames, dtype=np.float64)
    lo_x, hi_x = w * max_scale / 2 + 1, size - w * max_scale / 2 - 1
    lo_y, hi_y = h * max_scale / 2 + 1, size - h * max_scale / 2 - 1
    start = np.array([rng.uniform(lo_x, hi_x), rng.uniform(lo_y, hi_y)])
    if spec.velocity == 0:
        return np.tile(start, (spec.num_frames, 1))
    if spec.trajectory == "linear":
        angle = rng.uniform(0, 2 * math.pi)
        cx = _bounded(start[0] + spec.velocity * math.cos(angle) * t, lo_x, hi_x)
        cy = _bounded(start[1] + spec.velocity * math.sin(angle) * t, lo_y, hi_y)
        return np.stack([cx, cy], axis=1)
    amp_x = (hi_x - lo_x) / 2 * rng.uniform(0.5, 1.0)
    amp_y = (hi_y - lo_y) / 2 * rng.uniform(0.3, 1.0)
    period = max(8.0, 2 * math.pi * max(amp_x, amp_y) / spec.velocity)
    phase_x, phase_y = rng.uniform(0, 2 * math.pi), rng.uniform(0, 2 * math.pi)
    cx = (lo_x + hi_x) / 2 + amp_x * np.sin(2 * math.pi * t / period + phase_x)
    cy = (lo_y + hi_y) / 2 + amp_y * np.sin(2 * math.pi * t / (period * 1.3) + phase_y)
    return np.stack([cx, cy], axis=1)


def _mask(size: int, box: FrameBox, shape: str) -> np.ndarray:
    """Pixels whose centers fall inside the object."""
    centers = np.arange(size) + 0.5
    cx, cy = box.center
    if shape == "disc":
        dx = (centers[None, :] - cx) / (box.w / 2)
        dy = (centers[:, None] - cy) / (box.h / 2)
        return dx * dx + dy * dy <= 1.0
    inside_x = (centers >= box.x) & (centers < box.x + box.w)
    inside_y = (centers >= box.y) & (centers < box.y + box.h)
    return inside_y[:, None] & inside_x[None, :]


def _rgb_background(size: int, rng: Rng, clutter: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    texture = np.zeros((size, size))
    for _ in range(6):
        fx, fy = rng.integers(1, 7), rng.integers(1, 7)
        amplitude = rng.uniform(10, 30)
        texture += amplitude * np.sin(2 * math.pi * (fx * xx + fy * yy) / size + rng.uniform(0, 6.3))
    base = np.array([rng.uniform(70, 170) for _ in range(3)])
    tint = np.array([rng.uniform(0.6, 1.0) for _ in range(3)])
    image = base[:, None, None] + tint[:, None, None] * texture[None]
    image += rng.uniform_array(-24, 24, (3, size, size))
    for _ in range(int(round(clutter * 12))):
        bw, bh = rng.uniform(3, 10), rng.uniform(3, 10)
        blob = FrameBox(rng.uniform(0, size - bw), rng.uniform(0, size - bh), bw, bh)
        colour = np.array([rng.uniform(20, 235) for _ in range(3)])
        image[:, _mask(size, blob, "rectangle")] = colour[:, None]
    return image


def _thermal_background(size: int, rng: Rng) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    field = 60 + 30 * xx / size + 12 * np.sin(2 * math.pi * yy / size + rng.uniform(0, 6.3))
    return field + rng.uniform_array(-3, 3, (size, size))


def _depth_background(size: int, rng: Rng) -> np.ndarray:
    horizon = size // 4
    rows = np.arange(size, dtype=np.float64)
    proximity = np.where(rows > horizon, 32 + 200 * (rows - horizon) / (size - horizon), 16.0)
    depth = np.tile(proximity[:, None], (1, size))
    holes = rng.random_array((size, size)) < DEPTH_HOLE_RATE
    depth[holes] = 0.0
    return depth


def _quantize_depth(depth: np.ndarray) -> np.ndarray:
    return np.floor(depth / DEPTH_STEP) * DEPTH_STEP


def _to_u8(image: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(image), 0, 255).astype(np.uint8)


def event_frames(rgb: list[np.ndarray]) -> list[np.ndarray]:
    """Per-frame signed change maps stored as 128 + 127 * e, e in {-1, 0, 1}."""
    out = []
    previous = None
    for frame in rgb:
        lum = luminance(frame)
        if previous is None:
            events = np.zeros_like(lum)
        else:
            diff = lum - previous
            events = np.where(diff > EVENT_THRESHOLD, 1.0, np.where(diff < -EVENT_THRESHOLD, -1.0, 0.0))
        out.append((EVENT_ZERO + 127 * events).astype(np.uint8)[None])
        previous = lum
    return out


def gen_sequence(spec: SceneSpec, seed: int, name: str | None = None) -> SequenceRecord:
    """Render one scene; a pure function of (spec, seed)."""
    size = spec.frame_size
    max_scale = 1.0 + spec.scale_amplitude
    base_h = spec.target_size / math.sqrt(spec.aspect)
    base_w = spec.target_size * math.sqrt(spec.aspect)
    if max(base_w, base_h) * max_scale >= size - 2:
        raise ConfigurationException(
            f"target of {base_w:.1f}x{base_h:.1f} px does not fit a {size} px frame",
            key="data.target_size",
        )
    rng = Rng.derive(seed, "scene")

    target_path = _path(spec, rng, base_w, base_h, max_scale)
    t = np.arange(spec.num_frames)
    scale = 1.0 + spec.scale_amplitude * np.sin(2 * math.pi * t / max(spec.num_frames, 1))
    distractors = []
    for _ in range(spec.distractors):
        dw, dh = base_w * rng.uniform(0.7, 1.0), base_h * rng.uniform(0.7, 1.0)
        distractors.append(_Mover(_path(spec, rng, dw, dh, 1.0), dw, dh))

    rgb_bg = _rgb_background(size, rng, spec.clutter)
    # saturated: one dominant channel
    target_colour = np.array([rng.uniform(20, 60) for _ in range(3)])
    target_colour[rng.integers(0, 3)] = rng.uniform(200, 235)
    distractor_colour = np.clip(target_colour + np.array([rng.uniform(-30, 30) for _ in range(3)]), 0, 255)
    if spec.modality == "thermal":
        x_bg = _thermal_background(size, rng)
    elif spec.modality == "depth":
        x_bg = _depth_background(size, rng)
    else:
        x_bg = np.zeros((size, size))

    rgb_frames: list[np.ndarray] = []
    x_frames: list[np.ndarray] = []
    boxes: list[FrameBox] = []
    for i in range(spec.num_frames):
        w, h = base_w * scale[i], base_h * scale[i]
        box = FrameBox.from_center(float(target_path[i, 0]), float(target_path[i, 1]), float(w), float(h))
        rgb = rgb_bg.copy()
        x = x_bg.copy()
        for mover in distractors:
            cx, cy = (float(v) for v in mover.centers[i])
            d_box = FrameBox.from_center(cx, cy, mover.w, mover.h)
            mask = _mask(size, d_box, spec.shape)
            rgb[:, mask] = distractor_colour[:, None]
            x[mask] = 150.0 if spec.modality == "thermal" else 200.0
        mask = _mask(size, box, spec.shape)
        rgb[:, mask] = target_colour[:, None]
        x[mask] = spec.intensity if spec.modality == "thermal" else 240.0
        if spec.modality == "depth":
            x = _quantize_depth(x)
        rgb_frames.append(_to_u8(rgb))
        x_frames.append(_to_u8(x)[None])
        boxes.append(box)

    if spec.modality == "event":
        x_frames = event_frames(rgb_frames)

    attributes = _derived_attributes(spec, boxes)
    record = SequenceRecord(
        name=name or f"{spec.modality}-{seed}",
        modality=spec.modality,
        rgb=rgb_frames,
        x=x_frames,
        boxes=boxes,
        visible=[1] * len(boxes),
        attributes=attributes,
    )
    logger.debug("sequence_generated", sequence=record.name, frames=record.num_frames, modality=spec.modality)
    return record


def _derived_attributes(spec: SceneSpec, boxes: list[FrameBox]) -> list[frozenset[str]]:
    cluttered = spec.clutter >= 0.5 or spec.distractors >= 2
    first = boxes[0].scale
    tags = []
    for i, box in enumerate(boxes):
        frame_tags = {"NO"}
        if cluttered:
            frame_tags.add("BC")
        if i > 0:
            (px, py), (cx, cy) = boxes[i - 1].center, box.center
            if math.hypot(cx - px, cy - py) > 0.5 * box.scale:
                frame_tags.add("FM")
        ratio = box.scale / first
        if ratio < 2.0 / 3.0 or ratio > 1.5:
            frame_tags.add("SV")
        tags.append(frozenset(frame_tags))
    return tags
