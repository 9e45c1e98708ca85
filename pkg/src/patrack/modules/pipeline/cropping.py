"""
PATrack Pipeline - Window cropping.

Square context window centered on a box, side = factor * sqrt(w * h),
nearest-neighbour resampled. Pixels outside the frame take the per-channel
frame mean. Both modalities are cut with the same geometry.
"""

from __future__ import annotations

import math

import numpy as np

from patrack.exceptions import InputException
from patrack.modules.pipeline.schemas import CropGeometry, CropPair
from patrack.modules.synth.schemas import FrameBox


def crop_geometry(box: FrameBox, factor: float, out_size: int) -> CropGeometry:
    cx, cy = box.center
    side = factor * math.sqrt(box.w * box.h)
    return CropGeometry(cx - side / 2.0, cy - side / 2.0, side, out_size)


def _sample_indices(origin: float, side: float, out: int) -> np.ndarray:
    """Source pixel index under each output pixel center."""
    centers = origin + (np.arange(out, dtype=np.float64) + 0.5) * (side / out)
    return np.floor(centers).astype(np.int64)


def crop_plane(image: np.ndarray, geometry: CropGeometry) -> np.ndarray:
    """CxHxW uint8 -> C x out x out uint8 with mean padding."""
    c, h, w = image.shape
    rows = _sample_indices(geometry.y0, geometry.side, geometry.out)
    cols = _sample_indices(geometry.x0, geometry.side, geometry.out)
    valid_r = (rows >= 0) & (rows < h)
    valid_c = (cols >= 0) & (cols < w)
    fill = np.rint(image.reshape(c, -1).mean(axis=1)).astype(image.dtype)
    out = np.empty((c, geometry.out, geometry.out), dtype=image.dtype)
    out[:] = fill[:, None, None]
    inside = image[:, rows[valid_r]][:, :, cols[valid_c]]
    out[:, np.flatnonzero(valid_r)[:, None], np.flatnonzero(valid_c)[None, :]] = inside
    return out


def crop_regions(rgb: np.ndarray, x: np.ndarray, box: FrameBox, factor: float, out_size: int) -> CropPair:
    _, h, w = rgb.shape
    if not (box.w > 0 and box.h > 0):
        raise InputException(f"degenerate crop box w={box.w} h={box.h}", details={"box": box.as_tuple()})
    if box.x >= w or box.y >= h or box.x + box.w <= 0 or box.y + box.h <= 0:
        raise InputException(
            "crop box lies fully outside the frame", details={"box": box.as_tuple(), "frame": [h, w]}
        )
    if x.shape[1:] != rgb.shape[1:]:
        raise InputException(
            "modalities are not spatially aligned", details={"rgb": list(rgb.shape), "x": list(x.shape)}
        )
    geometry = crop_geometry(box, factor, out_size)
    return CropPair(rgb=crop_plane(rgb, geometry), x=crop_plane(x, geometry), geometry=geometry)


def clamp_box(box: FrameBox, frame_shape: tuple[int, int], min_size: float = 2.0) -> FrameBox:
    """Keep the center inside the frame and the size within [min_size, frame]."""
    h, w = frame_shape
    cx, cy = box.center
    bw = min(max(box.w, min_size), float(w))
    bh = min(max(box.h, min_size), float(h))
    cx = min(max(cx, 0.0), float(w))
    cy = min(max(cy, 0.0), float(h))
    return FrameBox.from_center(cx, cy, bw, bh, box.confidence)
