"""
PATrack Evaluation - Single-modality information entropy.
"""

from __future__ import annotations

from collections.abc import Iterable

import numpy as np

LUMA = (0.299, 0.587, 0.114)


def luminance(rgb: np.ndarray) -> np.ndarray:
    """Weighted sum of a 3xHxW image, float64."""
    planes = rgb.astype(np.float64)
    return LUMA[0] * planes[0] + LUMA[1] * planes[1] + LUMA[2] * planes[2]


def quantize(image: np.ndarray) -> np.ndarray:
    """256-level plane: luminance truncated for 3-channel images, the single plane otherwise."""
    if image.ndim == 3 and image.shape[0] == 3:
        return np.clip(np.floor(luminance(image)), 0, 255).astype(np.int64)
    plane = image[0] if image.ndim == 3 else image
    return np.clip(plane.astype(np.int64), 0, 255)


def image_entropy(image: np.ndarray) -> float:
    """Shannon entropy in bits of the 256-bin histogram; a constant image gives +0.0."""
    counts = np.bincount(quantize(image).reshape(-1), minlength=256).astype(np.float64)
    total = counts.sum()
    if total == 0:
        return 0.0
    p = counts[counts > 0] / total
    return float(-(p * np.log2(p)).sum()) + 0.0


def mean_entropy(frames: Iterable[np.ndarray]) -> float:
    values = [image_entropy(frame) for frame in frames]
    return float(np.mean(values)) if values else 0.0
