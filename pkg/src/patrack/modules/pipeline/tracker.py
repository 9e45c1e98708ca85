"""
PATrack Pipeline - Sequence inference.

Fixed-template offline protocol: the template pair is cut once from frame 1,
every later search window is centered on the previous prediction.
"""

from __future__ import annotations

from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from typing import Protocol

import numpy as np
import structlog

from patrack.core.tensor import no_grad
from patrack.exceptions import UsageException
from patrack.modules.evaluation.schemas import TrackedSequence
from patrack.modules.pipeline.cropping import clamp_box, crop_regions
from patrack.modules.pipeline.model import PatrackModel, forward_pair
from patrack.modules.pipeline.schemas import CropParams
from patrack.modules.synth.schemas import FrameBox, SequenceRecord

logger = structlog.get_logger(__name__)


class Tracker(Protocol):
    def init(self, rgb: np.ndarray, x: np.ndarray, box: FrameBox) -> None: ...

    def track(self, index: int, rgb: np.ndarray, x: np.ndarray) -> FrameBox: ...


class ModelTracker:
    """Runs a PatrackModel over a sequence, one search crop per frame."""

    def __init__(self, model: PatrackModel, crop: CropParams):
        self.model = model
        self.crop = crop
        self._template: tuple[np.ndarray, np.ndarray] | None = None
        self._box: FrameBox | None = None
        self._frame_shape: tuple[int, int] = (0, 0)

    def init(self, rgb: np.ndarray, x: np.ndarray, box: FrameBox) -> None:
        pair = crop_regions(rgb, x, box, self.crop.template_factor, self.crop.template_size)
        self._template = (pair.rgb, pair.x)
        self._frame_shape = (rgb.shape[1], rgb.shape[2])
        self._box = clamp_box(box, self._frame_shape)

    def track(self, index: int, rgb: np.ndarray, x: np.ndarray) -> FrameBox:
        if self._template is None or self._box is None:
            raise UsageException("track() called before init()")
        search = crop_regions(rgb, x, self._box, self.crop.search_factor, self.crop.search_size)
        with no_grad():
            pred, _ = forward_pair(self.model, *self._template, search.rgb, search.x)
        box = clamp_box(search.geometry.denormalize(pred), self._frame_shape)
        self._box = box
        return box


class OracleTracker:
    """Returns the ground truth of the sequence it was built for, confidence 1."""

    def __init__(self, record: SequenceRecord):
        self.record = record

    def init(self, rgb: np.ndarray, x: np.ndarray, box: FrameBox) -> None:
        pass

    def track(self, index: int, rgb: np.ndarray, x: np.ndarray) -> FrameBox:
        gt = self.record.boxes[index]
        return FrameBox(gt.x, gt.y, gt.w, gt.h, 1.0)


def track_sequence(tracker: Tracker, record: SequenceRecord) -> list[FrameBox]:
    """Per-frame boxes in frame coordinates; frame 1 is the initial box."""
    first = record.boxes[0]
    tracker.init(record.rgb[0], record.x[0], first)
    boxes = [FrameBox(first.x, first.y, first.w, first.h, 1.0)]
    for i in range(1, record.num_frames):
        boxes.append(tracker.track(i, record.rgb[i], record.x[i]))
    return boxes


def to_tracked(record: SequenceRecord, predictions: list[FrameBox]) -> TrackedSequence:
    return TrackedSequence(
        name=record.name,
        modality=record.modality,
        predictions=predictions,
        ground_truth=list(record.boxes),
        visible=list(record.visible),
        attributes=list(record.attributes),
    )


def track_all(
    records: Sequence[SequenceRecord],
    make_tracker: Callable[[SequenceRecord], Tracker],
    threads: int = 1,
) -> list[TrackedSequence]:
    """Track every record, results ordered by sequence name regardless of `threads`."""

    def run(record: SequenceRecord) -> TrackedSequence:
        tracked = to_tracked(record, track_sequence(make_tracker(record), record))
        logger.debug("sequence_tracked", sequence=record.name, frames=record.num_frames)
        return tracked

    ordered = sorted(records, key=lambda r: r.name)
    if threads <= 1:
        return [run(r) for r in ordered]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(run, ordered))
