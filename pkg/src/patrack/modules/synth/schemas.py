"""
PATrack Synth - Schemas.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from patrack.exceptions import InputException

ATTRIBUTES = ("NO", "PO", "TO", "LI", "HI", "TC", "FM", "SV", "BC")
MODALITIES = ("thermal", "depth", "event")


@dataclass(frozen=True)
class FrameBox:
    """Corner-form box in frame pixels (x, y, w, h)."""

    x: float
    y: float
    w: float
    h: float
    confidence: float | None = None

    @property
    def center(self) -> tuple[float, float]:
        return self.x + self.w / 2.0, self.y + self.h / 2.0

    @property
    def scale(self) -> float:
        """Geometric-mean side."""
        return math.sqrt(max(self.w, 0.0) * max(self.h, 0.0))

    def as_tuple(self) -> tuple[float, float, float, float]:
        return self.x, self.y, self.w, self.h

    @classmethod
    def from_center(
        cls, cx: float, cy: float, w: float, h: float, confidence: float | None = None
    ) -> FrameBox:
        return cls(cx - w / 2.0, cy - h / 2.0, w, h, confidence)


class SceneSpec(BaseModel):
    """One synthetic scene."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    frame_size: int = Field(default=96, ge=16)
    num_frames: int = Field(default=30, ge=1)
    shape: Literal["rectangle", "disc"] = "rectangle"
    target_size: float = Field(default=16.0, gt=0)
    aspect: float = Field(default=1.0, gt=0, description="Target width / height")
    intensity: float = Field(default=200.0, ge=0, le=255, description="Target thermal intensity")
    trajectory: Literal["sinusoidal", "linear"] = "sinusoidal"
    velocity: float = Field(default=2.0, ge=0, description="Nominal speed in px/frame")
    scale_amplitude: float = Field(default=0.0, ge=0, lt=1)
    clutter: float = Field(default=0.3, ge=0, le=1)
    distractors: int = Field(default=1, ge=0)
    modality: Literal["thermal", "depth", "event"] = "thermal"


class Degradation(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: str
    severity: float = Field(default=1.0, ge=0, le=1)
    span: tuple[int, int] | None = Field(default=None, description="Frame range [start, stop), 0-based")
    seed: int = 0


@dataclass
class SequenceRecord:
    """Paired RGB (3xHxW uint8) and X (1xHxW uint8) frames with annotations."""

    name: str
    modality: str
    rgb: list[np.ndarray]
    x: list[np.ndarray]
    boxes: list[FrameBox]
    visible: list[int]
    attributes: list[frozenset[str]] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.attributes:
            self.attributes = [frozenset({"NO"}) for _ in self.boxes]
        lengths = {len(self.rgb), len(self.x), len(self.boxes), len(self.visible), len(self.attributes)}
        if len(lengths) != 1:
            raise InputException(
                f"sequence '{self.name}' has mismatched field lengths",
                details={
                    "rgb": len(self.rgb),
                    "x": len(self.x),
                    "boxes": len(self.boxes),
                    "visible": len(self.visible),
                    "attributes": len(self.attributes),
                },
            )

    @property
    def num_frames(self) -> int:
        return len(self.boxes)

    @property
    def frame_shape(self) -> tuple[int, int]:
        _, h, w = self.rgb[0].shape
        return h, w

    def evolve(self, **changes: object) -> SequenceRecord:
        return replace(self, **changes)  # type: ignore[arg-type]
