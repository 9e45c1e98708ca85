"""
PATrack Head - Schemas.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from pydantic import BaseModel, ConfigDict

from patrack.core.tensor import Tensor
from patrack.exceptions import InputException


@dataclass(frozen=True)
class BoundingBox:
    """Center-form box, normalized to the search region."""

    cx: float
    cy: float
    w: float
    h: float
    confidence: float | None = None

    @classmethod
    def from_corner(
        cls, x: float, y: float, w: float, h: float, confidence: float | None = None
    ) -> BoundingBox:
        return cls(x + w / 2.0, y + h / 2.0, w, h, confidence)

    def corners(self) -> tuple[float, float, float, float]:
        """(x1, y1, x2, y2)."""
        return self.cx - self.w / 2.0, self.cy - self.h / 2.0, self.cx + self.w / 2.0, self.cy + self.h / 2.0

    def as_vector(self) -> tuple[float, float, float, float]:
        return self.cx, self.cy, self.w, self.h

    def validate(self) -> BoundingBox:
        if not (self.w > 0 and self.h > 0):
            raise InputException(f"degenerate box w={self.w} h={self.h}", details={"box": self.as_vector()})
        x1, y1, x2, y2 = self.corners()
        if x2 <= 0 or y2 <= 0 or x1 >= 1 or y1 >= 1:
            raise InputException("box does not intersect the unit square", details={"box": self.as_vector()})
        return self


@dataclass
class HeadMaps:
    score: Tensor
    offset: Tensor
    size: Tensor
    score_logits: Tensor | None = None

    @property
    def grid(self) -> tuple[int, int]:
        h, w = self.score.shape
        return h, w


@dataclass
class HeadWeights:
    score_w1: Tensor
    score_b1: Tensor
    score_w2: Tensor
    score_b2: Tensor
    offset_w1: Tensor
    offset_b1: Tensor
    offset_w2: Tensor
    offset_b2: Tensor
    size_w1: Tensor
    size_b1: Tensor
    size_w2: Tensor
    size_b2: Tensor
    trainable: bool = field(default=False, metadata={"static": True})


class LossWeights(BaseModel):
    model_config = ConfigDict(frozen=True)

    score: float = 1.0
    l1: float = 5.0
    giou: float = 2.0


@dataclass
class HeadLoss:
    total: Tensor
    components: dict[str, float]
