"""
PATrack Evaluation - Schemas.

In-memory tracking output plus the pydantic documents emitted as JSON.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from pydantic import BaseModel, ConfigDict, Field, model_validator

from patrack.exceptions import InputException
from patrack.modules.synth.schemas import FrameBox


@dataclass
class TrackedSequence:
    """Per-frame predictions aligned with the ground truth of one sequence."""

    name: str
    modality: str
    predictions: list[FrameBox]
    ground_truth: list[FrameBox]
    visible: list[int]
    attributes: list[frozenset[str]] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.attributes:
            self.attributes = [frozenset({"NO"}) for _ in self.ground_truth]
        lengths = {len(self.predictions), len(self.ground_truth), len(self.visible), len(self.attributes)}
        if len(lengths) != 1:
            raise InputException(
                f"tracked sequence '{self.name}' has mismatched lengths",
                details={
                    "predictions": len(self.predictions),
                    "ground_truth": len(self.ground_truth),
                    "visible": len(self.visible),
                    "attributes": len(self.attributes),
                },
            )

    @property
    def num_frames(self) -> int:
        return len(self.ground_truth)


# =============================================================================
# Emitted documents
# =============================================================================


class Curve(BaseModel):
    model_config = ConfigDict(frozen=True)

    thresholds: list[float]
    values: list[float]


class MetricSummary(BaseModel):
    """Rates over a set of frames."""

    model_config = ConfigDict(frozen=True)

    frames: int = Field(ge=0)
    pr: float = Field(ge=0.0, le=1.0, description="Fraction of center errors within the PR threshold")
    sr: float = Field(ge=0.0, le=1.0, description="Success AUC")
    npr: float = Field(ge=0.0, le=1.0, description="Normalized precision AUC")
    precision: float = Field(ge=0.0, le=1.0)
    recall: float = Field(ge=0.0, le=1.0)
    f_score: float = Field(ge=0.0, le=1.0)
    f_threshold: float = Field(ge=0.0, le=1.0, description="Confidence threshold maximizing F")

    @model_validator(mode="after")
    def _harmonic(self) -> MetricSummary:
        denom = self.precision + self.recall
        expected = 2 * self.precision * self.recall / denom if denom > 0 else 0.0
        if abs(expected - self.f_score) > 1e-12:
            raise ValueError(f"f_score {self.f_score} is not the harmonic mean of Pr/Re ({expected})")
        return self


class AttributeMetrics(BaseModel):
    model_config = ConfigDict(frozen=True)

    frames: int = Field(ge=1)
    pr: float = Field(ge=0.0, le=1.0)
    sr: float = Field(ge=0.0, le=1.0)


class SequenceResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str
    modality: str
    metrics: MetricSummary


class EvalResult(BaseModel):
    """Per-sequence and pooled metrics with curves and the attribute breakdown."""

    model_config = ConfigDict(frozen=True)

    aggregate: MetricSummary
    sequences: list[SequenceResult]
    success_curve: Curve
    precision_curve: Curve
    npr_curve: Curve
    attributes: dict[str, AttributeMetrics]

    def to_document(self) -> dict:
        return self.model_dump(mode="json")
