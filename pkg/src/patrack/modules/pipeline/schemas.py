"""
PATrack Pipeline - Schemas.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from patrack.config import AdaptersSection, CropSection, RunConfig
from patrack.modules.adapters.schemas import AdapterAblationFlags
from patrack.modules.head.schemas import BoundingBox
from patrack.modules.synth.schemas import FrameBox

ModelMode = Literal["pretrain_rgb", "adapter_tune"]


class CropParams(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    template_factor: float = Field(default=2.0, ge=1.0)
    search_factor: float = Field(default=4.0, ge=1.0)
    template_size: int = Field(default=32, ge=1)
    search_size: int = Field(default=64, ge=1)

    @classmethod
    def from_config(cls, config: RunConfig) -> CropParams:
        crop: CropSection = config.crop
        return cls(
            template_factor=crop.template_factor,
            search_factor=crop.search_factor,
            template_size=config.backbone.template_size,
            search_size=config.backbone.search_size,
        )


@dataclass(frozen=True)
class CropGeometry:
    """Square window [x0, x0 + side) x [y0, y0 + side) resampled to out x out pixels."""

    x0: float
    y0: float
    side: float
    out: int

    @property
    def scale(self) -> float:
        """Crop pixels per frame pixel."""
        return self.out / self.side

    def to_crop(self, box: FrameBox) -> FrameBox:
        s = self.scale
        return FrameBox((box.x - self.x0) * s, (box.y - self.y0) * s, box.w * s, box.h * s, box.confidence)

    def to_frame(self, box: FrameBox) -> FrameBox:
        s = self.side / self.out
        return FrameBox(self.x0 + box.x * s, self.y0 + box.y * s, box.w * s, box.h * s, box.confidence)

    def normalize(self, box: FrameBox) -> BoundingBox:
        """Frame box -> center form normalized to the crop."""
        c = self.to_crop(box)
        n = self.out
        return BoundingBox.from_corner(c.x / n, c.y / n, c.w / n, c.h / n, box.confidence)

    def denormalize(self, box: BoundingBox) -> FrameBox:
        x1, y1, _, _ = box.corners()
        crop = FrameBox(x1 * self.out, y1 * self.out, box.w * self.out, box.h * self.out, box.confidence)
        return self.to_frame(crop)


@dataclass
class CropPair:
    """Identical window cut from both modalities (uint8, CxHxW)."""

    rgb: np.ndarray
    x: np.ndarray
    geometry: CropGeometry


@dataclass
class TrainingSample:
    template_rgb: np.ndarray
    template_x: np.ndarray
    search_rgb: np.ndarray
    search_x: np.ndarray
    target: BoundingBox


class AdapterSpec(BaseModel):
    """Resolved adapter layout: dims, toggles, placement and structural ablations."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    mda_dim: int = 8
    cea_dim: int = 8
    ha_dim: int = 8
    cea_heads: int = 8
    use_mda: bool = True
    use_cea: bool = True
    use_ha: bool = True
    schedule: str = "paper"
    schedule_override: dict[str, str] | None = None
    ablation: AdapterAblationFlags = Field(default_factory=AdapterAblationFlags)

    @classmethod
    def from_section(cls, section: AdaptersSection) -> AdapterSpec:
        dims = section.dims
        return cls(
            mda_dim=dims["mda"],
            cea_dim=dims["cea"],
            ha_dim=dims["ha"],
            cea_heads=section.cea_heads,
            use_mda=section.use_mda,
            use_cea=section.use_cea,
            use_ha=section.use_ha,
            schedule=section.schedule,
            schedule_override=dict(section.schedule_override) if section.schedule_override else None,
            ablation=AdapterAblationFlags(**section.ablation.model_dump()),
        )
