"""
PATrack Adapters - Schemas.

Weight records, ablation flags and the layer placement schedule.
Up-projections (MDA.U, CEA.U, HA.Up) carry no bias and start at zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from pydantic import BaseModel, ConfigDict

from patrack.core.tensor import Tensor
from patrack.exceptions import ConfigurationException


class AdapterKind(str, Enum):
    MDA = "MDA"
    CEA = "CEA"


class AdapterAblationFlags(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    mda_use_avg: bool = True
    mda_use_max: bool = True
    mda_use_dwconv: bool = True
    cea_fusion_guided: bool = True
    cea_use_conv: bool = True
    cea_use_skip: bool = True

    @property
    def mda_branches(self) -> tuple[str, ...]:
        """Enabled MDA branches in concat order."""
        enabled = (("max", self.mda_use_max), ("dwconv", self.mda_use_dwconv), ("avg", self.mda_use_avg))
        return tuple(name for name, on in enabled if on)

    def check_mda(self) -> None:
        if not self.mda_branches:
            raise ConfigurationException("at least one MDA branch must be enabled", key="adapters.ablation")


@dataclass
class MdaWeights:
    """One modality-dependent adapter; disabled branches keep None weights."""

    down_w: Tensor
    down_b: Tensor
    up_w: Tensor
    fc1_w: Tensor | None = None
    fc1_b: Tensor | None = None
    fc2_w: Tensor | None = None
    fc2_b: Tensor | None = None
    dw_w: Tensor | None = None
    dw_b: Tensor | None = None
    branches: tuple[str, ...] = field(default=("max", "dwconv", "avg"), metadata={"static": True})

    @property
    def reduced_dim(self) -> int:
        return self.down_w.shape[1]


@dataclass
class CeaWeights:
    """Cross-modality entangled adapter; one instance serves both branches."""

    down_w: Tensor
    down_b: Tensor
    up_w: Tensor
    conv_q_w: Tensor | None = None
    conv_q_b: Tensor | None = None
    conv_k_w: Tensor | None = None
    conv_k_b: Tensor | None = None
    conv_v_w: Tensor | None = None
    conv_v_b: Tensor | None = None
    heads: int = field(default=8, metadata={"static": True})

    @property
    def reduced_dim(self) -> int:
        return self.down_w.shape[1]


@dataclass
class HaWeights:
    down_w: Tensor
    down_b: Tensor
    up_w: Tensor
    activation: str = field(default="gelu", metadata={"static": True})


@dataclass
class MdaLayer:
    """Four MDA instances of one layer, named by the stream they read from."""

    from_rgb_attn: MdaWeights
    from_x_attn: MdaWeights
    from_rgb_mlp: MdaWeights
    from_x_mlp: MdaWeights


@dataclass
class CeaLayer:
    attn: CeaWeights
    mlp: CeaWeights


@dataclass(frozen=True)
class PlacementSchedule:
    """1-based layer index -> adapter kind."""

    kinds: tuple[AdapterKind, ...]

    @property
    def num_layers(self) -> int:
        return len(self.kinds)

    def kind(self, layer: int) -> AdapterKind:
        return self.kinds[layer - 1]

    def layers_of(self, kind: AdapterKind) -> list[int]:
        return [i + 1 for i, k in enumerate(self.kinds) if k == kind]

    def to_dict(self) -> dict[str, str]:
        return {str(i + 1): k.value for i, k in enumerate(self.kinds)}
