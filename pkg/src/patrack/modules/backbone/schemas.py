"""
PATrack Backbone - Schemas.

Configuration and weight records for the shared ViT encoder.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from pydantic import BaseModel, ConfigDict, model_validator

from patrack.core.tensor import Tensor
from patrack.exceptions import ConfigurationException


class BackboneConfig(BaseModel):
    """Encoder geometry. Template and search crops are square."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    embed_dim: int = 32
    layers: int = 12
    heads: int = 4
    patch: int = 8
    template_size: int = 32
    search_size: int = 64
    mlp_ratio: int = 4
    head_channels: int = 256

    @model_validator(mode="after")
    def _check_geometry(self) -> BackboneConfig:
        for key in ("embed_dim", "layers", "heads", "patch", "template_size", "search_size", "mlp_ratio"):
            if getattr(self, key) < 1:
                raise ConfigurationException(f"backbone.{key} must be positive", key=f"backbone.{key}")
        if self.embed_dim % self.heads:
            raise ConfigurationException(
                f"embed_dim {self.embed_dim} is not divisible by heads {self.heads}", key="backbone.heads"
            )
        for region in ("template", "search"):
            size = getattr(self, f"{region}_size")
            if size % self.patch:
                raise ConfigurationException(
                    f"{region}_size {size} is not divisible by patch {self.patch}",
                    key=f"backbone.{region}_size",
                )
            if (size // self.patch) % 2:
                raise ConfigurationException(
                    f"{region} grid {size // self.patch} must be even", key=f"backbone.{region}_size"
                )
        return self

    @property
    def template_grid(self) -> tuple[int, int]:
        g = self.template_size // self.patch
        return g, g

    @property
    def search_grid(self) -> tuple[int, int]:
        g = self.search_size // self.patch
        return g, g

    @property
    def n_template(self) -> int:
        h, w = self.template_grid
        return h * w

    @property
    def n_search(self) -> int:
        h, w = self.search_grid
        return h * w

    @property
    def hidden_dim(self) -> int:
        return self.embed_dim * self.mlp_ratio


@dataclass
class TokenBatch:
    """Template tokens followed by search tokens, both in row-major grid order."""

    tokens: Tensor
    template_grid: tuple[int, int]
    search_grid: tuple[int, int]

    @property
    def n_t(self) -> int:
        return self.template_grid[0] * self.template_grid[1]

    @property
    def n_s(self) -> int:
        return self.search_grid[0] * self.search_grid[1]

    @property
    def channels(self) -> int:
        return self.tokens.shape[1]

    def with_tokens(self, tokens: Tensor) -> TokenBatch:
        return TokenBatch(tokens, self.template_grid, self.search_grid)

    def same_layout(self, other: TokenBatch) -> bool:
        return (
            self.template_grid == other.template_grid
            and self.search_grid == other.search_grid
            and self.tokens.shape == other.tokens.shape
        )


@dataclass
class EncoderLayerWeights:
    ln1_g: Tensor
    ln1_b: Tensor
    qkv_w: Tensor
    qkv_b: Tensor
    proj_w: Tensor
    proj_b: Tensor
    ln2_g: Tensor
    ln2_b: Tensor
    fc1_w: Tensor
    fc1_b: Tensor
    fc2_w: Tensor
    fc2_b: Tensor


@dataclass
class BackboneWeights:
    patch_w: Tensor
    patch_b: Tensor
    pos_template: Tensor
    pos_search: Tensor
    layers: list[EncoderLayerWeights] = field(default_factory=list)
    norm_g: Tensor | None = None
    norm_b: Tensor | None = None
