"""
PATrack Backbone - Service.

Patch embedding, the pre-LN transformer layer and token/grid reshaping.
Both modality streams run through the same BackboneWeights.
"""

from __future__ import annotations

import math
from typing import Literal, Protocol

import numpy as np

from patrack.core import functional as F
from patrack.core.rng import Rng
from patrack.core.tensor import Tensor
from patrack.exceptions import ConfigurationException, UsageException
from patrack.modules.backbone.schemas import BackboneConfig, BackboneWeights, EncoderLayerWeights, TokenBatch
from patrack.modules.parameters import ones_param, param, zeros_param
from patrack.observability.probes import record

Region = Literal["template", "search"]


class LayerHook(Protocol):
    """Adapter deltas for one encoder layer; None means no delta."""

    def attn(self, h: TokenBatch) -> Tensor | None: ...

    def mlp(self, h_prime: TokenBatch) -> Tensor | None: ...


# =============================================================================
# Embedding
# =============================================================================


def patch_embed(image: Tensor, patch_w: Tensor, patch_b: Tensor, pos_table: Tensor) -> Tensor:
    """3xHxW image -> (H/P * W/P) x C tokens, row-major, positional table added."""
    patch = patch_w.shape[-1]
    if image.ndim != 3 or image.shape[1] % patch or image.shape[2] % patch:
        raise ConfigurationException(
            f"image extents {image.shape[1:]} are not divisible by patch {patch}", key="backbone.patch"
        )
    grid = F.conv2d(image, patch_w, patch_b, stride=patch)
    c, h, w = grid.shape
    if pos_table.shape != (h * w, c):
        raise ConfigurationException(
            f"positional table {pos_table.shape} does not fit a {h}x{w} grid of {c} channels",
            key="backbone.template_size",
        )
    return F.add(F.transpose(F.reshape(grid, (c, h * w)), (1, 0)), pos_table)


def embed_pair(template: Tensor, search: Tensor, weights: BackboneWeights) -> TokenBatch:
    patch = weights.patch_w.shape[-1]
    t_tokens = patch_embed(template, weights.patch_w, weights.patch_b, weights.pos_template)
    s_tokens = patch_embed(search, weights.patch_w, weights.patch_b, weights.pos_search)
    return TokenBatch(
        join_regions(t_tokens, s_tokens),
        template_grid=(template.shape[1] // patch, template.shape[2] // patch),
        search_grid=(search.shape[1] // patch, search.shape[2] // patch),
    )


# =============================================================================
# Encoder layer
# =============================================================================


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor, heads: int, probe: str | None = None) -> Tensor:
    """Multi-head attention of n queries over m keys; q,k,v are (tokens x D)."""
    n, dim = q.shape
    m = k.shape[0]
    if dim % heads:
        raise ConfigurationException(f"attention width {dim} is not divisible by {heads} heads", key="heads")
    hd = dim // heads
    qh = F.transpose(F.reshape(q, (n, heads, hd)), (1, 0, 2))
    kt = F.transpose(F.reshape(k, (m, heads, hd)), (1, 2, 0))
    vh = F.transpose(F.reshape(v, (m, heads, hd)), (1, 0, 2))
    attn = F.softmax(F.scale(F.matmul(qh, kt), 1.0 / math.sqrt(hd)), axis=-1)
    if probe:
        record(probe, attn.data)
    out = F.matmul(attn, vh)
    return F.reshape(F.transpose(out, (1, 0, 2)), (n, dim))


def self_attention(x: Tensor, weights: EncoderLayerWeights, heads: int) -> Tensor:
    c = x.shape[1]
    qkv = F.linear(x, weights.qkv_w, weights.qkv_b)
    q = F.slice_axis(qkv, 1, 0, c)
    k = F.slice_axis(qkv, 1, c, 2 * c)
    v = F.slice_axis(qkv, 1, 2 * c, 3 * c)
    out = scaled_dot_attention(q, k, v, heads, probe="backbone.attention")
    return F.linear(out, weights.proj_w, weights.proj_b)


def attention_residual(h: Tensor, weights: EncoderLayerWeights, heads: int) -> Tensor:
    """H + MSA(LN(H))."""
    return F.add(h, self_attention(F.layer_norm(h, weights.ln1_g, weights.ln1_b), weights, heads))


def mlp_residual(h: Tensor, weights: EncoderLayerWeights) -> Tensor:
    """H' + MLP(LN(H'))."""
    x = F.layer_norm(h, weights.ln2_g, weights.ln2_b)
    x = F.linear(F.gelu(F.linear(x, weights.fc1_w, weights.fc1_b)), weights.fc2_w, weights.fc2_b)
    return F.add(h, x)


def attention_stage(
    batch: TokenBatch, weights: EncoderLayerWeights, heads: int, hook: LayerHook | None = None
) -> TokenBatch:
    """H' = H + MSA(LN(H)) plus the hook's attention delta."""
    h_prime = attention_residual(batch.tokens, weights, heads)
    delta = hook.attn(batch) if hook is not None else None
    return batch.with_tokens(h_prime if delta is None else F.add(h_prime, delta))


def mlp_stage(mid: TokenBatch, weights: EncoderLayerWeights, hook: LayerHook | None = None) -> TokenBatch:
    out = mlp_residual(mid.tokens, weights)
    delta = hook.mlp(mid) if hook is not None else None
    return mid.with_tokens(out if delta is None else F.add(out, delta))


def encoder_layer(
    batch: TokenBatch, weights: EncoderLayerWeights, heads: int, hook: LayerHook | None = None
) -> TokenBatch:
    return mlp_stage(attention_stage(batch, weights, heads, hook), weights, hook)


def final_norm(batch: TokenBatch, weights: BackboneWeights) -> TokenBatch:
    if weights.norm_g is None or weights.norm_b is None:
        return batch
    return batch.with_tokens(F.layer_norm(batch.tokens, weights.norm_g, weights.norm_b))


def encode(batch: TokenBatch, weights: BackboneWeights, config: BackboneConfig) -> TokenBatch:
    """Single-stream pass through every layer plus the final norm."""
    for layer in weights.layers:
        batch = encoder_layer(batch, layer, config.heads)
    return final_norm(batch, weights)


# =============================================================================
# Token / grid utilities
# =============================================================================


def region_bounds(batch: TokenBatch, region: Region) -> tuple[int, int]:
    if region == "template":
        return 0, batch.n_t
    if region == "search":
        return batch.n_t, batch.n_t + batch.n_s
    raise UsageException(f"unknown region '{region}'")


def region_grid(batch: TokenBatch, region: Region) -> tuple[int, int]:
    return batch.template_grid if region == "template" else batch.search_grid


def tokens_to_grid(batch: TokenBatch, region: Region) -> Tensor:
    """Region tokens (n x C) -> C x h x w."""
    start, stop = region_bounds(batch, region)
    h, w = region_grid(batch, region)
    rows = F.slice_axis(batch.tokens, 0, start, stop)
    return rows_to_grid(rows, h, w)


def rows_to_grid(rows: Tensor, h: int, w: int) -> Tensor:
    c = rows.shape[1]
    return F.reshape(F.transpose(rows, (1, 0)), (c, h, w))


def grid_to_tokens(grid: Tensor) -> Tensor:
    """C x h x w -> (h*w) x C; inverse of rows_to_grid."""
    c, h, w = grid.shape
    return F.transpose(F.reshape(grid, (c, h * w)), (1, 0))


def split_search(batch: TokenBatch) -> Tensor:
    start, stop = region_bounds(batch, "search")
    return F.slice_axis(batch.tokens, 0, start, stop)


def split_template(batch: TokenBatch) -> Tensor:
    start, stop = region_bounds(batch, "template")
    return F.slice_axis(batch.tokens, 0, start, stop)


def join_regions(template_tokens: Tensor, search_tokens: Tensor) -> Tensor:
    return F.concat([template_tokens, search_tokens], axis=0)


# =============================================================================
# Initialization and accounting
# =============================================================================


def init_layer(config: BackboneConfig, rng: Rng, dtype: np.dtype | type) -> EncoderLayerWeights:
    c, hidden = config.embed_dim, config.hidden_dim
    return EncoderLayerWeights(
        ln1_g=ones_param((c,), dtype),
        ln1_b=zeros_param((c,), dtype),
        qkv_w=param(rng, (c, 3 * c), dtype),
        qkv_b=zeros_param((3 * c,), dtype),
        proj_w=param(rng, (c, c), dtype),
        proj_b=zeros_param((c,), dtype),
        ln2_g=ones_param((c,), dtype),
        ln2_b=zeros_param((c,), dtype),
        fc1_w=param(rng, (c, hidden), dtype),
        fc1_b=zeros_param((hidden,), dtype),
        fc2_w=param(rng, (hidden, c), dtype),
        fc2_b=zeros_param((c,), dtype),
    )


def init_backbone(config: BackboneConfig, seed: int, dtype: np.dtype | type = np.float32) -> BackboneWeights:
    rng = Rng.derive(seed, "backbone")
    c, p = config.embed_dim, config.patch
    return BackboneWeights(
        patch_w=param(rng, (c, 3, p, p), dtype),
        patch_b=zeros_param((c,), dtype),
        pos_template=param(rng, (config.n_template, c), dtype),
        pos_search=param(rng, (config.n_search, c), dtype),
        layers=[init_layer(config, rng, dtype) for _ in range(config.layers)],
        norm_g=ones_param((c,), dtype),
        norm_b=zeros_param((c,), dtype),
    )


def layer_param_count(config: BackboneConfig) -> int:
    c, hidden = config.embed_dim, config.hidden_dim
    return 4 * c + (3 * c * c + 3 * c) + (c * c + c) + (c * hidden + hidden) + (hidden * c + c)


def backbone_param_count(config: BackboneConfig) -> int:
    c, p = config.embed_dim, config.patch
    embed = c * 3 * p * p + c + (config.n_template + config.n_search) * c
    return embed + config.layers * layer_param_count(config) + 2 * c
