"""
PATrack Adapters - CEA (cross-modality entangled adaptation).

Both streams are reduced to C' by a shared Down. The fused query comes from a
3x3 convolution over the channel-concatenated reduced grids; keys and values
come from the other stream. Each delta is U(H_own + CA(Q, K_other, V_other)).
"""

from __future__ import annotations

import numpy as np

from patrack.core import functional as F
from patrack.core.rng import Rng
from patrack.core.tensor import Tensor
from patrack.exceptions import ConfigurationException, UsageException
from patrack.modules.adapters.schemas import AdapterAblationFlags, CeaWeights
from patrack.modules.backbone.schemas import TokenBatch
from patrack.modules.backbone.service import (
    grid_to_tokens,
    region_bounds,
    region_grid,
    rows_to_grid,
    scaled_dot_attention,
)
from patrack.modules.parameters import param, up_param, zeros_param
from patrack.observability.probes import record


def _per_region(batch: TokenBatch, *streams: Tensor, conv: tuple[Tensor, Tensor]) -> Tensor:
    """Apply a padded 3x3 conv region by region to channel-stacked reduced tokens."""
    pieces = []
    for region in ("template", "search"):
        start, stop = region_bounds(batch, region)
        if stop == start:
            continue
        h, w = region_grid(batch, region)
        grids = [rows_to_grid(F.slice_axis(s, 0, start, stop), h, w) for s in streams]
        stacked = F.concat(grids, axis=0)
        pieces.append(grid_to_tokens(F.conv2d(stacked, conv[0], conv[1], padding=1)))
    return F.concat(pieces, axis=0)


def cea_forward(
    h_rgb: TokenBatch,
    h_x: TokenBatch,
    weights: CeaWeights,
    flags: AdapterAblationFlags | None = None,
) -> tuple[Tensor, Tensor]:
    flags = flags or AdapterAblationFlags()
    if not h_rgb.same_layout(h_x):
        raise UsageException(
            "CEA branches disagree on token layout",
            details={
                "rgb": [list(h_rgb.template_grid), list(h_rgb.search_grid)],
                "x": [list(h_x.template_grid), list(h_x.search_grid)],
            },
        )
    hat_rgb = F.linear(h_rgb.tokens, weights.down_w, weights.down_b)
    hat_x = F.linear(h_x.tokens, weights.down_w, weights.down_b)

    if flags.cea_use_conv:
        if weights.conv_q_w is None or weights.conv_k_w is None or weights.conv_v_w is None:
            raise ConfigurationException(
                "CEA conv weights missing for use_conv=true", key="adapters.ablation"
            )
        fus = _per_region(h_rgb, hat_rgb, hat_x, conv=(weights.conv_q_w, weights.conv_q_b))
        k_rgb = _per_region(h_rgb, hat_rgb, conv=(weights.conv_k_w, weights.conv_k_b))
        v_rgb = _per_region(h_rgb, hat_rgb, conv=(weights.conv_v_w, weights.conv_v_b))
        k_x = _per_region(h_rgb, hat_x, conv=(weights.conv_k_w, weights.conv_k_b))
        v_x = _per_region(h_rgb, hat_x, conv=(weights.conv_v_w, weights.conv_v_b))
    else:
        fus = F.scale(F.add(hat_rgb, hat_x), 0.5)
        k_rgb, v_rgb, k_x, v_x = hat_rgb, hat_rgb, hat_x, hat_x

    q_rgb = fus if flags.cea_fusion_guided else hat_rgb
    q_x = fus if flags.cea_fusion_guided else hat_x
    record("cea.query.rgb", q_rgb.data)
    record("cea.hat.rgb", hat_rgb.data)
    record("cea.fus", fus.data)

    attended_rgb = scaled_dot_attention(q_rgb, k_x, v_x, weights.heads, probe="cea.attention")
    attended_x = scaled_dot_attention(q_x, k_rgb, v_rgb, weights.heads, probe="cea.attention")
    if flags.cea_use_skip:
        attended_rgb = F.add(hat_rgb, attended_rgb)
        attended_x = F.add(hat_x, attended_x)
    return F.matmul(attended_rgb, weights.up_w), F.matmul(attended_x, weights.up_w)


def init_cea(
    embed_dim: int,
    reduced: int,
    rng: Rng,
    heads: int = 8,
    flags: AdapterAblationFlags | None = None,
    dtype: np.dtype | type = np.float32,
    up_std: float | None = None,
) -> CeaWeights:
    flags = flags or AdapterAblationFlags()
    if reduced % heads:
        raise ConfigurationException(
            f"CEA hidden dim {reduced} is not divisible by {heads} heads", key="adapters.cea_heads"
        )
    weights = CeaWeights(
        down_w=param(rng, (embed_dim, reduced), dtype),
        down_b=zeros_param((reduced,), dtype),
        up_w=up_param(rng, (reduced, embed_dim), dtype, up_std),
        heads=heads,
    )
    if flags.cea_use_conv:
        weights.conv_q_w = param(rng, (reduced, 2 * reduced, 3, 3), dtype)
        weights.conv_q_b = zeros_param((reduced,), dtype)
        weights.conv_k_w = param(rng, (reduced, reduced, 3, 3), dtype)
        weights.conv_k_b = zeros_param((reduced,), dtype)
        weights.conv_v_w = param(rng, (reduced, reduced, 3, 3), dtype)
        weights.conv_v_b = zeros_param((reduced,), dtype)
    return weights


def cea_param_count(embed_dim: int, reduced: int, use_conv: bool = True) -> int:
    total = embed_dim * reduced + reduced + reduced * embed_dim
    if use_conv:
        total += (reduced * 2 * reduced * 9 + reduced) + 2 * (reduced * reduced * 9 + reduced)
    return total
