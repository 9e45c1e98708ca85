"""
PATrack Adapters - HA (head adaptation).

Residual bottleneck on the fused search tokens: S + Up(act(Down(S))).
"""

from __future__ import annotations

import numpy as np

from patrack.core import functional as F
from patrack.core.rng import Rng
from patrack.core.tensor import Tensor
from patrack.exceptions import ConfigurationException, DimensionException
from patrack.modules.adapters.schemas import HaWeights
from patrack.modules.parameters import param, up_param, zeros_param

_ACTIVATIONS = {"gelu": F.gelu, "relu": F.relu}


def ha_forward(search_tokens: Tensor, weights: HaWeights) -> Tensor:
    if search_tokens.ndim != 2 or search_tokens.shape[1] != weights.down_w.shape[0]:
        raise DimensionException("ha_forward", search_tokens.shape, weights.down_w.shape)
    act = _ACTIVATIONS[weights.activation]
    hidden = act(F.linear(search_tokens, weights.down_w, weights.down_b))
    return F.add(search_tokens, F.matmul(hidden, weights.up_w))


def init_ha(
    embed_dim: int,
    hidden: int,
    rng: Rng,
    activation: str = "gelu",
    dtype: np.dtype | type = np.float32,
    up_std: float | None = None,
) -> HaWeights:
    if activation not in _ACTIVATIONS:
        raise ConfigurationException(f"unknown HA activation '{activation}'", key="adapters.ha_activation")
    return HaWeights(
        down_w=param(rng, (embed_dim, hidden), dtype),
        down_b=zeros_param((hidden,), dtype),
        up_w=up_param(rng, (hidden, embed_dim), dtype, up_std),
        activation=activation,
    )


def ha_param_count(embed_dim: int, hidden: int) -> int:
    return embed_dim * hidden + hidden + hidden * embed_dim
