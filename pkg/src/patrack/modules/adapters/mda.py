"""
PATrack Adapters - MDA (modality-dependent adaptation).

Down-projects tokens to C', splits channels into a high-frequency half
(max-pool + FC1, FC2 + depthwise 3x3) and a low-frequency half
(avg-pool /2 then nearest upsample x2), concatenates the branch outputs and
projects back to C. Template and search grids are processed independently.

The returned delta is added to the other modality's stream by the pipeline.
"""

from __future__ import annotations

import numpy as np

from patrack.core import functional as F
from patrack.core.rng import Rng
from patrack.core.tensor import Tensor
from patrack.exceptions import ConfigurationException
from patrack.modules.adapters.schemas import AdapterAblationFlags, MdaWeights
from patrack.modules.backbone.schemas import TokenBatch
from patrack.modules.backbone.service import grid_to_tokens, region_bounds, region_grid, rows_to_grid
from patrack.modules.parameters import param, up_param, zeros_param
from patrack.observability.probes import record

BRANCH_ORDER = ("max", "dwconv", "avg")


def check_reduced_dim(reduced: int) -> None:
    if reduced < 4 or reduced % 4:
        raise ConfigurationException(
            f"MDA hidden dim {reduced} must be a positive multiple of 4", key="adapters.preset"
        )


def concat_width(reduced: int, branches: tuple[str, ...]) -> int:
    """Each enabled branch contributes C'/2 channels."""
    return len(branches) * reduced // 2


def mda_branches(grid: Tensor, weights: MdaWeights) -> dict[str, Tensor]:
    """Branch outputs for one C' x h x w region grid."""
    reduced = grid.shape[0]
    half, quarter = reduced // 2, reduced // 4
    out: dict[str, Tensor] = {}
    if "max" in weights.branches:
        hm = F.slice_axis(grid, 0, 0, quarter)
        out["max"] = F.conv2d(F.pool2d(hm, "max", 3, 1, 1), weights.fc1_w, weights.fc1_b)
    if "dwconv" in weights.branches:
        hd = F.slice_axis(grid, 0, quarter, half)
        out["dwconv"] = F.conv2d(
            F.conv2d(hd, weights.fc2_w, weights.fc2_b), weights.dw_w, weights.dw_b, padding=1, groups=half
        )
    if "avg" in weights.branches:
        low = F.slice_axis(grid, 0, half, reduced)
        out["avg"] = F.upsample_nearest2d(F.pool2d(low, "avg", 2, 2), 2)
    return out


def mda_forward(source: TokenBatch, weights: MdaWeights) -> Tensor:
    """Delta tokens ((n_t + n_s) x C) computed from `source`."""
    reduced_tokens = F.linear(source.tokens, weights.down_w, weights.down_b)
    pieces: list[Tensor] = []
    for region in ("template", "search"):
        start, stop = region_bounds(source, region)
        if stop == start:
            continue
        h, w = region_grid(source, region)
        if h % 2 or w % 2:
            raise ConfigurationException(
                f"MDA needs an even {region} grid, got {h}x{w}", key=f"backbone.{region}_size"
            )
        grid = rows_to_grid(F.slice_axis(reduced_tokens, 0, start, stop), h, w)
        branches = mda_branches(grid, weights)
        for name, value in branches.items():
            record(f"mda.{region}.{name}", value.data)
        merged = F.concat([branches[name] for name in BRANCH_ORDER if name in branches], axis=0)
        pieces.append(grid_to_tokens(merged))
    return F.matmul(F.concat(pieces, axis=0), weights.up_w)


def init_mda(
    embed_dim: int,
    reduced: int,
    rng: Rng,
    flags: AdapterAblationFlags | None = None,
    dtype: np.dtype | type = np.float32,
    up_std: float | None = None,
) -> MdaWeights:
    """U starts at zero unless up_std is given (gradient checks need a live U)."""
    flags = flags or AdapterAblationFlags()
    flags.check_mda()
    check_reduced_dim(reduced)
    branches = flags.mda_branches
    half, quarter = reduced // 2, reduced // 4
    width = concat_width(reduced, branches)
    weights = MdaWeights(
        down_w=param(rng, (embed_dim, reduced), dtype),
        down_b=zeros_param((reduced,), dtype),
        up_w=up_param(rng, (width, embed_dim), dtype, up_std),
        branches=branches,
    )
    if "max" in branches:
        weights.fc1_w = param(rng, (half, quarter, 1, 1), dtype)
        weights.fc1_b = zeros_param((half,), dtype)
    if "dwconv" in branches:
        weights.fc2_w = param(rng, (half, quarter, 1, 1), dtype)
        weights.fc2_b = zeros_param((half,), dtype)
        weights.dw_w = param(rng, (half, 1, 3, 3), dtype)
        weights.dw_b = zeros_param((half,), dtype)
    return weights


def mda_param_count(embed_dim: int, reduced: int, branches: tuple[str, ...] = BRANCH_ORDER) -> int:
    half, quarter = reduced // 2, reduced // 4
    total = embed_dim * reduced + reduced + concat_width(reduced, branches) * embed_dim
    if "max" in branches:
        total += half * quarter + half
    if "dwconv" in branches:
        total += half * quarter + half + half * 9 + half
    return total
