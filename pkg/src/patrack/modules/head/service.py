"""
PATrack Head - Service.

Three conv stacks over the fused search grid: score (1 channel), sub-cell
offset (2) and normalized size (2), each sigmoid-activated. Training uses a
penalty-reduced focal loss on a Gaussian target plus L1 and GIoU terms at
the ground-truth center cell.
"""

from __future__ import annotations

import math

import numpy as np

from patrack.core import functional as F
from patrack.core.rng import Rng
from patrack.core.tensor import Tensor
from patrack.exceptions import UsageException
from patrack.modules.backbone.service import rows_to_grid
from patrack.modules.head.schemas import BoundingBox, HeadLoss, HeadMaps, HeadWeights, LossWeights
from patrack.modules.parameters import zeros_param

FOCAL_ALPHA = 2
FOCAL_BETA = 4
MIN_OVERLAP = 0.7
SCORE_PRIOR = -2.19  # sigmoid(-2.19) ~= 0.1


def _stack(grid: Tensor, weights: HeadWeights, branch: str) -> Tensor:
    """conv3x3 -> ReLU -> conv3x3 with the `branch` weights (score, offset or size)."""
    w1, b1, w2, b2 = (getattr(weights, f"{branch}_{part}") for part in ("w1", "b1", "w2", "b2"))
    hidden = F.relu(F.conv2d(grid, w1, b1, padding=1))
    return F.conv2d(hidden, w2, b2, padding=1)


def head_forward(search_tokens: Tensor, weights: HeadWeights, grid: tuple[int, int]) -> HeadMaps:
    h, w = grid
    if search_tokens.ndim != 2 or search_tokens.shape[0] != h * w:
        raise UsageException(
            f"head expects {h * w} search tokens for a {h}x{w} grid, got {search_tokens.shape[0]}",
            details={"grid": [h, w], "tokens": list(search_tokens.shape)},
        )
    fmap = rows_to_grid(search_tokens, h, w)
    logits = F.reshape(_stack(fmap, weights, "score"), (h, w))
    offset = F.sigmoid(_stack(fmap, weights, "offset"))
    size = F.sigmoid(_stack(fmap, weights, "size"))
    return HeadMaps(score=F.sigmoid(logits), offset=offset, size=size, score_logits=logits)


def decode_box(maps: HeadMaps) -> BoundingBox:
    """Box at the score argmax; ties go to the smallest row-major index."""
    h, w = maps.grid
    flat = int(np.argmax(maps.score.data.reshape(-1)))
    i, j = divmod(flat, w)
    offset, size = maps.offset.data, maps.size.data
    return BoundingBox(
        cx=(j + float(offset[0, i, j])) / w,
        cy=(i + float(offset[1, i, j])) / h,
        w=float(size[0, i, j]),
        h=float(size[1, i, j]),
        confidence=float(maps.score.data[i, j]),
    )


def center_cell(box: BoundingBox, grid: tuple[int, int]) -> tuple[int, int]:
    h, w = grid
    i = min(max(int(math.floor(box.cy * h)), 0), h - 1)
    j = min(max(int(math.floor(box.cx * w)), 0), w - 1)
    return i, j


def gaussian_radius(box_h: float, box_w: float, min_overlap: float = MIN_OVERLAP) -> float:
    """CenterNet radius keeping IoU >= min_overlap for corner shifts."""
    b1 = box_h + box_w
    c1 = box_w * box_h * (1 - min_overlap) / (1 + min_overlap)
    r1 = (b1 + math.sqrt(b1**2 - 4 * c1)) / 2
    b2 = 2 * (box_h + box_w)
    c2 = (1 - min_overlap) * box_w * box_h
    r2 = (b2 + math.sqrt(b2**2 - 16 * c2)) / 2
    a3 = 4 * min_overlap
    b3 = -2 * min_overlap * (box_h + box_w)
    c3 = (min_overlap - 1) * box_w * box_h
    r3 = (b3 + math.sqrt(b3**2 - 4 * a3 * c3)) / 2
    return min(r1, r2, r3)


def gaussian_target(gt: BoundingBox, grid: tuple[int, int]) -> np.ndarray:
    """Peak-1 Gaussian at the gt center cell, sigma = diameter / 6."""
    h, w = grid
    ci, cj = center_cell(gt, grid)
    radius = max(0, int(gaussian_radius(gt.h * h, gt.w * w)))
    sigma = (2 * radius + 1) / 6.0
    rows = (np.arange(h) - ci)[:, None]
    cols = (np.arange(w) - cj)[None, :]
    target = np.exp(-(rows**2 + cols**2) / (2 * sigma * sigma))
    target[ci, cj] = 1.0
    return target


def encode_box(gt: BoundingBox, grid: tuple[int, int], dtype: np.dtype | type = np.float64) -> HeadMaps:
    """Maps that decode exactly to `gt`."""
    h, w = grid
    ci, cj = center_cell(gt, grid)
    score = gaussian_target(gt, grid)
    offset = np.full((2, h, w), 0.5)
    offset[0, ci, cj] = gt.cx * w - cj
    offset[1, ci, cj] = gt.cy * h - ci
    size = np.empty((2, h, w))
    size[0], size[1] = gt.w, gt.h
    clipped = np.clip(score, 1e-6, 1 - 1e-6)
    return HeadMaps(
        score=Tensor(score.astype(dtype)),
        offset=Tensor(offset.astype(dtype)),
        size=Tensor(size.astype(dtype)),
        score_logits=Tensor(np.log(clipped / (1 - clipped)).astype(dtype)),
    )


def giou(a: BoundingBox, b: BoundingBox) -> float:
    ax1, ay1, ax2, ay2 = a.corners()
    bx1, by1, bx2, by2 = b.corners()
    inter = max(0.0, min(ax2, bx2) - max(ax1, bx1)) * max(0.0, min(ay2, by2) - max(ay1, by1))
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    enclosing = (max(ax2, bx2) - min(ax1, bx1)) * (max(ay2, by2) - min(ay1, by1))
    return inter / union - (enclosing - union) / enclosing


def giou_tensor(pred: Tensor, gt: BoundingBox) -> Tensor:
    """GIoU of a (4,) center-form prediction against a constant box; shape (1,)."""
    dtype = pred.dtype

    def const(v: float) -> Tensor:
        return Tensor(np.array([v], dtype=dtype))

    cx, cy = F.slice_axis(pred, 0, 0, 1), F.slice_axis(pred, 0, 1, 2)
    pw, ph = F.slice_axis(pred, 0, 2, 3), F.slice_axis(pred, 0, 3, 4)
    x1, x2 = F.sub(cx, F.scale(pw, 0.5)), F.add(cx, F.scale(pw, 0.5))
    y1, y2 = F.sub(cy, F.scale(ph, 0.5)), F.add(cy, F.scale(ph, 0.5))
    gx1, gy1, gx2, gy2 = (const(v) for v in gt.corners())

    iw = F.relu(F.sub(F.minimum(x2, gx2), F.maximum(x1, gx1)))
    ih = F.relu(F.sub(F.minimum(y2, gy2), F.maximum(y1, gy1)))
    inter = F.mul(iw, ih)
    union = F.sub(F.add(F.mul(pw, ph), const(gt.w * gt.h)), inter)
    ew = F.sub(F.maximum(x2, gx2), F.minimum(x1, gx1))
    eh = F.sub(F.maximum(y2, gy2), F.minimum(y1, gy1))
    enclosing = F.mul(ew, eh)
    return F.sub(F.div(inter, union), F.div(F.sub(enclosing, union), enclosing))


def focal_loss(logits: Tensor, target: np.ndarray) -> Tensor:
    dtype = logits.dtype
    pos = (target == 1.0).astype(dtype)
    neg_weight = ((1.0 - target) ** FOCAL_BETA * (1.0 - pos)).astype(dtype)
    num_pos = max(float(pos.sum()), 1.0)

    p = F.sigmoid(logits)
    one_minus_p = F.shift(F.scale(p, -1.0), 1.0)
    log_p = F.log_sigmoid(logits)
    log_one_minus_p = F.log_sigmoid(F.scale(logits, -1.0))
    pos_term = F.mul(F.mul(Tensor(pos), F.mul(one_minus_p, one_minus_p)), log_p)
    neg_term = F.mul(F.mul(Tensor(neg_weight), F.mul(p, p)), log_one_minus_p)
    return F.scale(F.sum_all(F.add(pos_term, neg_term)), -1.0 / num_pos)


def predicted_box_at(maps: HeadMaps, cell: tuple[int, int]) -> Tensor:
    """(cx, cy, w, h) read at `cell`, differentiable."""
    h, w = maps.grid
    i, j = cell
    idx = i * w + j
    dtype = maps.offset.dtype
    centers = F.div(
        F.add(F.gather(maps.offset, [idx, h * w + idx]), Tensor(np.array([j, i], dtype=dtype))),
        Tensor(np.array([w, h], dtype=dtype)),
    )
    return F.concat([centers, F.gather(maps.size, [idx, h * w + idx])], axis=0)


def head_loss(maps: HeadMaps, gt: BoundingBox, weights: LossWeights | None = None) -> HeadLoss:
    weights = weights or LossWeights()
    gt.validate()
    grid = maps.grid
    if maps.score_logits is None:
        raise UsageException("head_loss needs score logits")
    dtype = maps.score_logits.dtype

    focal = focal_loss(maps.score_logits, gaussian_target(gt, grid))
    pred = predicted_box_at(maps, center_cell(gt, grid))
    l1 = F.mean_all(F.absolute(F.sub(pred, Tensor(np.array(gt.as_vector(), dtype=dtype)))))
    giou_loss = F.sum_all(F.shift(F.scale(giou_tensor(pred, gt), -1.0), 1.0))

    total = F.add(
        F.add(F.scale(focal, weights.score), F.scale(l1, weights.l1)),
        F.scale(giou_loss, weights.giou),
    )
    return HeadLoss(
        total=total,
        components={
            "focal": focal.item(),
            "l1": l1.item(),
            "giou": giou_loss.item(),
            "total": total.item(),
        },
    )


# =============================================================================
# Initialization
# =============================================================================


def _conv(rng: Rng, c_out: int, c_in: int, dtype: np.dtype | type) -> Tensor:
    std = math.sqrt(2.0 / (c_in * 9))
    return Tensor(rng.truncated_normal_array((c_out, c_in, 3, 3), std=std).astype(dtype), requires_grad=True)


def init_head(
    embed_dim: int, channels: int, seed: int, dtype: np.dtype | type = np.float32
) -> HeadWeights:
    rng = Rng.derive(seed, "head")
    score_b2 = Tensor(np.full((1,), SCORE_PRIOR, dtype=dtype), requires_grad=True)
    return HeadWeights(
        score_w1=_conv(rng, channels, embed_dim, dtype),
        score_b1=zeros_param((channels,), dtype),
        score_w2=_conv(rng, 1, channels, dtype),
        score_b2=score_b2,
        offset_w1=_conv(rng, channels, embed_dim, dtype),
        offset_b1=zeros_param((channels,), dtype),
        offset_w2=_conv(rng, 2, channels, dtype),
        offset_b2=zeros_param((2,), dtype),
        size_w1=_conv(rng, channels, embed_dim, dtype),
        size_b1=zeros_param((channels,), dtype),
        size_w2=_conv(rng, 2, channels, dtype),
        size_b2=zeros_param((2,), dtype),
    )


def head_param_count(embed_dim: int, channels: int) -> int:
    first = embed_dim * channels * 9 + channels
    return 3 * first + sum(channels * k * 9 + k for k in (1, 2, 2))
