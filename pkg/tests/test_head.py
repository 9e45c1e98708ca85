"""Tests for the center head: forward maps, decoding, targets and loss."""

import numpy as np
import pytest

from patrack.core.tensor import GradTape, Tensor
from patrack.exceptions import InputException, UsageException
from patrack.modules.head.schemas import BoundingBox, HeadMaps
from patrack.modules.head.service import (
    center_cell,
    decode_box,
    encode_box,
    gaussian_target,
    giou,
    giou_tensor,
    head_forward,
    head_loss,
    head_param_count,
    init_head,
)
from patrack.modules.parameters import count, named_tensors

GRID = (8, 8)


class TestBoundingBox:
    def test_from_corner(self):
        box = BoundingBox.from_corner(0.1, 0.2, 0.4, 0.2)
        assert box.as_vector() == pytest.approx((0.3, 0.3, 0.4, 0.2))
        assert box.corners() == pytest.approx((0.1, 0.2, 0.5, 0.4))

    def test_degenerate(self):
        with pytest.raises(InputException):
            BoundingBox(0.5, 0.5, 0.0, 0.1).validate()

    def test_outside_unit_square(self):
        with pytest.raises(InputException):
            BoundingBox(1.5, 0.5, 0.2, 0.2).validate()


class TestHeadForward:
    def test_parameter_count(self):
        assert head_param_count(32, 256) == 233477
        assert count(init_head(16, 8, seed=0)) == head_param_count(16, 8)

    def test_map_shapes_and_ranges(self, rng):
        weights = init_head(16, 8, seed=0)
        maps = head_forward(Tensor(rng.normal_array((64, 16)).astype(np.float32)), weights, GRID)
        assert maps.score.shape == GRID
        assert maps.offset.shape == (2, *GRID)
        assert maps.size.shape == (2, *GRID)
        assert 0.0 < maps.score.data.min() and maps.score.data.max() < 1.0

    def test_token_count_must_match_grid(self, rng):
        weights = init_head(16, 8, seed=0)
        with pytest.raises(UsageException):
            head_forward(Tensor(rng.normal_array((63, 16)).astype(np.float32)), weights, GRID)

    def test_score_prior(self):
        weights = init_head(16, 8, seed=0)
        maps = head_forward(Tensor(np.zeros((64, 16), dtype=np.float32)), weights, GRID)
        np.testing.assert_allclose(maps.score.data, 0.1, atol=1e-3)


class TestDecoding:
    def test_encode_then_decode(self):
        gt = BoundingBox(0.43, 0.58, 0.27, 0.21)
        decoded = decode_box(encode_box(gt, GRID))
        assert decoded.as_vector() == pytest.approx(gt.as_vector(), abs=1e-9)
        assert decoded.confidence == pytest.approx(1.0)

    def test_ties_go_to_first_cell(self):
        maps = HeadMaps(
            score=Tensor(np.full(GRID, 0.5)),
            offset=Tensor(np.full((2, *GRID), 0.5)),
            size=Tensor(np.full((2, *GRID), 0.25)),
        )
        box = decode_box(maps)
        assert (box.cx, box.cy) == (0.5 / 8, 0.5 / 8)

    def test_center_cell_clamps(self):
        assert center_cell(BoundingBox(1.0, 1.0, 0.1, 0.1), GRID) == (7, 7)
        assert center_cell(BoundingBox(0.0, 0.3, 0.1, 0.1), GRID) == (2, 0)

    def test_gaussian_target_peak(self):
        gt = BoundingBox(0.43, 0.58, 0.27, 0.21)
        target = gaussian_target(gt, GRID)
        i, j = center_cell(gt, GRID)
        assert target[i, j] == 1.0
        assert (target == 1.0).sum() == 1
        assert target.min() >= 0.0


class TestGiou:
    def test_identical(self):
        box = BoundingBox(0.5, 0.5, 0.2, 0.3)
        assert giou(box, box) == pytest.approx(1.0)

    def test_disjoint_is_negative(self):
        assert giou(BoundingBox(0.2, 0.2, 0.1, 0.1), BoundingBox(0.8, 0.8, 0.1, 0.1)) < 0.0

    def test_tensor_form_matches(self):
        a, b = BoundingBox(0.4, 0.5, 0.2, 0.3), BoundingBox(0.45, 0.55, 0.25, 0.2)
        value = giou_tensor(Tensor(np.array(a.as_vector())), b).item()
        assert value == pytest.approx(giou(a, b), abs=1e-12)


class TestHeadLoss:
    def test_components(self):
        gt = BoundingBox(0.43, 0.58, 0.27, 0.21)
        loss = head_loss(encode_box(gt, GRID), gt)
        assert set(loss.components) == {"focal", "l1", "giou", "total"}
        assert loss.components["l1"] == pytest.approx(0.0, abs=1e-9)
        assert loss.components["giou"] == pytest.approx(0.0, abs=1e-9)

    def test_matching_maps_score_lower(self):
        gt = BoundingBox(0.43, 0.58, 0.27, 0.21)
        other = BoundingBox(0.2, 0.2, 0.1, 0.15)
        matching = head_loss(encode_box(gt, GRID), gt).total.item()
        assert matching < head_loss(encode_box(other, GRID), gt).total.item()

    def test_needs_logits(self):
        maps = encode_box(BoundingBox(0.5, 0.5, 0.2, 0.2), GRID)
        maps.score_logits = None
        with pytest.raises(UsageException):
            head_loss(maps, BoundingBox(0.5, 0.5, 0.2, 0.2))

    def test_gradients_reach_every_head_weight(self, rng):
        weights = init_head(16, 8, seed=0, dtype=np.float64)
        tokens = Tensor(rng.normal_array((64, 16)))
        with GradTape() as tape:
            loss = head_loss(head_forward(tokens, weights, GRID), BoundingBox(0.43, 0.58, 0.27, 0.21))
            tape.backward(loss.total)
        assert all(p.grad is not None for p in named_tensors(weights).values())
