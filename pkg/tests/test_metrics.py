"""Tests for the evaluation metrics, checked against brute-force counting."""

import math

import numpy as np
import pytest

from patrack.config import EvalSection
from patrack.core.rng import Rng
from patrack.exceptions import InputException, UndefinedResultException
from patrack.modules.evaluation.entropy import image_entropy, mean_entropy
from patrack.modules.evaluation.metrics import (
    attribute_breakdown,
    center_errors,
    evaluate_sequences,
    iou,
    normalized_precision,
    overlaps,
    pr_re_f,
    precision_rate,
    success_rate,
)
from patrack.modules.evaluation.schemas import TrackedSequence
from patrack.modules.synth.render import gen_sequence
from patrack.modules.synth.schemas import FrameBox, SceneSpec


def random_boxes(rng: Rng, n: int, confidence: bool = False) -> list[FrameBox]:
    xy = rng.uniform_array(0.0, 80.0, (n, 2))
    wh = rng.uniform_array(2.0, 30.0, (n, 2))
    conf = rng.random_array(n)
    return [
        FrameBox(*xy[i], *wh[i], confidence=float(conf[i]) if confidence else None) for i in range(n)
    ]


def brute_iou(a: FrameBox, b: FrameBox) -> float:
    iw = max(0.0, min(a.x + a.w, b.x + b.w) - max(a.x, b.x))
    ih = max(0.0, min(a.y + a.h, b.y + b.h) - max(a.y, b.y))
    inter = iw * ih
    return inter / (a.w * a.h + b.w * b.h - inter)


def brute_pr_re_f(pred, gt, visible, samples=101):
    best = (0.0, 0.0, 0.0)
    for k in range(samples):
        theta = k / (samples - 1)
        reported = [i for i, p in enumerate(pred) if p.confidence >= theta]
        scores = [brute_iou(pred[i], gt[i]) if visible[i] else 0.0 for i in range(len(pred))]
        pr = sum(scores[i] for i in reported) / len(reported) if reported else 0.0
        n_visible = sum(visible)
        re = sum(scores[i] for i in reported) / n_visible if n_visible else 0.0
        f = 2 * pr * re / (pr + re) if pr + re > 0 else 0.0
        if f > best[2]:
            best = (pr, re, f)
    return best


class TestOverlap:
    def test_identical(self):
        assert iou((1, 2, 3, 4), (1, 2, 3, 4)) == 1.0

    def test_disjoint(self):
        assert iou((0, 0, 1, 1), (5, 5, 1, 1)) == 0.0

    def test_hand_computed(self):
        assert iou((0, 0, 2, 2), (1, 1, 2, 2)) == pytest.approx(1 / 7)

    def test_matches_brute_force(self, rng):
        pred, gt = random_boxes(rng, 1000), random_boxes(rng, 1000)
        expected = [brute_iou(p, g) for p, g in zip(pred, gt, strict=True)]
        np.testing.assert_allclose(overlaps(pred, gt), expected, rtol=0, atol=1e-12)


class TestPrecision:
    def test_half(self):
        assert precision_rate([5, 25], 20) == 0.5

    def test_all_zero(self):
        assert precision_rate([0, 0, 0]) == 1.0

    def test_inclusive_threshold(self):
        assert precision_rate([20.0]) == 1.0

    def test_empty(self):
        with pytest.raises(UndefinedResultException):
            precision_rate([])

    def test_matches_brute_force(self, rng):
        errors = rng.uniform_array(0.0, 60.0, 1000)
        expected = sum(1 for e in errors if e <= 20.0) / 1000
        assert precision_rate(errors) == expected

    def test_order_invariant(self, rng):
        errors = rng.uniform_array(0.0, 60.0, 200)
        perm = Rng(3).permutation(200)
        assert precision_rate(errors) == precision_rate(errors[perm])


class TestSuccess:
    def test_all_perfect(self):
        assert success_rate([1.0, 1.0]).score == 1.0

    def test_all_zero(self):
        assert success_rate([0.0, 0.0, 0.0]).score == pytest.approx(1 / 21)

    def test_curve_grid(self):
        curve = success_rate([0.5])
        assert len(curve.thresholds) == 21
        assert curve.thresholds[1] == pytest.approx(0.05)

    def test_empty(self):
        with pytest.raises(UndefinedResultException):
            success_rate([])

    def test_matches_brute_force(self, rng):
        ious = rng.random_array(1000)
        total = 0.0
        for k in range(21):
            t = k * 1.0 / 20
            total += sum(1 for v in ious if v >= t) / 1000
        assert success_rate(ious).score == pytest.approx(total / 21, abs=1e-12)

    def test_monotone(self, rng):
        ious = rng.random_array(50)
        better = ious.copy()
        better[7] = min(1.0, better[7] + 0.3)
        assert success_rate(better).score >= success_rate(ious).score


class TestNormalizedPrecision:
    def test_perfect(self, rng):
        boxes = random_boxes(rng, 20)
        assert normalized_precision(boxes, boxes).score == 1.0

    def test_constant_quarter_error(self):
        gt = [FrameBox(0, 0, 4, 4)] * 10
        pred = [FrameBox(1, 0, 4, 4)] * 10
        assert normalized_precision(pred, gt).score == pytest.approx(51 / 101)

    def test_scale_invariant(self, rng):
        pred, gt = random_boxes(rng, 100), random_boxes(rng, 100)
        scale = lambda boxes: [FrameBox(b.x * 3, b.y * 3, b.w * 3, b.h * 3) for b in boxes]  # noqa: E731
        assert normalized_precision(scale(pred), scale(gt)).score == pytest.approx(
            normalized_precision(pred, gt).score
        )

    def test_degenerate_ground_truth(self):
        with pytest.raises(InputException):
            normalized_precision([FrameBox(0, 0, 1, 1)], [FrameBox(0, 0, 0, 1)])


class TestPrReF:
    def test_perfect(self, rng):
        gt = random_boxes(rng, 10)
        pred = [FrameBox(*g.as_tuple(), confidence=1.0) for g in gt]
        result = pr_re_f(pred, gt, [1] * 10)
        assert (result.precision, result.recall, result.f_score) == (1.0, 1.0, 1.0)

    def test_equal_precision_and_recall(self):
        gt = [FrameBox(0, 0, 10, 10)] * 5
        pred = [FrameBox(0, 0, 10, 10, 1.0)] * 3 + [FrameBox(50, 50, 10, 10, 1.0)] * 2
        result = pr_re_f(pred, gt, [1] * 5)
        assert result.precision == pytest.approx(0.6)
        assert result.recall == pytest.approx(0.6)
        assert result.f_score == pytest.approx(0.6)

    def test_hand_crafted_with_invisible_frames(self):
        gt = [FrameBox(10 * i, 0, 10, 10) for i in range(10)]
        shifts = [0, 2, 5, 0, 8, 1, 0, 3, 0, 6]
        confidences = [0.9, 0.8, 0.3, 0.95, 0.2, 0.7, 0.4, 0.6, 0.85, 0.1]
        pred = [
            FrameBox(g.x + s, g.y, g.w, g.h, c) for g, s, c in zip(gt, shifts, confidences, strict=True)
        ]
        visible = [1, 1, 1, 0, 1, 1, 1, 1, 0, 1]
        result = pr_re_f(pred, gt, visible)
        pr, re, f = brute_pr_re_f(pred, gt, visible)
        assert result.precision == pytest.approx(pr, abs=1e-12)
        assert result.recall == pytest.approx(re, abs=1e-12)
        assert result.f_score == pytest.approx(f, abs=1e-12)

    def test_reported_f_is_the_maximum(self, rng):
        gt = random_boxes(rng, 200)
        confidences = rng.random_array(200)
        pred = [FrameBox(g.x + 3, g.y - 2, g.w, g.h, float(c)) for g, c in zip(gt, confidences, strict=True)]
        visible = [int(v > 0.2) for v in rng.random_array(200)]
        result = pr_re_f(pred, gt, visible)
        assert result.f_score >= result.sweep[:, 3].max() - 1e-15

    def test_random_instance_matches_brute_force(self, rng):
        gt = random_boxes(rng, 1000)
        pred = random_boxes(rng, 1000, confidence=True)
        visible = [int(v > 0.1) for v in rng.random_array(1000)]
        result = pr_re_f(pred, gt, visible)
        _, _, f = brute_pr_re_f(pred, gt, visible)
        assert result.f_score == pytest.approx(f, abs=1e-9)

    def test_empty(self):
        with pytest.raises(UndefinedResultException):
            pr_re_f([], [], [])


class TestAttributes:
    def test_single_attribute_matches_global(self, rng):
        pred, gt = random_boxes(rng, 50), random_boxes(rng, 50)
        breakdown = attribute_breakdown(pred, gt, [frozenset({"LI"})] * 50)
        assert list(breakdown) == ["LI"]
        assert breakdown["LI"].frames == 50
        assert breakdown["LI"].pr == precision_rate(center_errors(pred, gt))
        assert breakdown["LI"].sr == success_rate(overlaps(pred, gt)).score

    def test_disjoint_partitions(self, rng):
        pred, gt = random_boxes(rng, 30), random_boxes(rng, 30)
        tags = [frozenset({"PO"}) if i % 3 else frozenset({"TO"}) for i in range(30)]
        breakdown = attribute_breakdown(pred, gt, tags)
        assert breakdown["PO"].frames + breakdown["TO"].frames == 30
        assert "NO" not in breakdown

    def test_manual_split(self):
        gt = [FrameBox(0, 0, 10, 10)] * 4
        pred = [FrameBox(x, 0, 10, 10) for x in (0, 30, 0, 5)]
        tags = [frozenset({"LI"}), frozenset({"LI"}), frozenset({"FM"}), frozenset({"FM", "LI"})]
        breakdown = attribute_breakdown(pred, gt, tags)
        assert breakdown["LI"].frames == 3
        assert breakdown["LI"].pr == pytest.approx(2 / 3)
        assert breakdown["FM"].pr == 1.0


class TestEntropy:
    def test_constant(self):
        value = image_entropy(np.full((1, 8, 8), 17, np.uint8))
        assert value == 0.0
        assert math.copysign(1.0, value) == 1.0

    def test_two_values(self):
        image = np.zeros((1, 4, 4), np.uint8)
        image[0, :2] = 255
        assert image_entropy(image) == pytest.approx(1.0)

    def test_uniform(self):
        image = np.arange(256, dtype=np.uint8).reshape(1, 16, 16)
        assert image_entropy(image) == pytest.approx(8.0)

    def test_rgb_uses_luminance(self):
        image = np.zeros((3, 2, 2), np.uint8)
        image[:, 0, 0] = 100
        assert image_entropy(image) == pytest.approx(image_entropy(np.array([[[100, 0], [0, 0]]], np.uint8)))

    def test_modality_ordering(self):
        values = {}
        for modality in ("thermal", "depth", "event"):
            spec = SceneSpec(frame_size=64, num_frames=4, target_size=12, velocity=2.5, modality=modality)
            record = gen_sequence(spec, seed=5)
            values.setdefault("rgb", mean_entropy(record.rgb))
            values[modality] = mean_entropy(record.x)
        assert values["rgb"] > values["thermal"] > values["depth"] > values["event"]


class TestEvaluateSequences:
    def tracked(self, sequence, predictions=None) -> TrackedSequence:
        boxes = predictions or [FrameBox(*b.as_tuple(), confidence=1.0) for b in sequence.boxes]
        return TrackedSequence(
            name=sequence.name,
            modality=sequence.modality,
            predictions=boxes,
            ground_truth=list(sequence.boxes),
            visible=list(sequence.visible),
            attributes=list(sequence.attributes),
        )

    def test_perfect_tracking(self, sequence):
        result = evaluate_sequences([self.tracked(sequence)])
        agg = result.aggregate
        assert (agg.pr, agg.sr, agg.npr, agg.f_score) == (1.0, 1.0, 1.0, 1.0)
        assert result.sequences[0].name == sequence.name
        assert len(result.precision_curve.values) == 51

    def test_sequences_sorted_and_pooled(self, sequence):
        a = self.tracked(sequence.evolve(name="b"))
        b = self.tracked(sequence.evolve(name="a"))
        result = evaluate_sequences([a, b], EvalSection())
        assert [s.name for s in result.sequences] == ["a", "b"]
        assert result.aggregate.frames == 2 * sequence.num_frames

    def test_empty(self):
        with pytest.raises(UndefinedResultException):
            evaluate_sequences([])

    def test_length_mismatch(self, sequence):
        with pytest.raises(InputException):
            TrackedSequence(
                "s", "thermal", [FrameBox(0, 0, 1, 1)], list(sequence.boxes), list(sequence.visible)
            )
