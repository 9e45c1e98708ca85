"""Tests for the tensor engine: operations, reverse mode, finite differences, PRNG and AdamW."""

import numpy as np
import pytest

from patrack.core import functional as F
from patrack.core.gradcheck import (
    check_gradients,
    finite_diff_gradient,
    relative_error,
    sample_coordinates,
)
from patrack.core.optim import AdamW, ExponentialDecay, OptimizerState, adamw_step
from patrack.core.rng import Rng
from patrack.core.tensor import GradTape, Tensor, no_grad
from patrack.exceptions import DimensionException, NumericFailureException, UsageException


def max_grad_error(f, x: Tensor) -> float:
    """Largest relative error between the tape gradient of f at x and central differences."""
    x.zero_grad()
    with GradTape() as tape:
        tape.backward(f(x))
    numeric = finite_diff_gradient(f, x).data
    return float(relative_error(x.grad, numeric, floor=1e-8).max())


def leaf(rng: Rng, shape, std: float = 1.0) -> Tensor:
    return Tensor(rng.normal_array(shape, std=std), requires_grad=True)


class TestOperations:
    """Forward semantics."""

    def test_matmul_values(self):
        a = Tensor([[1.0, 2.0], [3.0, 4.0]])
        b = Tensor([[5.0], [6.0]])
        np.testing.assert_array_equal(F.matmul(a, b).data, [[17.0], [39.0]])

    def test_matmul_shape_mismatch(self):
        with pytest.raises(DimensionException) as exc:
            F.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
        assert exc.value.code == "DIMENSION_MISMATCH"
        assert "(2, 3)" in exc.value.message

    def test_no_broadcasting(self):
        with pytest.raises(DimensionException):
            F.add(Tensor(np.ones((2, 2))), Tensor(np.ones(2)))

    def test_dtype_mismatch_rejected(self):
        with pytest.raises(DimensionException):
            F.add(Tensor(np.ones(2, dtype=np.float32)), Tensor(np.ones(2, dtype=np.float64)))

    def test_softmax_rows_sum_to_one(self, rng):
        x = Tensor(rng.normal_array((5, 7), std=10.0))
        np.testing.assert_allclose(F.softmax(x, axis=-1).data.sum(axis=-1), 1.0, atol=1e-6)

    def test_softmax_bad_axis(self):
        with pytest.raises(UsageException):
            F.softmax(Tensor(np.ones((2, 2))), axis=2)

    def test_layer_norm_normalizes_rows(self, rng):
        x = Tensor(rng.normal_array((4, 8), std=3.0) + 5.0)
        y = F.layer_norm(x, Tensor(np.ones(8)), Tensor(np.zeros(8))).data
        np.testing.assert_allclose(y.mean(axis=1), 0.0, atol=1e-10)
        np.testing.assert_allclose(y.std(axis=1), 1.0, atol=1e-4)

    def test_upsample_example(self):
        x = Tensor(np.array([[[1.0, 2.0], [3.0, 4.0]]]))
        expected = [[[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]]]
        np.testing.assert_array_equal(F.upsample_nearest2d(x, 2).data, expected)

    def test_upsample_factor_one_is_identity(self, rng):
        x = Tensor(rng.normal_array((2, 3, 3)))
        np.testing.assert_array_equal(F.upsample_nearest2d(x, 1).data, x.data)

    def test_avg_pool_then_upsample_keeps_block_constant_maps(self, rng):
        blocks = rng.normal_array((3, 2, 2))
        x = Tensor(np.repeat(np.repeat(blocks, 2, axis=1), 2, axis=2))
        y = F.upsample_nearest2d(F.pool2d(x, "avg", 2, 2), 2)
        np.testing.assert_allclose(y.data, x.data, atol=1e-12)

    def test_depthwise_conv_keeps_channels_apart(self):
        x = Tensor(np.stack([np.ones((3, 3)), 2 * np.ones((3, 3))]))
        w = Tensor(np.ones((2, 1, 3, 3)))
        y = F.conv2d(x, w, padding=1, groups=2).data
        assert y[0, 1, 1] == 9.0
        assert y[1, 1, 1] == 18.0
        assert y[0, 0, 0] == 4.0

    def test_conv_is_cross_correlation(self):
        x = Tensor(np.arange(9.0).reshape(1, 3, 3))
        w = np.zeros((1, 1, 3, 3))
        w[0, 0, 0, 0] = 1.0
        assert F.conv2d(x, Tensor(w)).data[0, 0, 0] == 0.0
        w = np.zeros((1, 1, 3, 3))
        w[0, 0, 2, 2] = 1.0
        assert F.conv2d(x, Tensor(w)).data[0, 0, 0] == 8.0

    def test_operations_are_deterministic(self, rng):
        x = Tensor(rng.normal_array((6, 6)))
        w = Tensor(rng.normal_array((6, 6)))
        first = F.softmax(F.gelu(F.matmul(x, w))).data
        second = F.softmax(F.gelu(F.matmul(x, w))).data
        assert first.tobytes() == second.tobytes()


class TestBackward:
    """Reverse-mode gradients."""

    def test_square_sum(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with GradTape() as tape:
            tape.backward(F.sum_all(F.mul(x, x)))
        np.testing.assert_array_equal(x.grad, [2.0, 4.0])

    def test_matmul_gradient_pattern(self):
        a = Tensor([[1.0, 2.0], [3.0, 4.0]], requires_grad=True)
        b = Tensor([[5.0, 6.0], [7.0, 8.0]])
        with GradTape() as tape:
            tape.backward(F.sum_all(F.matmul(a, b)))
        np.testing.assert_array_equal(a.grad, np.ones((2, 2)) @ b.data.T)

    def test_non_scalar_loss(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with GradTape() as tape, pytest.raises(UsageException):
            tape.backward(F.scale(x, 2.0))

    def test_constant_gets_no_gradient(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        c = Tensor([3.0, 4.0])
        with GradTape() as tape:
            tape.backward(F.sum_all(F.mul(x, c)))
        assert c.grad is None
        np.testing.assert_array_equal(x.grad, [3.0, 4.0])

    def test_gradients_accumulate(self):
        x = Tensor([1.0], requires_grad=True)
        for _ in range(2):
            with GradTape() as tape:
                tape.backward(F.sum_all(F.scale(x, 3.0)))
        np.testing.assert_array_equal(x.grad, [6.0])

    def test_tape_cleared_after_backward(self):
        x = Tensor([1.0], requires_grad=True)
        with GradTape() as tape:
            tape.backward(F.sum_all(F.scale(x, 3.0)))
            assert len(tape) == 0

    def test_tape_cleared_after_leaf_loss(self):
        x = Tensor([1.0], requires_grad=True)
        with GradTape() as tape:
            F.scale(x, 2.0)
            assert len(tape) == 1
            tape.backward(x)
            assert len(tape) == 0
        np.testing.assert_array_equal(x.grad, [1.0])

    def test_no_grad_records_nothing(self):
        x = Tensor([1.0], requires_grad=True)
        with GradTape() as tape:
            with no_grad():
                F.scale(x, 2.0)
            assert len(tape) == 0

    def test_matmul_matches_finite_differences(self, rng):
        b = Tensor(rng.normal_array((4, 2)))
        a = leaf(rng, (3, 4))
        assert max_grad_error(lambda t: F.sum_all(F.matmul(t, b)), a) < 1e-6

    def test_gelu_matches_finite_differences(self):
        x = Tensor([-1.0, 0.5, 2.0], requires_grad=True)
        assert max_grad_error(lambda t: F.sum_all(F.gelu(t)), x) < 1e-6

    def test_layer_norm_matches_finite_differences(self, rng):
        x = leaf(rng, (4, 8))
        gamma = Tensor(rng.normal_array(8))
        beta = Tensor(rng.normal_array(8))
        proj = Tensor(rng.normal_array((4, 8)))
        f = lambda t: F.sum_all(F.mul(F.layer_norm(t, gamma, beta), proj))  # noqa: E731
        assert max_grad_error(f, x) < 1e-5

    def test_softmax_matches_finite_differences(self, rng):
        x = leaf(rng, (3, 5))
        proj = Tensor(rng.normal_array((3, 5)))
        assert max_grad_error(lambda t: F.sum_all(F.mul(F.softmax(t), proj)), x) < 1e-5

    @pytest.mark.parametrize("kind", ["max", "avg"])
    def test_pooling_matches_finite_differences(self, rng, kind):
        x = leaf(rng, (2, 4, 4))
        proj = Tensor(rng.normal_array((2, 4, 4)))
        f = lambda t: F.sum_all(F.mul(F.pool2d(t, kind, 3, 1, 1), proj))  # noqa: E731
        assert max_grad_error(f, x) < 1e-5

    def test_grouped_conv_matches_finite_differences(self, rng):
        x = Tensor(rng.normal_array((4, 5, 5)))
        w = leaf(rng, (4, 2, 3, 3))
        b = Tensor(rng.normal_array(4))
        proj = Tensor(rng.normal_array((4, 5, 5)))
        f = lambda t: F.sum_all(F.mul(F.conv2d(x, t, b, padding=1, groups=2), proj))  # noqa: E731
        assert max_grad_error(f, w) < 1e-5

    def test_upsample_matches_finite_differences(self, rng):
        x = leaf(rng, (2, 2, 3))
        proj = Tensor(rng.normal_array((2, 4, 6)))
        assert max_grad_error(lambda t: F.sum_all(F.mul(F.upsample_nearest2d(t, 2), proj)), x) < 1e-6


class TestFiniteDifferences:
    def test_sum_gives_ones(self, rng):
        x = Tensor(rng.normal_array((2, 3)), requires_grad=True)
        np.testing.assert_allclose(finite_diff_gradient(F.sum_all, x).data, np.ones((2, 3)), atol=1e-8)

    def test_square(self):
        x = Tensor([3.0], requires_grad=True)
        g = finite_diff_gradient(lambda t: F.sum_all(F.mul(t, t)), x)
        assert abs(g.data[0] - 6.0) < 1e-8

    def test_input_restored(self, rng):
        x = Tensor(rng.normal_array(4), requires_grad=True)
        before = x.data.copy()
        finite_diff_gradient(lambda t: F.sum_all(F.gelu(t)), x)
        assert x.data.tobytes() == before.tobytes()

    def test_two_layer_network_agrees_with_backward(self, rng):
        x = Tensor(rng.normal_array((5, 6)))
        params = {"w1": leaf(rng, (6, 8)), "b1": leaf(rng, (8,)), "w2": leaf(rng, (8, 3))}
        proj = Tensor(rng.normal_array((5, 3)))

        def loss():
            hidden = F.gelu(F.linear(x, params["w1"], params["b1"]))
            return F.sum_all(F.mul(F.matmul(hidden, params["w2"]), proj))

        result = check_gradients("toy", loss, params, samples=1000, tolerance=1e-4, rng=Rng(0))
        assert result.passed
        assert result.samples == 6 * 8 + 8 + 8 * 3

    def test_corrupted_gradient_fails(self, rng):
        params = {"w": leaf(rng, (3, 3))}
        proj = Tensor(rng.normal_array((3, 3)))

        def skew(grads):
            grads["w"] *= 1.5

        result = check_gradients(
            "toy",
            lambda: F.sum_all(F.mul(F.gelu(params["w"]), proj)),
            params,
            samples=9,
            tolerance=1e-4,
            rng=Rng(0),
            hook=skew,
        )
        assert not result.passed
        assert result.coordinate.startswith("w[")

    def test_default_floor_catches_small_coordinate_errors(self):
        params = {"w": Tensor(np.ones(2), requires_grad=True)}
        scale = Tensor(np.array([1000.0, 1e-3]))

        def nudge(grads):
            grads["w"][1] *= 1.01

        def run(**floors):
            return check_gradients(
                "toy",
                lambda: F.sum_all(F.mul(params["w"], scale)),
                params,
                samples=2,
                tolerance=1e-4,
                rng=Rng(0),
                hook=nudge,
                **floors,
            )

        strict = run()
        assert not strict.passed
        assert strict.coordinate == "w[1]"
        assert run(scaled_floor=1e-3).passed
        assert run(floor=1.0).passed

    def test_sample_coordinates_are_distinct(self, rng):
        params = {"a": Tensor(np.zeros((4, 4))), "b": Tensor(np.zeros(10))}
        coords = sample_coordinates(params, 12, Rng(3))
        assert len(coords) == 12
        assert len(set(coords)) == 12


class TestRng:
    """splitmix64 reference streams."""

    @pytest.mark.parametrize(
        "seed,expected",
        [
            (
                1234567,
                [
                    6457827717110365317,
                    3203168211198807973,
                    9817491932198370423,
                    4593380528125082431,
                    16408922859458223821,
                ],
            ),
            (
                42,
                [
                    13679457532755275413,
                    2949826092126892291,
                    5139283748462763858,
                    6349198060258255764,
                    701532786141963250,
                ],
            ),
            (0, [16294208416658607535, 7960286522194355700, 487617019471545679]),
        ],
    )
    def test_reference_vectors(self, seed, expected):
        rng = Rng(seed)
        assert [rng.next_u64() for _ in expected] == expected

    def test_vectorized_stream_matches_scalar(self):
        scalar = Rng(42)
        expected = [scalar.next_u64() for _ in range(5)]
        vector = Rng(42)
        assert vector.u64_array(5).tolist() == expected
        assert vector.state == scalar.state

    def test_random_in_unit_interval(self):
        values = Rng(9).random_array(1000)
        assert values.min() >= 0.0
        assert values.max() < 1.0

    def test_integers_range(self):
        rng = Rng(5)
        draws = {rng.integers(-2, 3) for _ in range(200)}
        assert draws == {-2, -1, 0, 1, 2}

    def test_empty_integer_range(self):
        with pytest.raises(UsageException) as exc:
            Rng(5).integers(3, 3)
        assert exc.value.exit_code == 2

    def test_derive_is_stable_and_key_sensitive(self):
        assert Rng.derive(5, "train", 1).next_u64() == Rng.derive(5, "train", 1).next_u64()
        assert Rng.derive(5, "train", 1).next_u64() != Rng.derive(5, "train", 2).next_u64()
        assert Rng.derive(5, "train").next_u64() != Rng.derive(5, "eval").next_u64()

    def test_truncated_normal_bounds(self):
        values = Rng(1).truncated_normal_array((50, 50), std=0.02)
        assert np.abs(values).max() <= 0.04

    def test_permutation(self):
        perm = Rng(11).permutation(10)
        assert sorted(perm) == list(range(10))


class TestAdamW:
    """Decoupled-weight-decay updates."""

    def test_first_step(self):
        p = Tensor([1.0])
        adamw_step({"p": p}, {"p": np.array([1.0])}, OptimizerState(), lr=0.1, weight_decay=0.0)
        assert p.data[0] == pytest.approx(0.9, abs=1e-6)

    def test_decoupled_decay(self):
        p = Tensor([1.0])
        adamw_step({"p": p}, {"p": np.array([0.0])}, OptimizerState(), lr=0.1, weight_decay=0.1)
        assert p.data[0] == pytest.approx(0.99, abs=1e-12)

    def test_zero_lr_leaves_params_bit_identical(self, rng):
        p = Tensor(rng.normal_array((3, 3)).astype(np.float32))
        before = p.data.tobytes()
        adamw_step({"p": p}, {"p": rng.normal_array((3, 3))}, OptimizerState(), lr=0.0, weight_decay=1e-4)
        assert p.data.tobytes() == before

    def test_missing_gradient_untouched(self):
        p, q = Tensor([1.0]), Tensor([2.0])
        adamw_step({"p": p, "q": q}, {"p": np.array([1.0]), "q": None}, OptimizerState(), lr=0.1)
        assert q.data[0] == 2.0

    def test_nan_gradient_names_parameter(self):
        p = Tensor([1.0])
        with pytest.raises(NumericFailureException) as exc:
            adamw_step({"layer.w": p}, {"layer.w": np.array([np.nan])}, OptimizerState(), lr=0.1)
        assert exc.value.exit_code == 4
        assert exc.value.details["parameter"] == "layer.w"

    def test_optimizer_wrapper_uses_tensor_grads(self):
        p = Tensor([1.0], requires_grad=True)
        opt = AdamW({"p": p}, lr=0.1, weight_decay=0.0)
        with GradTape() as tape:
            tape.backward(F.sum_all(p))
        opt.step()
        assert p.data[0] == pytest.approx(0.9, abs=1e-6)
        opt.zero_grad()
        assert p.grad is None

    def test_exponential_decay(self):
        decay = ExponentialDecay(4e-4, 0.8)
        assert decay(0) == 4e-4
        assert decay(2) == pytest.approx(4e-4 * 0.64)
