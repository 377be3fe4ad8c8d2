import numpy as np
import pytest

from capsulefusion.errors import DomainError, ShapeError
from capsulefusion.tensor import (
    Tape,
    Tensor,
    backward,
    broadcast_to,
    concat,
    conv2d,
    dropout,
    elementwise,
    global_avg_pool,
    grad_check,
    matmul,
    mean_squared_error,
    pool2d,
    record,
    reduce_mean,
    reduce_sum,
    relative_error,
    slice_axis,
    softmax,
    softmax_cross_entropy,
    upsample2d,
)


def leaf(values, dtype=np.float64):
    return Tensor(np.asarray(values, dtype=dtype), requires_grad=True)


class TestElementwise:
    def test_binary_forward(self):
        a, b = Tensor([1.0, 2.0]), Tensor([3.0, 4.0])
        np.testing.assert_allclose(elementwise("add", a, b).data, [4.0, 6.0])
        np.testing.assert_allclose(elementwise("mul", a, b).data, [3.0, 8.0])
        np.testing.assert_allclose((a - b).data, [-2.0, -2.0])
        np.testing.assert_allclose((a / 2.0).data, [0.5, 1.0])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            elementwise("add", Tensor(np.ones(3)), Tensor(np.ones(4)))

    def test_log_of_non_positive(self):
        with pytest.raises(DomainError):
            elementwise("log", Tensor([1.0, 0.0]))

    def test_division_by_zero(self):
        with pytest.raises(DomainError):
            elementwise("div", Tensor([1.0]), Tensor([0.0]))

    def test_unknown_kind(self):
        with pytest.raises(DomainError):
            elementwise("cube", Tensor([1.0]))

    def test_default_dtype_is_float32(self):
        assert Tensor([1, 2, 3]).dtype == np.float32


class TestTape:
    def test_no_recording_without_tape(self):
        x = leaf([1.0, 2.0])
        y = x * x
        assert not y.requires_grad

    def test_square_gradient(self):
        x = leaf([1.0, -2.0, 3.0])
        with Tape() as tape:
            loss = reduce_sum(x * x)
        backward(tape, loss)
        np.testing.assert_allclose(x.grad, [2.0, -4.0, 6.0])

    def test_gradients_accumulate(self):
        x = leaf([1.0, 2.0])
        for _ in range(2):
            with Tape() as tape:
                loss = reduce_sum(x * 3.0)
            backward(tape, loss)
        np.testing.assert_allclose(x.grad, [6.0, 6.0])

    def test_shared_operand(self):
        x = leaf([2.0])
        with Tape() as tape:
            loss = reduce_sum(x * x + x)
        backward(tape, loss)
        np.testing.assert_allclose(x.grad, [5.0])

    def test_non_scalar_loss(self):
        x = leaf([1.0, 2.0])
        with Tape() as tape:
            y = x * 2.0
        with pytest.raises(ShapeError):
            backward(tape, y)

    def test_frozen_operand_gets_no_grad(self):
        x = leaf([1.0, 2.0])
        w = Tensor(np.array([3.0, 4.0]))
        with Tape() as tape:
            loss = reduce_sum(x * w)
        backward(tape, loss)
        assert w.grad is None
        np.testing.assert_allclose(x.grad, [3.0, 4.0])


class TestLinearAlgebra:
    def test_matmul_gradients(self):
        a = leaf([[1.0, 2.0], [3.0, 4.0]])
        b = leaf([[1.0], [1.0]])
        with Tape() as tape:
            loss = reduce_sum(matmul(a, b))
        backward(tape, loss)
        np.testing.assert_allclose(a.grad, np.ones((2, 2)))
        np.testing.assert_allclose(b.grad, [[4.0], [6.0]])

    def test_matmul_shape_error(self):
        with pytest.raises(ShapeError):
            matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_broadcast_backward_sums(self):
        v = leaf([1.0, 2.0, 3.0])
        with Tape() as tape:
            loss = reduce_sum(broadcast_to(v, (4, 3)))
        backward(tape, loss)
        np.testing.assert_allclose(v.grad, [4.0, 4.0, 4.0])

    def test_concat_and_slice(self):
        a, b = leaf(np.ones((2, 2))), leaf(np.zeros((2, 3)))
        with Tape() as tape:
            joined = concat([a, b], axis=1)
            loss = reduce_sum(slice_axis(joined, 1, 1, 3))
        assert joined.shape == (2, 5)
        backward(tape, loss)
        np.testing.assert_allclose(a.grad, [[0.0, 1.0], [0.0, 1.0]])
        np.testing.assert_allclose(b.grad, [[1.0, 0.0, 0.0], [1.0, 0.0, 0.0]])

    def test_reduce_mean_gradient(self):
        x = leaf(np.ones((2, 4)))
        with Tape() as tape:
            loss = reduce_sum(reduce_mean(x, axis=1))
        backward(tape, loss)
        np.testing.assert_allclose(x.grad, np.full((2, 4), 0.25))

    def test_softmax_rows_sum_to_one(self):
        y = softmax(Tensor(np.array([[1.0, 2.0, 3.0], [1000.0, 1000.0, 1000.0]])))
        np.testing.assert_allclose(y.data.sum(axis=1), [1.0, 1.0])
        np.testing.assert_allclose(y.data[1], [1 / 3] * 3)


class TestDropout:
    def test_identity_in_eval(self):
        x = Tensor(np.ones(10))
        assert dropout(x, 0.5, None, training=False) is x

    def test_inverted_scaling(self, rng):
        y = dropout(Tensor(np.ones(1000)), 0.5, rng, training=True)
        assert set(np.unique(y.data)) <= {0.0, 2.0}

    def test_training_needs_generator(self):
        with pytest.raises(DomainError):
            dropout(Tensor(np.ones(3)), 0.5, None, training=True)


class TestSpatial:
    def test_conv2d_known_values(self):
        x = Tensor(np.arange(16.0).reshape(1, 1, 4, 4))
        k = Tensor(np.ones((1, 1, 2, 2)))
        out = conv2d(x, k, stride=2)
        np.testing.assert_allclose(out.data[0, 0], [[10.0, 18.0], [42.0, 50.0]])

    def test_conv2d_same_padding_keeps_size(self):
        out = conv2d(Tensor(np.ones((2, 3, 5, 5))), Tensor(np.ones((4, 3, 3, 3))), padding="same")
        assert out.shape == (2, 4, 5, 5)
        assert out.data[0, 0, 2, 2] == pytest.approx(27.0)
        assert out.data[0, 0, 0, 0] == pytest.approx(12.0)

    def test_depthwise_conv(self):
        x = Tensor(np.ones((1, 2, 3, 3)))
        k = Tensor(np.array([2.0, 3.0]).reshape(2, 1, 1, 1))
        out = conv2d(x, k, groups=2)
        np.testing.assert_allclose(out.data[0, :, 1, 1], [2.0, 3.0])

    def test_conv2d_group_mismatch(self):
        with pytest.raises(ShapeError):
            conv2d(Tensor(np.ones((1, 3, 4, 4))), Tensor(np.ones((2, 1, 1, 1))), groups=2)

    def test_max_pool_routes_to_first_maximum(self):
        x = leaf(np.array([[[[1.0, 3.0], [3.0, 0.0]]]]))
        with Tape() as tape:
            out = pool2d(x, "max")
            loss = reduce_sum(out)
        assert out.data.item() == 3.0
        backward(tape, loss)
        np.testing.assert_allclose(x.grad[0, 0], [[0.0, 1.0], [0.0, 0.0]])

    def test_avg_pool(self):
        out = pool2d(Tensor(np.arange(16.0).reshape(1, 1, 4, 4)), "avg")
        np.testing.assert_allclose(out.data[0, 0], [[2.5, 4.5], [10.5, 12.5]])

    def test_pool_window_too_large(self):
        with pytest.raises(ShapeError):
            pool2d(Tensor(np.ones((1, 1, 1, 1))), "max", window=2)

    def test_global_avg_pool(self):
        out = global_avg_pool(Tensor(np.arange(8.0).reshape(1, 2, 2, 2)))
        np.testing.assert_allclose(out.data, [[1.5, 5.5]])

    def test_upsample_backward_sums_blocks(self):
        x = leaf(np.ones((1, 1, 2, 2)))
        with Tape() as tape:
            out = upsample2d(x, 2)
            loss = reduce_sum(out)
        assert out.shape == (1, 1, 4, 4)
        backward(tape, loss)
        np.testing.assert_allclose(x.grad, np.full((1, 1, 2, 2), 4.0))


class TestLosses:
    def test_cross_entropy_uniform_logits(self):
        loss = softmax_cross_entropy(Tensor(np.zeros((2, 10))), [3, 7])
        assert loss.item() == pytest.approx(np.log(10.0), rel=1e-6)

    def test_uniform_weights_match_plain_mean(self):
        logits = Tensor(np.array([[2.0, 0.5, -1.0], [0.1, 0.2, 0.3]]))
        plain = softmax_cross_entropy(logits, [0, 2]).item()
        weighted = softmax_cross_entropy(logits, [0, 2], class_weights=[2.0, 2.0, 2.0]).item()
        assert weighted == pytest.approx(plain)

    def test_label_out_of_range(self):
        with pytest.raises(ShapeError):
            softmax_cross_entropy(Tensor(np.zeros((1, 10))), [10])

    def test_masked_mse_averages_over_mask(self):
        pred = Tensor(np.array([1.0, 3.0, 5.0]))
        target = Tensor(np.zeros(3))
        loss = mean_squared_error(pred, target, np.array([1.0, 0.0, 1.0]))
        assert loss.item() == pytest.approx((1.0 + 25.0) / 2)

    def test_mse_shape_mismatch(self):
        with pytest.raises(ShapeError):
            mean_squared_error(Tensor(np.ones(2)), Tensor(np.ones(3)))


class TestGradCheck:
    def test_relative_error_floor(self):
        assert relative_error(np.array([0.0]), np.array([0.0]))[0] == 0.0
        assert relative_error(np.array([1.0]), np.array([1.0001]))[0] == pytest.approx(1e-4 / 1.0001)

    def test_passes_for_correct_rule(self, rng):
        x = Tensor(rng.normal(size=(3, 4)))
        w = Tensor(rng.normal(size=(4, 2)))
        result = grad_check(lambda: reduce_sum(elementwise("tanh", matmul(x, w))), {"x": x, "w": w})
        assert result.passed
        assert result.max_relative_error < 1e-4

    def test_detects_sign_flip(self, rng):
        x = Tensor(rng.normal(size=5))

        def flipped_neg(a):
            return record("neg", (a,), -a.data, lambda g: (g,))

        result = grad_check(lambda: reduce_sum(flipped_neg(x)), {"x": x})
        assert not result.passed
        assert result.max_relative_error == pytest.approx(2.0)

    def test_parameters_restored(self, rng):
        x = Tensor(rng.normal(size=4))
        before = x.data.copy()
        grad_check(lambda: reduce_sum(x * x), [x])
        np.testing.assert_array_equal(x.data, before)

    def test_non_scalar_function(self):
        x = Tensor(np.ones(3))
        with pytest.raises(ShapeError):
            grad_check(lambda: x * 2.0, [x])
