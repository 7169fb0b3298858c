import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tdm_rppg import tensor as tn
from tdm_rppg.tensor import ContractError, DimensionError, NonFiniteError, Tape, TapeError, Tensor


def leaf(data, name=None):
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=True, name=name)


def conv2d_oracle(x, w, b):
    """Direct nested-loop cross-correlation with zero padding 1."""
    n, c, h, wd = x.shape
    o = w.shape[0]
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    out = np.zeros((n, o, h, wd))
    for ni in range(n):
        for oi in range(o):
            for i in range(h):
                for j in range(wd):
                    out[ni, oi, i, j] = np.sum(xp[ni, :, i:i + 3, j:j + 3] * w[oi]) + b[oi]
    return out


def conv1d_oracle(x, kernel):
    """Scalar loop in the same tap order as the library (bitwise comparable)."""
    c, t = x.shape
    half = len(kernel) // 2
    xp = np.pad(x, ((0, 0), (half, half)))
    out = np.zeros_like(x)
    for tau in range(len(kernel)):
        for ci in range(c):
            for ti in range(t):
                out[ci, ti] += kernel[tau] * xp[ci, ti + tau]
    return out


class TestTensorBasics:
    def test_default_dtype_is_f64(self):
        assert Tensor([1.0, 2.0]).dtype == np.float64

    def test_f32_tensor(self):
        assert Tensor([1.0], dtype=np.float32).dtype == np.float32

    def test_zero_dim_roundtrip(self):
        t = Tensor(3.5)
        assert t.shape == ()
        assert t.item() == 3.5

    def test_item_requires_single_element(self):
        with pytest.raises(ContractError):
            Tensor([1.0, 2.0]).item()

    def test_leaf_grad_buffer_allocated(self):
        t = leaf([1.0, 2.0])
        np.testing.assert_array_equal(t.grad, [0.0, 0.0])
        assert Tensor([1.0]).grad is None

    def test_unknown_precision_rejected(self):
        with pytest.raises(ValueError):
            tn.set_default_dtype("f16")


class TestElementwise:
    def test_sum_of_squares_gradient(self):
        w = leaf([1.0, -2.0, 3.0])
        tn.backward(tn.sum_(w * w))
        np.testing.assert_allclose(w.grad, 2 * w.data)

    def test_broadcast_add_reduces_gradient(self):
        a = leaf(np.ones((3, 4)))
        b = leaf(np.ones(4))
        tn.backward(tn.sum_(a + b))
        np.testing.assert_array_equal(b.grad, np.full(4, 3.0))

    def test_division_gradient(self):
        a, b = leaf([6.0]), leaf([3.0])
        tn.backward(tn.sum_(a / b))
        np.testing.assert_allclose(a.grad, [1 / 3])
        np.testing.assert_allclose(b.grad, [-6 / 9])

    def test_scalar_operands(self):
        a = leaf([2.0])
        tn.backward(tn.sum_(3.0 - a * 2.0 + 1.0 / a))
        np.testing.assert_allclose(a.grad, [-2.0 - 0.25])

    def test_gradients_accumulate_across_backward_calls(self):
        w = leaf([1.0])
        tn.backward(tn.sum_(w * 3.0))
        tn.backward(tn.sum_(w * 3.0))
        np.testing.assert_array_equal(w.grad, [6.0])

    def test_log_of_zero_raises_named_error(self):
        x = leaf([0.0, 1.0])
        with pytest.raises(NonFiniteError) as err:
            tn.log(x)
        assert err.value.op == "log"


class TestTape:
    def test_backward_requires_scalar(self):
        w = leaf([1.0, 2.0])
        with pytest.raises(ContractError):
            tn.backward(w * 2.0)

    def test_second_backward_on_same_graph_raises(self):
        w = leaf([1.0, 2.0])
        loss = tn.sum_(w * w)
        tn.backward(loss)
        with pytest.raises(TapeError):
            tn.backward(loss)

    def test_tape_orders_ops_in_execution_order(self):
        w = leaf([1.0, 2.0])
        loss = tn.sum_(tn.exp(w * 2.0))
        assert Tape.reaching(loss).ops() == ["mul", "exp", "sum"]

    def test_no_grad_records_nothing(self):
        w = leaf([1.0])
        with tn.no_grad():
            y = w * 2.0
        assert y._node is None and not y.requires_grad

    def test_no_grad_is_thread_local(self):
        seen = []

        def worker():
            seen.append(tn.grad_enabled())

        with tn.no_grad():
            t = threading.Thread(target=worker)
            t.start()
            t.join()
        assert seen == [True]

    def test_independent_tapes_on_threads(self):
        results = {}

        def worker(i):
            w = leaf([float(i)])
            tn.backward(tn.sum_(w * w))
            results[i] = w.grad[0]

        threads = [threading.Thread(target=worker, args=(i,)) for i in range(4)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert results == {i: 2.0 * i for i in range(4)}


class TestShapes:
    def test_concat_then_slice_recovers_inputs(self):
        rng = np.random.default_rng(0)
        a, b = Tensor(rng.standard_normal((2, 5))), Tensor(rng.standard_normal((3, 5)))
        z = tn.concat_channels([a, b])
        np.testing.assert_array_equal(z[:2].data, a.data)
        np.testing.assert_array_equal(z[2:].data, b.data)

    def test_concat_rejects_ragged_lengths(self):
        with pytest.raises(DimensionError):
            tn.concat_channels([Tensor(np.zeros((1, 4))), Tensor(np.zeros((1, 5)))])

    def test_getitem_gradient_scatters(self):
        x = leaf(np.arange(5.0))
        tn.backward(tn.sum_(x[1:4:2]))
        np.testing.assert_array_equal(x.grad, [0, 1, 0, 1, 0])

    def test_shift_positive(self):
        np.testing.assert_array_equal(tn.shift(Tensor([1.0, 2, 3, 4]), 1).data, [0, 1, 2, 3])

    def test_shift_negative(self):
        np.testing.assert_array_equal(tn.shift(Tensor([1.0, 2, 3, 4]), -2).data, [3, 4, 0, 0])

    def test_shift_beyond_length_is_zero(self):
        np.testing.assert_array_equal(tn.shift(Tensor([1.0, 2]), 5).data, [0, 0])


class TestConv2d:
    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((2, 3, 5, 6))
        w = rng.standard_normal((4, 3, 3, 3))
        b = rng.standard_normal(4)
        out = tn.conv2d(Tensor(x), Tensor(w), Tensor(b)).data
        np.testing.assert_allclose(out, conv2d_oracle(x, w, b), rtol=1e-12, atol=1e-12)

    def test_identity_kernel(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((1, 1, 4, 4))
        w = np.zeros((1, 1, 3, 3))
        w[0, 0, 1, 1] = 1.0
        out = tn.conv2d(Tensor(x), Tensor(w), Tensor(np.zeros(1))).data
        np.testing.assert_array_equal(out, x)

    def test_channel_mismatch(self):
        with pytest.raises(DimensionError):
            tn.conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))), Tensor(np.zeros(1)))


class TestConv1dFixed:
    kernel = np.array([-2.0, -1.0, 0.0, 1.0, 2.0])

    def test_bitwise_oracle_random(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((4, 37))
        np.testing.assert_array_equal(tn.conv1d_fixed(Tensor(x), self.kernel).data, conv1d_oracle(x, self.kernel))

    def test_constant_annihilated_on_interior(self):
        out = tn.conv1d_fixed(Tensor(np.full((1, 20), 7.0)), self.kernel).data
        np.testing.assert_array_equal(out[0, 2:-2], 0.0)

    def test_ramp_maps_to_ten(self):
        out = tn.conv1d_fixed(Tensor(np.arange(20.0)[None]), self.kernel).data
        np.testing.assert_array_equal(out[0, 2:-2], 10.0)

    def test_zero_padding_edges(self):
        out = tn.conv1d_fixed(Tensor(np.ones((1, 6))), self.kernel).data
        np.testing.assert_array_equal(out[0], [3.0, 2.0, 0.0, 0.0, -2.0, -3.0])

    def test_kernel_gets_no_gradient(self):
        x = leaf(np.ones((1, 8)))
        tn.backward(tn.sum_(tn.conv1d_fixed(x, self.kernel)))
        np.testing.assert_array_equal(self.kernel, [-2.0, -1.0, 0.0, 1.0, 2.0])
        # gradient of sum(out) is the reversed kernel sum at each input sample
        np.testing.assert_array_equal(x.grad[0], [-3.0, -2.0, 0.0, 0.0, 0.0, 0.0, 2.0, 3.0])


class TestNormalisationAndPooling:
    def test_batchnorm_standardised_input_is_identity(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((6, 2, 4, 4))
        x = (x - x.mean(axis=(0, 2, 3), keepdims=True)) / x.std(axis=(0, 2, 3), keepdims=True)
        out = tn.batchnorm2d(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)), np.zeros(2), np.ones(2), True).data
        np.testing.assert_allclose(out, x, rtol=1e-5)

    def test_batchnorm_running_stats_update(self):
        x = np.zeros((2, 1, 2, 2))
        x[1] = 2.0
        rm, rv = np.zeros(1), np.ones(1)
        tn.batchnorm2d(Tensor(x), Tensor(np.ones(1)), Tensor(np.zeros(1)), rm, rv, True)
        np.testing.assert_allclose(rm, [0.1])
        np.testing.assert_allclose(rv, [0.9 + 0.1 * 8.0 / 7.0])

    def test_batchnorm_eval_uses_running_stats(self):
        x = np.full((1, 1, 2, 2), 3.0)
        out = tn.batchnorm2d(Tensor(x), Tensor(np.ones(1)), Tensor(np.zeros(1)),
                             np.array([1.0]), np.array([4.0]), False).data
        np.testing.assert_allclose(out, (3.0 - 1.0) / np.sqrt(4.0 + 1e-5))

    def test_avgpool_floor_truncation(self):
        x = np.arange(15.0).reshape(1, 1, 3, 5)
        out = tn.avgpool2d(Tensor(x)).data
        np.testing.assert_array_equal(out, [[[[3.0, 5.0]]]])

    def test_spatial_mean_layout(self):
        x = np.arange(24.0).reshape(3, 2, 2, 2)
        np.testing.assert_array_equal(tn.spatial_mean(Tensor(x)).data, x.mean(axis=(2, 3)).T)

    def test_softmax_sums_to_one(self):
        p = tn.softmax(Tensor([1000.0, 1000.0, -5.0])).data
        assert p.sum() == pytest.approx(1.0)
        np.testing.assert_allclose(p[:2], 0.5, rtol=1e-12)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, st.integers(3, 12), elements=st.floats(-5, 5)))
def test_mse_gradient_property(x):
    y = np.linspace(-1, 1, len(x))
    a = leaf(x)
    tn.backward(tn.mse_reduce(a, Tensor(y)))
    np.testing.assert_allclose(a.grad, 2 * (x - y) / len(x), atol=1e-12)
