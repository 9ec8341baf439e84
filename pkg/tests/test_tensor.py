import numpy as np
import pytest

from ganlink.errors import ConfigError, DimensionError, NonFiniteError, UsageError
from ganlink.tensor import (BNState, Tape, Tensor, backward, batchnorm, bce_loss, concat, conv2d, conv_output_size,
                            deconv2d, deconv_output_size, dense, finite_diff_check, flatten, get_dtype, leaky_relu,
                            mse_loss, mul, no_record, precision, reshape, sigmoid, tanh, tile_spatial, tsum)


def T(a, grad=False):
    return Tensor(np.asarray(a, dtype=get_dtype()), requires_grad=grad)


def grad_of(f, *xs):
    xs = [T(x, grad=True) for x in xs]
    with Tape() as tape:
        y = f(*xs)
    backward(y, tape)
    return [x.grad for x in xs]


def ref_conv(x, k, stride, pad):
    """Direct loop cross-correlation, used as the reference."""
    n, c, h, w = x.shape
    f, _, kh, kw = k.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    out = np.zeros((n, f, ho, wo))
    for i in range(ho):
        for j in range(wo):
            patch = xp[:, :, i * stride:i * stride + kh, j * stride:j * stride + kw]
            out[:, :, i, j] = np.einsum("ncij,fcij->nf", patch, k)
    return out


class TestPrecision:
    def test_default_is_float32(self):
        assert get_dtype() == np.float32

    def test_high_switch(self):
        with precision("high"):
            assert get_dtype() == np.float64
        assert get_dtype() == np.float32

    def test_unknown_mode(self):
        with pytest.raises(ConfigError):
            with precision("extreme"):
                pass

    def test_nonfinite_rejected(self):
        with pytest.raises(NonFiniteError):
            Tensor(np.array([1.0, np.nan]))


class TestDense:
    def test_identity(self):
        out = dense(T([[1, 2]]), T([[1, 0], [0, 1]]), T([0, 0]))
        np.testing.assert_array_equal(out.data, [[1, 2]])

    def test_bias(self):
        out = dense(T([[1, 1]]), T([[2], [3]]), T([1]))
        np.testing.assert_array_equal(out.data, [[6]])

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            dense(T(np.ones((1, 3))), T(np.ones((2, 2))))

    def test_weight_gradient(self, high, rng):
        x = T(rng.normal(size=(3, 4)))
        b = T(rng.normal(size=5))
        w = T(rng.normal(size=(4, 5)))
        rep = finite_diff_check(lambda w_: tsum(dense(x, w_, b)), w)
        assert rep.max_rel_error <= 1e-3


class TestConvShapes:
    def test_conv_default_stage(self):
        assert conv_output_size(64, 4, 2, 1) == 32
        x = T(np.zeros((1, 3, 64, 64)))
        assert conv2d(x, T(np.zeros((32, 3, 4, 4))), 2, 1).shape == (1, 32, 32, 32)

    def test_ones(self):
        out = conv2d(T(np.ones((1, 1, 3, 3))), T(np.ones((1, 1, 3, 3))))
        assert out.shape == (1, 1, 1, 1) and out.data.item() == 9

    def test_deconv_default_stage(self):
        assert deconv_output_size(4, 4, 2, 1) == 8
        out = deconv2d(T(np.zeros((1, 256, 4, 4))), T(np.zeros((256, 128, 4, 4))), 2, 1)
        assert out.shape == (1, 128, 8, 8)

    def test_deconv_unit_input_is_kernel(self):
        k = np.arange(4.0).reshape(1, 1, 2, 2)
        out = deconv2d(T(np.ones((1, 1, 1, 1))), T(k), 2, 0)
        np.testing.assert_array_equal(out.data, k)

    def test_bad_geometry(self):
        with pytest.raises(ConfigError):
            conv_output_size(2, 5, 1, 0)

    def test_channel_mismatch(self):
        with pytest.raises(DimensionError):
            conv2d(T(np.zeros((1, 2, 4, 4))), T(np.zeros((1, 3, 3, 3))))


CONV_CASES = [((2, 3, 8, 8), 4, 4, 2, 1), ((1, 2, 5, 5), 3, 3, 1, 1), ((2, 4, 7, 6), 5, 3, 1, 0),
              ((1, 3, 9, 9), 2, 3, 2, 0), ((3, 2, 6, 6), 3, 1, 1, 0), ((1, 1, 10, 10), 2, 4, 2, 1)]


class TestConvAgainstReference:
    @pytest.mark.parametrize("shape,f,k,stride,pad", CONV_CASES)
    def test_forward(self, high, rng, shape, f, k, stride, pad):
        x = rng.normal(size=shape)
        kern = rng.normal(size=(f, shape[1], k, k))
        np.testing.assert_allclose(conv2d(T(x), T(kern), stride, pad).data, ref_conv(x, kern, stride, pad),
                                   rtol=1e-10, atol=1e-10)

    def test_adjoint_identity_20_cases(self, rng):
        worst = 0.0
        for _ in range(20):
            stride = int(rng.integers(1, 3))
            k = int(rng.integers(1, 5))
            pad = int(rng.integers(0, k))
            c, f = (int(v) for v in rng.integers(1, 5, size=2))
            h = stride * int(rng.integers(1, 6)) + k - 2 * pad
            if h < 1:
                h += stride * 2
            x = rng.normal(size=(2, c, h, h)).astype(np.float32)
            kern = rng.normal(size=(f, c, k, k)).astype(np.float32)
            y_shape = conv2d(T(x), T(kern), stride, pad).shape
            y = rng.normal(size=y_shape).astype(np.float32)
            lhs = float(np.vdot(conv2d(T(x), T(kern), stride, pad).data.astype(np.float64), y))
            back = deconv2d(T(y), T(kern), stride, pad).data
            assert back.shape == x.shape
            rhs = float(np.vdot(x, back.astype(np.float64)))
            worst = max(worst, abs(lhs - rhs) / (abs(lhs) + 1))
        assert worst <= 1e-4

    def test_linearity(self, rng):
        x, y = rng.normal(size=(2, 2, 3, 8, 8)).astype(np.float32)
        kern = T(rng.normal(size=(4, 3, 4, 4)))
        a, b = 1.7, -0.6
        lhs = conv2d(T(a * x + b * y), kern, 2, 1).data
        rhs = a * conv2d(T(x), kern, 2, 1).data + b * conv2d(T(y), kern, 2, 1).data
        assert np.abs(lhs - rhs).max() <= 1e-5 * np.abs(rhs).max()

    def test_deterministic(self, rng):
        x = T(rng.normal(size=(2, 3, 8, 8)))
        kern = T(rng.normal(size=(4, 3, 4, 4)))
        assert np.array_equal(conv2d(x, kern, 2, 1).data, conv2d(x, kern, 2, 1).data)


class TestBatchnorm:
    def test_two_values(self):
        x = T(np.array([-1.0, 1.0, -1.0, 1.0]).reshape(4, 1))
        out = batchnorm(x, T([1.0]), T([0.0])).data.ravel()
        assert abs(out.mean()) <= 1e-6 and abs(out.var() - 1) <= 1e-3
        assert out[0] == -out[1]

    def test_affine(self, rng):
        x = rng.normal(size=(16, 3))
        x = (x - x.mean(0)) / x.std(0)
        out = batchnorm(T(x), T([2.0] * 3), T([3.0] * 3), eps=0.0).data
        np.testing.assert_allclose(out, 2 * x + 3, atol=1e-5)

    def test_momentum_one_train_equals_infer(self, rng):
        x = T(rng.normal(size=(8, 4, 3, 3)))
        g, b = T(rng.normal(size=4)), T(rng.normal(size=4))
        state = BNState.create(4, momentum=1.0)
        train = batchnorm(x, g, b, "train", state).data
        infer = batchnorm(x, g, b, "infer", state).data
        np.testing.assert_allclose(train, infer, atol=1e-5)

    @pytest.mark.parametrize("shape", [(8, 5), (8, 3, 4, 4), (32, 2, 2, 2)])
    def test_normalized_statistics(self, rng, shape):
        x = T(rng.normal(3.0, 5.0, size=shape))
        out = batchnorm(x, T(np.ones(shape[1])), T(np.zeros(shape[1]))).data
        axes = (0,) if len(shape) == 2 else (0, 2, 3)
        assert np.abs(out.mean(axis=axes)).max() <= 1e-3
        assert np.abs(out.var(axis=axes) - 1).max() <= 1e-2

    def test_single_sample_train_refused(self):
        with pytest.raises(UsageError):
            batchnorm(T(np.ones((1, 2))), T([1.0, 1.0]), T([0.0, 0.0]))

    def test_infer_without_state(self):
        with pytest.raises(UsageError):
            batchnorm(T(np.ones((2, 2))), T([1.0, 1.0]), T([0.0, 0.0]), mode="infer")


class TestActivations:
    def test_leaky(self):
        np.testing.assert_allclose(leaky_relu(T([-1.0, 2.0])).data, [-0.2, 2.0])

    def test_sigmoid_half(self):
        assert sigmoid(T([0.0])).data[0] == 0.5

    def test_sigmoid_range(self, rng):
        s = sigmoid(T(rng.normal(0, 30, size=1000))).data
        assert np.all((s >= 0) & (s <= 1))

    def test_tanh_gradient_at_zero(self, high):
        rep = finite_diff_check(lambda x: tsum(tanh(x)), T([0.0]))
        assert rep.analytic[0] == pytest.approx(1.0)
        assert rep.max_rel_error <= 1e-4


class TestConcat:
    def test_shape(self):
        assert concat([T(np.zeros((1, 10))), T(np.zeros((1, 256)))]).shape == (1, 266)

    def test_single(self, rng):
        a = T(rng.normal(size=(2, 3)))
        np.testing.assert_array_equal(concat([a]).data, a.data)

    def test_gradient_all_ones(self, rng):
        ga, gb = grad_of(lambda a, b: tsum(concat([a, b])), rng.normal(size=(2, 3)), rng.normal(size=(2, 4)))
        assert np.all(ga == 1) and np.all(gb == 1)


class TestLosses:
    def test_half(self):
        assert float(bce_loss(T([0.5]), 1).data) == pytest.approx(0.693147, abs=1e-6)

    def test_confident(self):
        assert float(bce_loss(T([1.0]), 1).data) <= 1e-6

    def test_point_nine(self):
        assert float(bce_loss(T([0.9]), 1).data) == pytest.approx(0.105361, abs=1e-6)

    def test_clamped_gradient_is_finite(self):
        (g,) = grad_of(lambda s: bce_loss(s, 1), [0.0])
        assert np.isfinite(g).all()

    def test_mse(self):
        assert float(mse_loss(T([1.0, 3.0]), [0.0, 0.0]).data) == 5.0


class TestBackward:
    def test_sum(self, rng):
        (g,) = grad_of(tsum, rng.normal(size=(2, 3, 4)))
        assert np.all(g == 1)

    def test_square(self):
        (g,) = grad_of(lambda x: tsum(mul(x, x)), [3.0])
        assert g[0] == 6

    def test_non_scalar_loss(self):
        x = T([1.0, 2.0], grad=True)
        with Tape() as tape:
            y = mul(x, x)
        with pytest.raises(UsageError):
            backward(y, tape)

    def test_foreign_loss(self):
        x = T([1.0], grad=True)
        with Tape():
            y = tsum(x)
        with Tape() as other:
            pass
        with pytest.raises(UsageError):
            backward(y, other)

    def test_no_record(self):
        x = T([1.0], grad=True)
        with Tape() as tape:
            with no_record():
                tsum(x)
        assert tape.ops() == []

    def test_shared_input_accumulates(self):
        (g,) = grad_of(lambda x: tsum(x + x), [1.0, 2.0])
        np.testing.assert_array_equal(g, [2, 2])


class TestFiniteDiffCheck:
    def test_sum_exact(self, high, rng):
        rep = finite_diff_check(tsum, T(rng.normal(size=(3, 3))))
        assert rep.max_rel_error <= 1e-10

    def test_squares(self, high):
        rep = finite_diff_check(lambda x: tsum(mul(x, x)), T([1.0, 2.0]))
        np.testing.assert_allclose(rep.analytic, [2, 4])
        assert rep.passed


def _weighted(out, w):
    return tsum(mul(out, T(w)))


SHAPES_2D = [(2, 3), (4, 5), (3, 7)]
SHAPES_4D = [(2, 2, 4, 4), (3, 1, 6, 6), (2, 3, 6, 4)]


class TestGradientSuite:
    """Every differentiable op at tol 1e-3 in high precision on three shapes."""

    @pytest.mark.parametrize("shape", SHAPES_2D)
    def test_elementwise(self, high, rng, shape):
        w = rng.normal(size=shape)
        for op in (tanh, sigmoid, leaky_relu, lambda x: mul(x, x), lambda x: x * 2.5 - x):
            rep = finite_diff_check(lambda x: _weighted(op(x), w), T(rng.normal(size=shape)))
            assert rep.max_rel_error <= 1e-3

    @pytest.mark.parametrize("shape", SHAPES_2D)
    def test_dense_input_and_bias(self, high, rng, shape):
        wt = T(rng.normal(size=(shape[1], 4)))
        b = T(rng.normal(size=4))
        x = T(rng.normal(size=shape))
        up = rng.normal(size=(shape[0], 4))
        assert finite_diff_check(lambda x_: _weighted(dense(x_, wt, b), up), x).passed
        assert finite_diff_check(lambda b_: _weighted(dense(x, wt, b_), up), b).passed

    @pytest.mark.parametrize("shape", SHAPES_4D)
    @pytest.mark.parametrize("stride,pad,k", [(1, 1, 3), (2, 1, 4), (1, 0, 2)])
    def test_conv_and_deconv(self, high, rng, shape, stride, pad, k):
        c = shape[1]
        kern = T(rng.normal(size=(3, c, k, k)))
        x = T(rng.normal(size=shape))
        w = rng.normal(size=conv2d(x, kern, stride, pad).shape)
        assert finite_diff_check(lambda x_: _weighted(conv2d(x_, kern, stride, pad), w), x).passed
        assert finite_diff_check(lambda k_: _weighted(conv2d(x, k_, stride, pad), w), kern).passed
        dk = T(rng.normal(size=(c, 2, k, k)))
        w2 = rng.normal(size=deconv2d(x, dk, stride, pad).shape)
        assert finite_diff_check(lambda x_: _weighted(deconv2d(x_, dk, stride, pad), w2), x).passed
        assert finite_diff_check(lambda k_: _weighted(deconv2d(x, k_, stride, pad), w2), dk).passed

    @pytest.mark.parametrize("shape", [(4, 3), (3, 2, 3, 3), (5, 3, 2, 2)])
    def test_batchnorm(self, high, rng, shape):
        c = shape[1]
        g, b = T(rng.normal(size=c)), T(rng.normal(size=c))
        x = T(rng.normal(size=shape))
        w = rng.normal(size=shape)
        assert finite_diff_check(lambda x_: _weighted(batchnorm(x_, g, b), w), x).passed
        assert finite_diff_check(lambda g_: _weighted(batchnorm(x, g_, b), w), g).passed
        assert finite_diff_check(lambda b_: _weighted(batchnorm(x, g, b_), w), b).passed
        state = BNState.create(c)
        state.var = state.var + 0.5
        assert finite_diff_check(lambda x_: _weighted(batchnorm(x_, g, b, "infer", state), w), x).passed

    @pytest.mark.parametrize("shape", SHAPES_2D)
    def test_structural(self, high, rng, shape):
        other = T(rng.normal(size=(shape[0], 2)))
        w = rng.normal(size=(shape[0], shape[1] + 2))
        assert finite_diff_check(lambda x: _weighted(concat([x, other]), w), T(rng.normal(size=shape))).passed
        w = rng.normal(size=(shape[0], shape[1], 3, 3))
        assert finite_diff_check(lambda x: _weighted(tile_spatial(x, 3), w), T(rng.normal(size=shape))).passed
        w = rng.normal(size=shape[0] * shape[1])
        assert finite_diff_check(lambda x: _weighted(reshape(x, (-1,)), w), T(rng.normal(size=shape))).passed
        x4 = T(rng.normal(size=(shape[0], 2, shape[1], 2)))
        w = rng.normal(size=(shape[0], 4 * shape[1]))
        assert finite_diff_check(lambda x: _weighted(flatten(x), w), x4).passed

    @pytest.mark.parametrize("n", [2, 5, 9])
    def test_losses(self, high, rng, n):
        target = rng.integers(0, 2, size=n).astype(float)
        s = T(rng.uniform(0.1, 0.9, size=n))
        assert finite_diff_check(lambda s_: bce_loss(s_, target), s, step=1e-5).passed
        goal = rng.normal(size=(n, 3))
        assert finite_diff_check(lambda p: mse_loss(p, goal), T(rng.normal(size=(n, 3)))).passed
