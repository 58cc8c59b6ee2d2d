"""Forward semantics of the array ops: values, shapes, dtypes, errors."""

import numpy as np
import pytest

from evsr.errors import ConfigError
from evsr.tensor import (BNState, Tensor, add, batchnorm2d, broadcast_add,
                         concat_channels, conv2d, global_avg_pool,
                         kaiming_uniform, matmul, mean_all, mse, mul,
                         pixel_shuffle, relu, reshape, scale, sigmoid,
                         softmax, space_to_depth, sum_all, transpose)


def t(data, dtype=np.float64):
    return Tensor(np.asarray(data, dtype=dtype))


# -- dtype rules ----------------------------------------------------------


def test_default_dtype_is_float32():
    assert Tensor([1, 2, 3]).dtype == np.float32
    assert Tensor(np.arange(4)).dtype == np.float32


def test_existing_float_dtypes_survive():
    assert Tensor(np.zeros(3, dtype=np.float64)).dtype == np.float64
    assert Tensor(np.zeros(3, dtype=np.float32)).dtype == np.float32
    assert Tensor(np.zeros(3), dtype=np.float64).dtype == np.float64


def test_item_and_scalar_guard():
    assert Tensor(3.5).item() == 3.5
    with pytest.raises(ConfigError):
        Tensor([1.0, 2.0]).item()


# -- elementwise ----------------------------------------------------------


def test_add_and_mul_values():
    a, b = t([[1.0, 2.0], [3.0, 4.0]]), t([[10.0, 20.0], [30.0, 40.0]])
    assert np.array_equal(add(a, b).data, [[11, 22], [33, 44]])
    assert np.array_equal(mul(a, b).data, [[10, 40], [90, 160]])
    assert np.array_equal(scale(a, -2.0).data, [[-2, -4], [-6, -8]])
    with pytest.raises(ConfigError):
        mul(a, t([1.0, 2.0]))
    with pytest.raises(ConfigError):
        add(t([1.0, 2.0]), t([1.0, 2.0, 3.0]))


def test_operator_sugar():
    a, b = t([1.0, 2.0]), t([3.0, 5.0])
    assert np.array_equal((a + b).data, [4, 7])
    assert np.array_equal((a - b).data, [-2, -3])
    assert np.array_equal((-a).data, [-1, -2])
    assert np.array_equal((a * 3.0).data, [3, 6])


def test_relu_values():
    out = relu(t([-2.0, 0.0, 3.0]))
    assert np.array_equal(out.data, [0, 0, 3])


def test_sigmoid_values_and_stability():
    out = sigmoid(t([0.0, 1000.0, -1000.0]))
    assert out.data[0] == 0.5
    assert out.data[1] == 1.0 and out.data[2] == 0.0
    assert np.isfinite(out.data).all()
    x = 0.73
    assert sigmoid(t([x])).data[0] == pytest.approx(1.0 / (1.0 + np.exp(-x)))


def test_softmax_rows_and_shift_invariance():
    a = t([[1.0, 2.0, 3.0], [0.0, 0.0, 0.0]])
    out = softmax(a, axis=1)
    assert np.allclose(out.data.sum(axis=1), 1.0)
    assert np.allclose(out.data[1], 1.0 / 3.0)
    shifted = softmax(t(a.data + 100.0), axis=1)
    assert np.allclose(out.data, shifted.data)
    cols = softmax(a, axis=0)
    assert np.allclose(cols.data.sum(axis=0), 1.0)


# -- reductions -----------------------------------------------------------


def test_reductions_and_mse():
    a = t([[1.0, 2.0], [3.0, 4.0]])
    assert sum_all(a).item() == 10.0
    assert mean_all(a).item() == 2.5
    b = t([[0.0, 0.0], [0.0, 0.0]])
    assert mse(a, b).item() == pytest.approx((1 + 4 + 9 + 16) / 4)
    assert mse(a, a).item() == 0.0
    with pytest.raises(ConfigError):
        mse(a, t([1.0, 2.0]))


# -- shape ops --------------------------------------------------------------


def test_reshape_transpose_matmul():
    a = t(np.arange(6, dtype=np.float64).reshape(2, 3))
    assert reshape(a, (3, 2)).shape == (3, 2)
    assert np.array_equal(transpose(a).data, a.data.T)
    b = t(np.arange(12, dtype=np.float64).reshape(3, 4))
    assert np.array_equal(matmul(a, b).data, a.data @ b.data)
    with pytest.raises(ConfigError):
        matmul(a, a)
    with pytest.raises(ConfigError):
        transpose(t(np.zeros((2, 2, 2))))


def test_concat_channels():
    a = t(np.ones((2, 3, 3)))
    b = t(np.zeros((1, 3, 3)))
    out = concat_channels(a, b)
    assert out.shape == (3, 3, 3)
    assert np.array_equal(out.data[:2], a.data)
    assert np.array_equal(out.data[2], b.data[0])
    with pytest.raises(ConfigError):
        concat_channels(a)
    with pytest.raises(ConfigError):
        concat_channels(a, t(np.zeros((1, 2, 3))))


def test_pixel_shuffle_index_law():
    # out[c, r*h+i, r*w+j] = in[c*r*r + i*r + j, h, w]
    a = t(np.array([1.0, 2.0, 3.0, 4.0]).reshape(4, 1, 1))
    out = pixel_shuffle(a, 2)
    assert out.shape == (1, 2, 2)
    assert np.array_equal(out.data[0], [[1, 2], [3, 4]])
    with pytest.raises(ConfigError):
        pixel_shuffle(t(np.zeros((3, 2, 2))), 2)


def test_pixel_shuffle_space_to_depth_inverse():
    rng = np.random.default_rng(0)
    for r in (2, 4):
        x = t(rng.standard_normal((2 * r * r, 3, 5)))
        y = space_to_depth(pixel_shuffle(x, r), r)
        assert np.array_equal(y.data, x.data)
        z = t(rng.standard_normal((2, 3 * r, 5 * r)))
        assert np.array_equal(pixel_shuffle(space_to_depth(z, r), r).data, z.data)
    with pytest.raises(ConfigError):
        space_to_depth(t(np.zeros((1, 5, 4))), 2)


def test_space_to_depth_blocks():
    z = t(np.arange(16, dtype=np.float64).reshape(1, 4, 4))
    out = space_to_depth(z, 2)
    assert out.shape == (4, 2, 2)
    # channel 0 holds the top-left element of every 2x2 block
    assert np.array_equal(out.data[0], [[0, 2], [8, 10]])
    assert np.array_equal(out.data[1], [[1, 3], [9, 11]])
    assert np.array_equal(out.data[2], [[4, 6], [12, 14]])


# -- convolution ------------------------------------------------------------


def conv_reference(x, w, b=None):
    """Six-loop cross-correlation with zero padding, same size."""
    c_out, c_in, k, _ = w.shape
    _, h, wd = x.shape
    p = k // 2
    out = np.zeros((c_out, h, wd), dtype=x.dtype)
    for o in range(c_out):
        for i in range(h):
            for j in range(wd):
                acc = 0.0
                for c in range(c_in):
                    for di in range(k):
                        for dj in range(k):
                            ii, jj = i + di - p, j + dj - p
                            if 0 <= ii < h and 0 <= jj < wd:
                                acc += w[o, c, di, dj] * x[c, ii, jj]
                out[o, i, j] = acc + (b[o] if b is not None else 0.0)
    return out


def test_conv_matches_loop_reference():
    rng = np.random.default_rng(1)
    for k in (1, 3):
        x = rng.standard_normal((3, 5, 6))
        w = rng.standard_normal((4, 3, k, k))
        b = rng.standard_normal(4)
        got = conv2d(t(x), t(w), t(b)).data
        assert np.allclose(got, conv_reference(x, w, b), atol=1e-12)
        got_nb = conv2d(t(x), t(w)).data
        assert np.allclose(got_nb, conv_reference(x, w), atol=1e-12)


def test_conv_identity_kernel():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((2, 4, 4))
    w = np.zeros((2, 2, 3, 3))
    w[0, 0, 1, 1] = 1.0
    w[1, 1, 1, 1] = 1.0
    assert np.allclose(conv2d(t(x), t(w)).data, x)


def test_conv_zero_kernel_and_bias_fill():
    x = t(np.ones((1, 3, 3)))
    w = t(np.zeros((2, 1, 1, 1)))
    b = t(np.array([0.5, -1.0]))
    out = conv2d(x, w, b).data
    assert np.all(out[0] == 0.5) and np.all(out[1] == -1.0)


def test_conv_shape_errors():
    x = t(np.zeros((2, 4, 4)))
    with pytest.raises(ConfigError):
        conv2d(x, t(np.zeros((1, 2, 5, 5))))  # kernel too big
    with pytest.raises(ConfigError):
        conv2d(x, t(np.zeros((1, 2, 2, 2))))  # even kernel
    with pytest.raises(ConfigError):
        conv2d(x, t(np.zeros((1, 3, 3, 3))))  # channel mismatch
    with pytest.raises(ConfigError):
        conv2d(x, t(np.zeros((1, 2, 3, 3))), t(np.zeros(2)))  # bias length


# -- batch norm -------------------------------------------------------------


def test_batchnorm_train_standardizes():
    rng = np.random.default_rng(3)
    x = t(rng.standard_normal((3, 6, 7)) * 4.0 + 2.0)
    gamma, beta = t(np.ones(3)), t(np.zeros(3))
    out = batchnorm2d(x, gamma, beta, BNState.create(3, np.float64)).data
    assert np.allclose(out.mean(axis=(1, 2)), 0.0, atol=1e-12)
    assert np.allclose(out.var(axis=(1, 2)), 1.0, atol=1e-4)  # eps shrinks it


def test_batchnorm_gamma_beta_affect_output():
    rng = np.random.default_rng(4)
    x = t(rng.standard_normal((2, 4, 4)))
    gamma, beta = t(np.array([2.0, 0.5])), t(np.array([1.0, -1.0]))
    out = batchnorm2d(x, gamma, beta, BNState.create(2, np.float64)).data
    assert np.allclose(out.mean(axis=(1, 2)), [1.0, -1.0], atol=1e-12)
    assert np.allclose(out.std(axis=(1, 2)), [2.0, 0.5], atol=1e-3)


def test_batchnorm_constant_channel_returns_beta():
    x = t(np.full((2, 4, 4), 7.0))
    gamma, beta = t(np.ones(2)), t(np.array([0.25, -0.5]))
    out = batchnorm2d(x, gamma, beta, BNState.create(2, np.float64)).data
    assert np.allclose(out[0], 0.25) and np.allclose(out[1], -0.5)


def test_batchnorm_running_stat_momentum():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((2, 5, 5)) + 3.0
    state = BNState.create(2, np.float64)
    batchnorm2d(t(x), t(np.ones(2)), t(np.zeros(2)), state)
    mu, var = x.mean(axis=(1, 2)), x.var(axis=(1, 2))
    assert np.allclose(state.running_mean, 0.1 * mu, atol=1e-12)
    assert np.allclose(state.running_var, 1.0 + 0.1 * (var - 1.0), atol=1e-12)
    # second call folds in again
    batchnorm2d(t(x), t(np.ones(2)), t(np.zeros(2)), state)
    assert np.allclose(state.running_mean, 0.1 * mu + 0.1 * (mu - 0.1 * mu))


def test_batchnorm_eval_uses_running_stats():
    x = t(np.full((1, 2, 2), 5.0))
    state = BNState(np.array([3.0]), np.array([4.0]))
    out = batchnorm2d(x, t(np.ones(1)), t(np.zeros(1)), state,
                      training=False).data
    assert np.allclose(out, (5.0 - 3.0) / np.sqrt(4.0 + 1e-5))
    # eval mode must not touch the buffers
    assert state.running_mean[0] == 3.0 and state.running_var[0] == 4.0


def test_batchnorm_state_copy_is_independent():
    a = BNState.create(2)
    b = a.copy()
    b.running_mean[0] = 9.0
    assert a.running_mean[0] == 0.0


def test_batchnorm_shape_errors():
    x = t(np.zeros((2, 3, 3)))
    with pytest.raises(ConfigError):
        batchnorm2d(x, t(np.ones(3)), t(np.zeros(2)), BNState.create(2))
    with pytest.raises(ConfigError):
        batchnorm2d(t(np.zeros((2, 3))), t(np.ones(2)), t(np.zeros(2)),
                    BNState.create(2))


# -- pooling and broadcast ----------------------------------------------------


def test_global_avg_pool():
    x = t(np.arange(8, dtype=np.float64).reshape(2, 2, 2))
    out = global_avg_pool(x)
    assert out.shape == (2, 1, 1)
    assert out.data[0, 0, 0] == 1.5 and out.data[1, 0, 0] == 5.5


def test_broadcast_add_tiles_first_argument():
    a = t(np.array([1.0, -1.0]).reshape(2, 1, 1))
    b = t(np.zeros((2, 3, 3)))
    out = broadcast_add(a, b).data
    assert np.all(out[0] == 1.0) and np.all(out[1] == -1.0)
    with pytest.raises(ConfigError):
        broadcast_add(b, b)


# -- init helper --------------------------------------------------------------


def test_kaiming_uniform_bound_and_determinism():
    rng = np.random.default_rng(6)
    w = kaiming_uniform(rng, (64, 9), fan_in=9)
    bound = np.sqrt(6.0 / 9)
    assert w.shape == (64, 9) and w.dtype == np.float32
    assert np.all(np.abs(w) <= bound)
    assert np.max(np.abs(w)) > 0.8 * bound  # actually fills the range
    again = kaiming_uniform(np.random.default_rng(6), (64, 9), fan_in=9)
    assert np.array_equal(w, again)
