import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pkdn import _backend, _kernels_py, ops
from pkdn.gradcheck import gradient_check
from pkdn.tensor import ShapeError, Tape, Tensor, backward


def leaf(a):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)


def test_conv_ones_3x3_counts_neighbours(f64, backend):
    x = Tensor(np.ones((1, 1, 3, 3)))
    w = Tensor(np.ones((1, 1, 3, 3)))
    y = ops.conv2d(x, w, padding=1).data[0, 0]
    np.testing.assert_array_equal(y, [[4, 6, 4], [6, 9, 6], [4, 6, 4]])


def test_conv_matches_direct_loop(f64, backend, rng):
    x = rng.standard_normal((2, 3, 6, 5))
    w = rng.standard_normal((4, 3, 3, 3))
    b = rng.standard_normal((4,))
    for stride in (1, 2):
        y = ops.conv2d(Tensor(x), Tensor(w), Tensor(b.reshape(1, 4, 1, 1)), stride=stride, padding=1).data
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        oh, ow = y.shape[2:]
        ref = np.zeros_like(y)
        for i in range(oh):
            for j in range(ow):
                patch = xp[:, :, i * stride:i * stride + 3, j * stride:j * stride + 3]
                ref[:, :, i, j] = np.einsum("nckl,ockl->no", patch, w) + b
        np.testing.assert_allclose(y, ref, rtol=1e-12, atol=1e-12)


def test_conv_errors_name_dimension(f64):
    with pytest.raises(ShapeError, match="channel"):
        ops.conv2d(Tensor(np.ones((1, 2, 4, 4))), Tensor(np.ones((1, 3, 3, 3))), padding=1)


def test_backends_bit_identical(rng):
    if len(_backend.available) < 2:
        pytest.skip("compiled kernels not built")
    from pkdn import _ckernels
    for dtype in (np.float32, np.float64):
        x = rng.standard_normal((2, 3, 7, 6)).astype(dtype)
        for k, stride, pad in ((3, 1, 1), (3, 2, 1), (1, 1, 0), (7, 1, 3)):
            a = _kernels_py.im2col(x, k, stride, pad)
            b = _ckernels.im2col(x, k, stride, pad)
            assert a.dtype == b.dtype and np.array_equal(a, b)
            g = rng.standard_normal(a.shape).astype(dtype)
            assert np.array_equal(_kernels_py.col2im(g, x.shape, k, stride, pad),
                                  _ckernels.col2im(g, x.shape, k, stride, pad))


def test_col2im_is_adjoint_of_im2col(rng):
    x = rng.standard_normal((2, 3, 5, 5))
    cols = _kernels_py.im2col(x, 3, 2, 1)
    g = rng.standard_normal(cols.shape)
    lhs = np.vdot(cols, g)
    rhs = np.vdot(x, _kernels_py.col2im(g, x.shape, 3, 2, 1))
    assert abs(lhs - rhs) < 1e-10


def test_pixel_shuffle_layout():
    # channel c*r*r + i*r + j lands at (c, y*r + i, x*r + j)
    x = np.arange(8, dtype=np.float64).reshape(1, 8, 1, 1)
    y = ops.pixel_shuffle(Tensor(x), 2).data
    np.testing.assert_array_equal(y[0, 0], [[0, 1], [2, 3]])
    np.testing.assert_array_equal(y[0, 1], [[4, 5], [6, 7]])


@settings(max_examples=30, deadline=None)
@given(r=st.sampled_from([2, 3, 4]), c=st.integers(1, 3), h=st.integers(1, 3), w=st.integers(1, 3))
def test_shuffle_roundtrip(r, c, h, w):
    x = np.random.default_rng(r * 100 + c).standard_normal((2, c * r * r, h, w))
    y = ops.pixel_unshuffle(ops.pixel_shuffle(Tensor(x), r), r).data
    assert np.array_equal(y, x.astype(y.dtype))
    z = ops.pixel_shuffle(ops.pixel_unshuffle(Tensor(x.reshape(2, c, h * r, w * r)), r), r).data
    assert np.array_equal(z, x.reshape(2, c, h * r, w * r).astype(z.dtype))


def test_unshuffle_needs_divisible():
    with pytest.raises(ShapeError):
        ops.pixel_unshuffle(Tensor(np.zeros((1, 1, 3, 4))), 2)


def test_global_avg_pool_value(f64):
    x = Tensor(np.array([1.0, 2.0, 3.0, 5.0]).reshape(1, 1, 2, 2))
    assert ops.global_avg_pool(x).data.item() == 2.75


def test_mean_abs_value_and_zero_subgradient(f64):
    x = leaf(np.array([-1.0, 0.0, 2.0, -3.0]).reshape(1, 1, 2, 2))
    with Tape():
        loss = ops.mean_abs(x)
    assert loss.item() == 1.5
    backward(loss)
    np.testing.assert_array_equal(x.grad.ravel(), [-0.25, 0.0, 0.25, -0.25])


def test_channel_max_grad_goes_to_first_argmax(f64):
    x = leaf(np.array([1.0, 1.0, 0.5]).reshape(1, 3, 1, 1))
    with Tape():
        loss = ops.mean(ops.channel_max_map(x))
    backward(loss)
    np.testing.assert_array_equal(x.grad.ravel(), [1.0, 0.0, 0.0])


def test_sigmoid_saturates_without_overflow(f64):
    y = ops.sigmoid(Tensor(np.array([-1e4, 0.0, 1e4]).reshape(1, 3, 1, 1))).data.ravel()
    assert np.all(np.isfinite(y))
    assert 0 < y[0] < 1e-300 or y[0] > 0
    assert y[1] == 0.5 and y[2] < 1.0


def test_add_requires_identical_shapes():
    with pytest.raises(ShapeError):
        ops.add(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 2, 1))))


def test_mul_broadcast_rejects_other_gates():
    with pytest.raises(ShapeError):
        ops.mul_broadcast(Tensor(np.zeros((1, 2, 2, 2))), Tensor(np.zeros((1, 2, 2, 1))))


def test_nearest_resize_repeats(f64):
    x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2))
    y = ops.nearest_resize(x, 4, 4).data[0, 0]
    np.testing.assert_array_equal(y, np.kron([[1, 2], [3, 4]], np.ones((2, 2))))


@pytest.mark.parametrize("name,fn,shape", [
    ("conv", lambda x, w: ops.conv2d(x, w, padding=1), (2, 3, 5, 5)),
    ("conv_stride2", lambda x, w: ops.conv2d(x, w, stride=2, padding=1), (1, 3, 6, 6)),
    ("sigmoid", lambda x, w: ops.sigmoid(x), (1, 2, 3, 3)),
    ("concat", lambda x, w: ops.concat_channels(x, ops.scale(x, 2.0)), (1, 2, 3, 3)),
    ("shuffle", lambda x, w: ops.pixel_shuffle(x, 2), (1, 8, 2, 2)),
    ("channel_mean", lambda x, w: ops.channel_mean_map(x), (2, 3, 3, 3)),
])
def test_op_gradients(f64, backend, rng, name, fn, shape):
    x = leaf(rng.standard_normal(shape))
    w = leaf(rng.standard_normal((4, shape[1], 3, 3)) * 0.3)
    probe = None

    def f():
        nonlocal probe
        y = fn(x, w)
        if probe is None:
            probe = np.random.default_rng(0).standard_normal(y.shape)
        return ops.weighted_sum(y, probe)

    rep = gradient_check(f, [x, w] if name.startswith("conv") else [x], max_coords=30)
    assert rep.max_rel_error <= 1e-5, rep


def test_corrupted_backward_is_caught(f64, rng, monkeypatch):
    """Negative control: a wrong relu derivative must fail the check."""
    real = ops.relu

    def bad_relu(x):
        mask = x.data > 0
        return ops._emit(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask * 1.5,))

    x = leaf(rng.standard_normal((1, 2, 4, 4)) + 0.05)
    probe = rng.standard_normal((1, 2, 4, 4))
    monkeypatch.setattr(ops, "relu", bad_relu)
    rep = gradient_check(lambda: ops.weighted_sum(ops.relu(x), probe), [x])
    assert rep.max_rel_error > 1e-2
    monkeypatch.setattr(ops, "relu", real)
    rep = gradient_check(lambda: ops.weighted_sum(ops.relu(x), probe), [x])
    assert rep.max_rel_error <= 1e-5
