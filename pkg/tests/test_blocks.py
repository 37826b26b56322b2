import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pkdn import blocks, ops
from pkdn.gradcheck import gradient_check
from pkdn.tensor import ShapeError, Tensor


def conv_count(i, o, k):
    return o * i * k * k + o


def rng():
    return np.random.default_rng(0)


def x_of(shape, seed=0):
    return Tensor(np.random.default_rng(seed).standard_normal(shape))


@pytest.mark.parametrize("c,r", [(8, 4), (16, 4), (64, 16)])
def test_census(c, r):
    ca = conv_count(c, c // r, 1) + conv_count(c // r, c, 1)
    sa = conv_count(2, 1, 7)
    assert blocks.ChannelAttention(c, r, rng()).num_parameters() == ca
    assert blocks.SpatialAttention(c, 7, rng()).num_parameters() == sa
    rcab = 2 * conv_count(c, c, 3) + ca
    assert blocks.RCAB(c, r, rng()).num_parameters() == rcab
    assert blocks.RCAG(c, r, 3, rng()).num_parameters() == 3 * rcab + conv_count(c, c, 3)
    pfb = conv_count(4, c, 3) + conv_count(c, c, 3) + 2 * conv_count(2 * c, c, 3) + ca + sa
    assert blocks.PFB(c, 4, r, 7, rng()).num_parameters() == pfb
    assert blocks.FFB(c, r, rng()).num_parameters() == 2 * conv_count(c, c, 3) + ca
    assert blocks.Downsample(c, rng()).num_parameters() == conv_count(4 * c, c, 3)
    assert blocks.Upsample(c, rng()).num_parameters() == conv_count(c, 4 * c, 3)


def test_zero_weight_channel_attention_halves(f64):
    ca = blocks.ChannelAttention(8, 4, rng()).fill_(0.0)
    x = x_of((2, 8, 5, 5))
    np.testing.assert_array_equal(ca(x).data, 0.5 * x.data)


def test_zero_weight_spatial_attention_halves(f64):
    sa = blocks.SpatialAttention(8, 7, rng()).fill_(0.0)
    x = x_of((1, 8, 6, 6))
    np.testing.assert_array_equal(sa(x).data, 0.5 * x.data)


@pytest.mark.parametrize("make", [
    lambda: blocks.RCAB(8, 4, rng()),
    lambda: blocks.RCAG(8, 4, 2, rng()),
])
def test_zero_weight_residual_blocks_are_identity(f64, make):
    x = x_of((1, 8, 6, 6))
    np.testing.assert_array_equal(make().fill_(0.0)(x).data, x.data)


def test_zero_weight_pfb_is_identity(f64):
    f = x_of((2, 8, 8, 8))
    p = Tensor(np.ones((2, 4, 16, 16)))
    np.testing.assert_array_equal(blocks.PFB(8, 4, 4, 7, rng()).fill_(0.0)(f, p).data, f.data)


def test_zero_weight_ffb(f64):
    f, prev = x_of((1, 8, 4, 4), 1), x_of((1, 8, 4, 4), 2)
    np.testing.assert_array_equal(blocks.FFB(8, 4, rng()).fill_(0.0)(f, prev).data, 0.5 * f.data)


def test_pfb_validates_inputs(f64):
    pfb = blocks.PFB(8, 4, 4, 7, rng())
    with pytest.raises(ShapeError, match="n_classes"):
        pfb(x_of((1, 8, 8, 8)), Tensor(np.zeros((1, 5, 8, 8))))
    with pytest.raises(ShapeError, match="batch"):
        pfb(x_of((1, 8, 8, 8)), Tensor(np.zeros((2, 4, 8, 8))))


def test_ffb_shape_mismatch():
    with pytest.raises(ShapeError):
        blocks.FFB(8, 4, rng())(x_of((1, 8, 4, 4)), x_of((1, 8, 2, 2)))


def test_reduction_must_divide():
    with pytest.raises(ValueError):
        blocks.ChannelAttention(10, 4, rng())


def test_downsample_odd():
    with pytest.raises(ShapeError):
        blocks.Downsample(4, rng())(x_of((1, 4, 5, 4)))


@settings(max_examples=15, deadline=None)
@given(c=st.sampled_from([4, 8]), n=st.integers(1, 2), h=st.sampled_from([2, 4, 6]), w=st.sampled_from([2, 4]))
def test_block_shapes(c, n, h, w):
    x = x_of((n, c, h, w))
    r = np.random.default_rng(c)
    assert blocks.RCAG(c, 4, 1, r)(x).shape == (n, c, h, w)
    assert blocks.Downsample(c, r)(x).shape == (n, c, h // 2, w // 2)
    assert blocks.Upsample(c, r)(x).shape == (n, c, 2 * h, 2 * w)
    p = Tensor(np.ones((n, 3, 2 * h, 2 * w)))
    assert blocks.PFB(c, 3, 4, 3, r)(x, p).shape == (n, c, h, w)


def test_init_is_seeded():
    a = blocks.RCAB(8, 4, np.random.default_rng(5))
    b = blocks.RCAB(8, 4, np.random.default_rng(5))
    for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert na == nb and np.array_equal(pa.data, pb.data)
    assert all(not p.data.any() for n, p in a.named_parameters() if n.endswith("bias"))


@pytest.mark.parametrize("name", ["rcab", "ffb", "pfb"])
def test_block_gradients(f64, name):
    r = np.random.default_rng(3)
    if name == "rcab":
        mod = blocks.RCAB(8, 4, r)
        inputs = [Tensor(r.standard_normal((1, 8, 4, 4)), requires_grad=True)]
    elif name == "ffb":
        mod = blocks.FFB(8, 4, r)
        inputs = [Tensor(r.standard_normal((1, 8, 4, 4)), requires_grad=True) for _ in range(2)]
    else:
        mod = blocks.PFB(8, 4, 4, 3, r)
        inputs = [Tensor(r.standard_normal((1, 8, 4, 4)), requires_grad=True),
                  Tensor(r.random((1, 4, 8, 8)), requires_grad=True)]
    probe = r.standard_normal((1, 8, 4, 4))
    rep = gradient_check(lambda: ops.weighted_sum(mod(*inputs), probe), inputs + mod.parameters(), max_coords=8)
    assert rep.max_rel_error <= 1e-5, rep
