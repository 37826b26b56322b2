import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pkdn.networks import ConfigError, NetConfig, PKDNet, build_student, build_teacher
from pkdn.resample import bicubic_upsample
from pkdn.tensor import ShapeError, no_grad


def small(**kw):
    return NetConfig(**{"base_channels": 8, "rcab_per_group": 1, "spatial_kernel": 3, **kw})


def test_topology_stage3_taps():
    cfg = small(stages=3, scale=8)
    t = build_teacher(cfg)
    lr = np.random.default_rng(0).random((1, 3, 16, 16))
    parsing = np.ones((1, 4, 128, 128))
    with no_grad():
        out = t(lr, parsing)
    assert out.sr.shape == (1, 3, 128, 128)
    assert len(out.taps) == 6
    assert [tp.shape[2] for tp in out.taps] == [64, 32, 16, 32, 64, 128]


def test_student_shapes_and_no_parsing():
    s = build_student(small())
    with no_grad():
        out = s(np.zeros((2, 3, 8, 8)))
    assert out.sr.shape == (2, 3, 32, 32)
    assert [tp.shape for tp in out.taps] == [(2, 8, 16, 16), (2, 8, 8, 8), (2, 8, 16, 16), (2, 8, 32, 32)]


def test_teacher_requires_parsing():
    t = build_teacher(small())
    with pytest.raises(ShapeError):
        t(np.zeros((1, 3, 8, 8)))
    with pytest.raises(ShapeError):
        t(np.zeros((1, 3, 8, 8)), np.zeros((1, 4, 16, 16)))


def test_indivisible_output():
    with pytest.raises(ShapeError, match="divisible"):
        build_student(small(stages=3, scale=2))(np.zeros((1, 3, 6, 6)))


@pytest.mark.parametrize("kw", [{"scale": 3}, {"stages": 0}, {"reduction": 3}, {"spatial_kernel": 4},
                                {"element_mode": "half"}, {"lambda_fs": -1.0}])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        small(**kw)


def test_config_dict_roundtrip():
    cfg = small(stages=3)
    assert NetConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError):
        NetConfig.from_dict({**cfg.to_dict(), "bogus": 1})


def test_zero_weights_reproduce_bicubic():
    cfg = small()
    lr = np.random.default_rng(2).random((1, 3, 8, 8)).astype(np.float32)
    for net in (build_teacher(cfg), build_student(cfg)):
        net.fill_(0.0)
        with no_grad():
            sr = net(lr, np.ones((1, 4, 32, 32))).sr.data if net.role == "teacher" else net(lr).sr.data
        assert np.array_equal(sr, bicubic_upsample(lr, 4))


def test_ablation_teacher_ignores_parsing_planes():
    cfg = small(use_pfb=False)
    t = build_teacher(cfg)
    assert not any("proj_parsing" in n for n, _ in t.named_parameters())
    lr = np.random.default_rng(0).random((1, 3, 8, 8))
    with no_grad():
        a = t(lr, np.zeros((1, 4, 32, 32))).sr.data
        b = t(lr, np.ones((1, 4, 32, 32))).sr.data
    assert np.array_equal(a, b)


def test_no_ffb_has_no_ffb_params():
    assert not any(".ffb." in n for n, _ in build_teacher(small(use_ffb=False)).named_parameters())


def test_same_seed_same_weights():
    a, b = build_student(small(seed=3)), build_student(small(seed=3))
    assert all(np.array_equal(p.data, q.data) for p, q in zip(a.parameters(), b.parameters()))


def test_parameter_names_unique():
    names = [n for n, _ in build_teacher(small()).named_parameters()]
    assert len(names) == len(set(names))


@settings(max_examples=10, deadline=None)
@given(stages=st.integers(1, 3), c=st.sampled_from([4, 8]), scale=st.sampled_from([2, 4, 8]),
       blocks=st.integers(1, 2))
def test_tap_congruence(stages, c, scale, blocks):
    cfg = NetConfig(base_channels=c, stages=stages, scale=scale, blocks_per_stage=blocks, rcab_per_group=1,
                    reduction=4, spatial_kernel=3)
    size = max(2 ** stages // scale, 1) * 2
    with no_grad():
        t = PKDNet(cfg, "teacher")(np.zeros((1, 3, size, size)), np.ones((1, 4, size * scale, size * scale)))
        s = PKDNet(cfg, "student")(np.zeros((1, 3, size, size)))
    assert [x.shape for x in t.taps] == [x.shape for x in s.taps]
    assert len(t.taps) == 2 * stages
