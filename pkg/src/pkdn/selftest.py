"""Gradient-check and invariant suite run by ``pkdn selftest``.

Every check runs in 64-bit mode and reports the max relative error between
tape gradients and central differences (epsilon 1e-6); invariant checks report
0.0 on success.  A check passes when its error is at most ``TOLERANCE``.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import blocks, ops
from .gradcheck import gradient_check
from .losses import student_loss, teacher_loss
from .networks import NetConfig, build_student, build_teacher
from .resample import bicubic_upsample
from .tensor import Tensor, element_mode

TOLERANCE = 1e-5
EPSILON = 1e-6
TOY = NetConfig(base_channels=8, stages=2, scale=4, n_classes=4, rcab_per_group=1, reduction=4,
                spatial_kernel=3, element_mode="float64", seed=7)
TOY_HR = 32

BLOCK_NAMES = ("channel_attention", "spatial_attention", "rcab", "rcag", "pfb",
               "projection_function", "ffb", "downsample_block", "upsample_block")


@dataclass
class CheckResult:
    name: str
    error: float
    passed: bool
    detail: str = ""
    seconds: float = 0.0


def away_from_kinks(x: np.ndarray, margin: float = 1e-3) -> np.ndarray:
    """Push every entry at least ``margin`` away from zero."""
    return np.where(x >= 0, x + margin, x - margin)


def spaced_channels(rng, shape, gap: float = 1e-2) -> np.ndarray:
    """Random tensor whose channel maxima beat the runner-up by >= gap."""
    n, c, h, w = shape
    base = np.stack([rng.permutation(c) for _ in range(n * h * w)]).reshape(n, h, w, c)
    return (base.transpose(0, 3, 1, 2) * gap + rng.uniform(-1, 1, (n, 1, h, w))).astype(np.float64)


def leaf(arr) -> Tensor:
    return Tensor(arr, requires_grad=True, dtype=np.float64)


def _grad(name, f, params, max_coords=None, seed=0) -> CheckResult:
    rep = gradient_check(f, params, EPSILON, max_coords=max_coords, seed=seed)
    detail = f"{rep.checked} coords"
    if rep.skipped_kinks:
        detail += f", {rep.skipped_kinks} skipped at kinks"
    return CheckResult(name, rep.max_rel_error, rep.max_rel_error <= TOLERANCE, detail)


def _projector(rng, shape):
    """Random linear read-out sum(r * (y - y0)), y0 being the first output seen.

    Subtracting the constant y0 leaves the gradient unchanged but keeps the
    scalar near zero, so central differences are not limited by the rounding
    of a large loss value (about ulp(f) / 2 epsilon).
    """
    r = rng.normal(size=shape)
    ref = []

    def proj(t):
        if not ref:
            ref.append(Tensor(t.data.copy(), dtype=t.dtype))
        return ops.weighted_sum(ops.sub(t, ref[0]), r)

    return proj


def op_checks(rng) -> list[tuple[str, Callable[[], CheckResult]]]:
    checks = []

    def add(name, build):
        checks.append((name, build))

    def conv():
        x = leaf(rng.normal(size=(2, 3, 5, 5)))
        w = leaf(rng.normal(size=(4, 3, 3, 3)))
        b = leaf(rng.normal(size=(1, 4, 1, 1)))
        proj = _projector(rng, (2, 4, 5, 5))
        return _grad("conv2d", lambda: proj(ops.conv2d(x, w, b, 1, 1)), [x, w, b])

    def conv_strided():
        x = leaf(rng.normal(size=(1, 2, 7, 6)))
        w = leaf(rng.normal(size=(3, 2, 3, 3)))
        b = leaf(rng.normal(size=(1, 3, 1, 1)))
        proj = _projector(rng, (1, 3, 4, 3))
        return _grad("conv2d_stride2", lambda: proj(ops.conv2d(x, w, b, 2, 1)), [x, w, b])

    def conv_relu():
        x = leaf(rng.normal(size=(1, 2, 6, 6)))
        w = leaf(rng.normal(size=(3, 2, 3, 3)))
        b = leaf(rng.normal(size=(1, 3, 1, 1)))
        proj = _projector(rng, (1, 3, 6, 6))
        return _grad("conv2d_relu", lambda: proj(ops.relu(ops.conv2d(x, w, b, 1, 1))), [x, w, b])

    def unary(name, fn, shape, gen=None):
        def run():
            x = leaf(gen(shape) if gen else rng.normal(size=shape))
            proj = _projector(rng, fn(Tensor(x.data, dtype=np.float64)).shape)
            return _grad(name, lambda: proj(fn(x)), [x])
        return run

    def binary(name, fn, sx, sy):
        def run():
            x, y = leaf(rng.normal(size=sx)), leaf(rng.normal(size=sy))
            proj = _projector(rng, fn(x, y).shape)
            return _grad(name, lambda: proj(fn(x, y)), [x, y])
        return run

    def scalar(name, fn, shape, gen=None):
        def run():
            x = leaf(gen(shape) if gen else rng.normal(size=shape))
            return _grad(name, lambda: fn(x), [x])
        return run

    add("conv2d", conv)
    add("conv2d_stride2", conv_strided)
    add("conv2d_relu", conv_relu)
    add("pixel_shuffle", unary("pixel_shuffle", lambda t: ops.pixel_shuffle(t, 2), (1, 8, 3, 3)))
    add("pixel_unshuffle", unary("pixel_unshuffle", lambda t: ops.pixel_unshuffle(t, 2), (1, 2, 4, 6)))
    add("nearest_resize", unary("nearest_resize", lambda t: ops.nearest_resize(t, 7, 9), (1, 2, 3, 4)))
    mh, mw = rng.normal(size=(6, 3)), rng.normal(size=(8, 4))
    add("resample", unary("resample", lambda t: ops.resample(t, mh, mw), (2, 1, 3, 4)))
    add("add", binary("add", ops.add, (1, 2, 3, 3), (1, 2, 3, 3)))
    add("sub", binary("sub", ops.sub, (1, 2, 3, 3), (1, 2, 3, 3)))
    add("scale", unary("scale", lambda t: ops.scale(t, -1.7), (1, 2, 3, 3)))
    add("mul_broadcast_channel", binary("mul_broadcast_channel", ops.mul_broadcast, (2, 3, 4, 4), (2, 3, 1, 1)))
    add("mul_broadcast_spatial", binary("mul_broadcast_spatial", ops.mul_broadcast, (2, 3, 4, 4), (2, 1, 4, 4)))
    add("relu", unary("relu", ops.relu, (1, 3, 4, 4), lambda s: away_from_kinks(rng.normal(size=s))))
    add("sigmoid", unary("sigmoid", ops.sigmoid, (1, 3, 4, 4)))
    add("concat_channels", binary("concat_channels", ops.concat_channels, (1, 2, 3, 3), (1, 3, 3, 3)))
    add("global_avg_pool", unary("global_avg_pool", ops.global_avg_pool, (2, 3, 4, 5)))
    add("channel_mean_map", unary("channel_mean_map", ops.channel_mean_map, (2, 3, 4, 5)))
    add("channel_max_map", unary("channel_max_map", ops.channel_max_map, (2, 4, 3, 3),
                                 lambda s: spaced_channels(rng, s)))
    add("mean_abs", scalar("mean_abs", ops.mean_abs, (1, 2, 3, 3), lambda s: away_from_kinks(rng.normal(size=s))))
    add("mean", scalar("mean", ops.mean, (1, 2, 3, 3)))
    return checks


def _randomize(module: blocks.Module, rng) -> None:
    """Fan-in scaled random weights and small random biases.

    Keeps activations of order one through stacked blocks; large activations
    would raise the rounding noise of the finite differences.
    """
    for name, p in module.named_parameters():
        if name.endswith("bias"):
            p.data[...] = rng.normal(0.0, 0.1, p.shape)
        else:
            p.data[...] = rng.normal(0.0, 1.0 / np.sqrt(np.prod(p.shape[1:])), p.shape)


def block_checks(rng) -> list[tuple[str, Callable[[], CheckResult]]]:
    c, ncls = 8, 4

    def single(name, make, shape):
        def run():
            blk = make()
            _randomize(blk, rng)
            x = leaf(rng.normal(size=shape))
            proj = _projector(rng, blk(Tensor(x.data, dtype=np.float64)).shape)
            return _grad(name, lambda: proj(blk(x)), [x] + blk.parameters())
        return run

    def pfb():
        blk = blocks.PFB(c, ncls, 4, 3, rng)
        _randomize(blk, rng)
        f = leaf(rng.normal(size=(1, c, 16, 16)))
        parsing = leaf(rng.uniform(0, 1, size=(1, ncls, 8, 8)))
        proj = _projector(rng, (1, c, 16, 16))
        return _grad("pfb", lambda: proj(blk(f, parsing)), [f, parsing] + blk.parameters(), max_coords=40)

    def ffb():
        blk = blocks.FFB(c, 4, rng)
        _randomize(blk, rng)
        f = leaf(rng.normal(size=(2, c, 6, 6)))
        fp = leaf(rng.normal(size=(2, c, 6, 6)))
        proj = _projector(rng, (2, c, 6, 6))
        return _grad("ffb", lambda: proj(blk(f, fp)), [f, fp] + blk.parameters(), max_coords=60)

    return [
        ("channel_attention", single("channel_attention", lambda: blocks.ChannelAttention(c, 4, rng), (2, c, 5, 5))),
        ("spatial_attention", single("spatial_attention", lambda: blocks.SpatialAttention(c, 3, rng), (2, c, 5, 5))),
        ("rcab", single("rcab", lambda: blocks.RCAB(c, 4, rng), (1, c, 6, 6))),
        ("rcag", single("rcag", lambda: blocks.RCAG(c, 4, 2, rng), (1, c, 6, 6))),
        ("pfb", pfb),
        ("projection_function", single("projection_function", lambda: blocks.ProjectionFunction(c, rng), (1, c, 6, 6))),
        ("ffb", ffb),
        ("downsample_block", single("downsample_block", lambda: blocks.Downsample(c, rng), (1, c, 6, 6))),
        ("upsample_block", single("upsample_block", lambda: blocks.Upsample(c, rng), (1, c, 4, 4))),
    ]


def _toy_inputs(rng, n=1):
    lr = rng.uniform(0, 1, size=(n, 3, TOY_HR // TOY.scale, TOY_HR // TOY.scale))
    labels = rng.integers(0, TOY.n_classes, size=(n, TOY_HR, TOY_HR))
    parsing = (np.arange(TOY.n_classes)[None, :, None, None] == labels[:, None]).astype(np.float64)
    return lr, parsing


def network_checks(rng) -> list[tuple[str, Callable[[], CheckResult]]]:
    def teacher():
        net = build_teacher(TOY)
        lr, parsing = _toy_inputs(rng)
        proj = _projector(rng, (1, 3, TOY_HR, TOY_HR))
        return _grad("teacher_network", lambda: proj(net(lr, parsing).sr), net.parameters(), max_coords=3, seed=1)

    def student():
        net = build_student(TOY)
        lr, _ = _toy_inputs(rng)
        x = leaf(lr)
        proj = _projector(rng, (1, 3, TOY_HR, TOY_HR))
        return _grad("student_network", lambda: proj(net(x).sr), [x] + net.parameters(), max_coords=3, seed=2)

    def t_loss():
        sr = leaf(rng.uniform(0, 1, (1, 3, 8, 8)))
        hr = Tensor(sr.data + away_from_kinks(rng.normal(0, 0.1, sr.shape)), dtype=np.float64)
        return _grad("teacher_loss", lambda: teacher_loss(sr, hr), [sr])

    def s_loss():
        teacher_net = build_teacher(TOY).freeze()
        net = build_student(TOY)
        lr, parsing = _toy_inputs(rng)
        rt = teacher_net(lr, parsing)
        s0 = net(lr)

        def near(t):
            # targets close to the student's outputs keep the loss small
            return Tensor(t.data + away_from_kinks(rng.normal(0, 0.05, t.shape)), dtype=np.float64)

        hr, t_sr = near(s0.sr), near(s0.sr)
        t_taps = [near(a) for a in s0.taps]
        assert [a.shape for a in t_taps] == [a.shape for a in rt.taps]

        def f():
            rs = net(lr)
            return student_loss(rs.sr, hr, t_sr, t_taps, rs.taps, TOY)[0]

        return _grad("student_loss", f, net.parameters(), max_coords=2, seed=3)

    return [("teacher_network", teacher), ("student_network", student),
            ("teacher_loss", t_loss), ("student_loss", s_loss)]


def _invariant(name, ok: bool, detail: str = "") -> CheckResult:
    return CheckResult(name, 0.0 if ok else float("inf"), ok, detail)


def invariant_checks(rng) -> list[tuple[str, Callable[[], CheckResult]]]:
    def shuffle_roundtrip():
        for r in (2, 4):
            x = Tensor(rng.normal(size=(2, 3 * r * r, 4, 4)), dtype=np.float64)
            y = Tensor(rng.normal(size=(2, 3, 4 * r, 4 * r)), dtype=np.float64)
            if not np.array_equal(ops.pixel_unshuffle(ops.pixel_shuffle(x, r), r).data, x.data):
                return _invariant("shuffle_roundtrip", False, f"unshuffle(shuffle) r={r}")
            if not np.array_equal(ops.pixel_shuffle(ops.pixel_unshuffle(y, r), r).data, y.data):
                return _invariant("shuffle_roundtrip", False, f"shuffle(unshuffle) r={r}")
        return _invariant("shuffle_roundtrip", True)

    def conv_identity():
        x = Tensor(rng.normal(size=(2, 3, 5, 5)), dtype=np.float64)
        w = Tensor(np.eye(3).reshape(3, 3, 1, 1), dtype=np.float64)
        return _invariant("conv_identity", np.array_equal(ops.conv2d(x, w).data, x.data))

    def zero_weight_bicubic():
        lr, parsing = _toy_inputs(rng, 2)
        expect = bicubic_upsample(lr, TOY.scale)
        t = build_teacher(TOY).fill_(0.0)
        s = build_student(TOY).fill_(0.0)
        ok = np.array_equal(t(lr, parsing).sr.data, expect) and np.array_equal(s(lr).sr.data, expect)
        return _invariant("zero_weight_bicubic", ok)

    def tap_congruence():
        for i in range(10):
            stages = int(rng.integers(1, 4))
            cfg = NetConfig(base_channels=4 * int(rng.integers(1, 3)), stages=stages, scale=int(2 ** rng.integers(1, 4)),
                            n_classes=int(rng.integers(1, 6)), rcab_per_group=1, reduction=2, spatial_kernel=3,
                            element_mode="float64", seed=i)
            hr = 2 ** stages * int(rng.integers(1, 3)) * cfg.scale
            hr = max(hr, cfg.scale * 2 ** stages)
            lr = rng.uniform(0, 1, (1, 3, hr // cfg.scale, hr // cfg.scale))
            parsing = np.zeros((1, cfg.n_classes, hr, hr))
            parsing[:, 0] = 1
            tt = build_teacher(cfg)(lr, parsing).taps
            ts = build_student(cfg)(lr).taps
            if len(tt) != 2 * stages or [t.shape for t in tt] != [t.shape for t in ts]:
                return _invariant("tap_congruence", False, f"cfg {i}")
        return _invariant("tap_congruence", True, "10 random configs")

    return [("shuffle_roundtrip", shuffle_roundtrip), ("conv_identity", conv_identity),
            ("zero_weight_bicubic", zero_weight_bicubic), ("tap_congruence", tap_congruence)]


def all_checks(seed: int = 0):
    rng = np.random.default_rng(seed)
    return op_checks(rng) + block_checks(rng) + network_checks(rng) + invariant_checks(rng)


def run_selftest(seed: int = 0, emit: Callable[[str], None] = print) -> tuple[bool, list[CheckResult]]:
    results = []
    with element_mode("float64"):
        for name, check in all_checks(seed):
            t0 = time.perf_counter()
            try:
                res = check()
            except Exception as exc:  # report and keep going
                res = CheckResult(name, float("inf"), False, f"{type(exc).__name__}: {exc}")
            res.seconds = time.perf_counter() - t0
            results.append(res)
            mark = "PASS" if res.passed else "FAIL"
            emit(f"{mark}  {res.name:<24} max_rel_err={res.error:.3e}  ({res.detail}; {res.seconds:.2f}s)")
    failed = [r.name for r in results if not r.passed]
    if failed:
        emit(f"selftest FAILED: {', '.join(failed)}")
    else:
        emit(f"selftest passed: {len(results)} checks, tolerance {TOLERANCE:g}")
    return not failed, results
