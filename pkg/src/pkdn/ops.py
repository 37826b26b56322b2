"""Differentiable primitives over (n, c, h, w) tensors.

Every op is pure: it reads ``.data`` of its inputs, allocates a fresh output
and, when a tape is active and any input requires gradients, records a
closure computing the input gradients from the output gradient.
"""
from __future__ import annotations

import numpy as np

from . import _backend
from .tensor import ShapeError, Tensor, _state

__all__ = [
    "conv2d",
    "pixel_shuffle",
    "pixel_unshuffle",
    "nearest_resize",
    "resample",
    "add",
    "sub",
    "scale",
    "mul_broadcast",
    "relu",
    "sigmoid",
    "concat_channels",
    "global_avg_pool",
    "channel_mean_map",
    "channel_max_map",
    "mean_abs",
    "mean",
    "weighted_sum",
    "kink_log",
]


class _KinkLog:
    """Collects branch decisions (relu signs, max argmaxes) while active."""

    def __init__(self):
        self.entries = []

    def __enter__(self):
        self._prev = getattr(_state, "kinks", None)
        _state.kinks = self
        return self

    def __exit__(self, *exc):
        _state.kinks = self._prev
        return False


def kink_log() -> _KinkLog:
    return _KinkLog()


def _note_kink(arr) -> None:
    log = getattr(_state, "kinks", None)
    if log is not None:
        log.entries.append(arr)


def _emit(data: np.ndarray, parents, fn) -> Tensor:
    out = Tensor._result(data)
    tape = _state.tape
    if tape is not None and any(p.requires_grad for p in parents):
        tape.record(out, parents, fn)
    return out


def _need(t: Tensor) -> bool:
    return t.requires_grad


def _same_shape(x: Tensor, y: Tensor, op: str) -> None:
    if x.shape != y.shape:
        for name, a, b in zip("nchw", x.shape, y.shape):
            if a != b:
                raise ShapeError(f"{op}: dimension {name} differs ({a} vs {b})")


# --------------------------------------------------------------------------- conv


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation with zero padding.

    ``w`` has shape (out_c, in_c, k, k) with odd k, ``b`` is stored as
    (1, out_c, 1, 1).
    """
    n, c, h, wd = x.shape
    oc, ic, k, k2 = w.shape
    if c != ic:
        raise ShapeError(f"conv2d: input channel dimension c={c} does not match weight in_c={ic}")
    if k != k2 or k % 2 == 0:
        raise ShapeError(f"conv2d: kernel must be square and odd, got {k}x{k2}")
    if stride < 1 or padding < 0:
        raise ValueError(f"conv2d: need stride >= 1 and padding >= 0, got {stride}, {padding}")
    if b is not None and b.data.size != oc:
        raise ShapeError(f"conv2d: bias has {b.data.size} elements for out_c={oc}")
    oh = (h + 2 * padding - k) // stride + 1
    ow = (wd + 2 * padding - k) // stride + 1
    if oh < 1 or ow < 1:
        raise ShapeError(f"conv2d: input {h}x{wd} too small for kernel {k} with padding {padding}")

    cols = _backend.im2col(x.data, k, stride, padding)  # (ic*k*k, n*oh*ow)
    w2 = w.data.reshape(oc, ic * k * k)
    out = w2 @ cols
    if b is not None:
        out += b.data.reshape(oc, 1)
    out = np.ascontiguousarray(out.reshape(oc, n, oh, ow).transpose(1, 0, 2, 3))

    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        g2 = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(oc, n * oh * ow)
        gx = gw = gb = None
        if _need(x):
            gx = _backend.col2im(w2.T @ g2, x.shape, k, stride, padding)
        if _need(w):
            gw = (g2 @ cols.T).reshape(w.shape)
        if b is not None and _need(b):
            gb = g2.sum(axis=1).reshape(b.shape)
        return gx, gw, gb

    return _emit(out, parents, backward)


# ------------------------------------------------------------------ rearrangement


def _shuffle(a: np.ndarray, r: int) -> np.ndarray:
    n, c, h, w = a.shape
    oc = c // (r * r)
    return a.reshape(n, oc, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, oc, h * r, w * r)


def _unshuffle(a: np.ndarray, r: int) -> np.ndarray:
    n, c, h, w = a.shape
    return a.reshape(n, c, h // r, r, w // r, r).transpose(0, 1, 3, 5, 2, 4).reshape(n, c * r * r, h // r, w // r)


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """(n, c, h, w) -> (n, c/r^2, h*r, w*r); out[.., c, h*r+i, w*r+j] = in[.., c*r^2+i*r+j, h, w]."""
    if r < 1:
        raise ValueError(f"pixel_shuffle: factor must be >= 1, got {r}")
    if x.shape[1] % (r * r):
        raise ShapeError(f"pixel_shuffle: channel dimension c={x.shape[1]} not divisible by r^2={r * r}")
    return _emit(np.ascontiguousarray(_shuffle(x.data, r)), (x,), lambda g: (_unshuffle(g, r),))


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    if r < 1:
        raise ValueError(f"pixel_unshuffle: factor must be >= 1, got {r}")
    _, _, h, w = x.shape
    if h % r:
        raise ShapeError(f"pixel_unshuffle: height h={h} not divisible by {r}")
    if w % r:
        raise ShapeError(f"pixel_unshuffle: width w={w} not divisible by {r}")
    return _emit(np.ascontiguousarray(_unshuffle(x.data, r)), (x,), lambda g: (_shuffle(g, r),))


def _nearest_index(src: int, dst: int) -> np.ndarray:
    return (np.arange(dst) * src) // dst


def nearest_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Nearest-neighbour resize: out[.., i, j] = x[.., floor(i*h/out_h), floor(j*w/out_w)]."""
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"nearest_resize: target size must be positive, got {out_h}x{out_w}")
    n, c, h, w = x.shape
    if (out_h, out_w) == (h, w):
        return _emit(x.data.copy(), (x,), lambda g: (g,))
    ih = _nearest_index(h, out_h)
    iw = _nearest_index(w, out_w)
    out = x.data[:, :, ih[:, None], iw[None, :]]

    def backward(g):
        sh = np.zeros((out_h, h), dtype=g.dtype)
        sh[np.arange(out_h), ih] = 1
        sw = np.zeros((out_w, w), dtype=g.dtype)
        sw[np.arange(out_w), iw] = 1
        return (sh.T @ g @ sw,)

    return _emit(np.ascontiguousarray(out), (x,), backward)


def resample(x: Tensor, mh: np.ndarray, mw: np.ndarray) -> Tensor:
    """Separable linear resampling: out = mh @ x @ mw.T on every (n, c) plane."""
    if mh.shape[1] != x.shape[2]:
        raise ShapeError(f"resample: height h={x.shape[2]} does not match matrix width {mh.shape[1]}")
    if mw.shape[1] != x.shape[3]:
        raise ShapeError(f"resample: width w={x.shape[3]} does not match matrix width {mw.shape[1]}")
    mh = mh.astype(x.dtype, copy=False)
    mw = mw.astype(x.dtype, copy=False)
    out = np.ascontiguousarray(mh @ x.data @ mw.T)
    return _emit(out, (x,), lambda g: (mh.T @ g @ mw,))


# -------------------------------------------------------------------- elementwise


def add(x: Tensor, y: Tensor) -> Tensor:
    _same_shape(x, y, "add")
    return _emit(x.data + y.data, (x, y), lambda g: (g, g))


def sub(x: Tensor, y: Tensor) -> Tensor:
    _same_shape(x, y, "sub")
    return _emit(x.data - y.data, (x, y), lambda g: (g, -g))


def scale(x: Tensor, factor: float) -> Tensor:
    f = x.dtype.type(factor)
    return _emit(x.data * f, (x,), lambda g: (g * f,))


def mul_broadcast(x: Tensor, s: Tensor) -> Tensor:
    """x * s where s is (n, c, 1, 1) (per-channel) or (n, 1, h, w) (per-position)."""
    n, c, h, w = x.shape
    if s.shape == (n, c, 1, 1):
        axes = (2, 3)
    elif s.shape == (n, 1, h, w):
        axes = (1,)
    else:
        raise ShapeError(f"mul_broadcast: gate shape {s.shape} must be {(n, c, 1, 1)} or {(n, 1, h, w)}")
    xd, sd = x.data, s.data

    def backward(g):
        gx = g * sd if _need(x) else None
        gs = (g * xd).sum(axis=axes, keepdims=True) if _need(s) else None
        return gx, gs

    return _emit(xd * sd, (x, s), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    _note_kink(mask)
    return _emit(np.where(mask, x.data, 0).astype(x.dtype, copy=False), (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    e = np.exp(-np.abs(d))
    s = np.where(d >= 0, 1 / (1 + e), e / (1 + e)).astype(x.dtype, copy=False)
    # keep the open interval (0, 1) under rounding
    info = np.finfo(x.dtype)
    s = np.clip(s, info.tiny, 1 - info.epsneg)
    return _emit(s, (x,), lambda g: (g * s * (1 - s),))


def concat_channels(*xs: Tensor) -> Tensor:
    if len(xs) < 1:
        raise ValueError("concat_channels needs at least one tensor")
    n, _, h, w = xs[0].shape
    for t in xs[1:]:
        for name, a, b in zip("nhw", (n, h, w), (t.shape[0], t.shape[2], t.shape[3])):
            if a != b:
                raise ShapeError(f"concat_channels: dimension {name} differs ({a} vs {b})")
    splits = np.cumsum([t.shape[1] for t in xs])[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=1))

    return _emit(np.concatenate([t.data for t in xs], axis=1), xs, backward)


# ---------------------------------------------------------------------- reductions


def _nonempty(x: Tensor, op: str) -> None:
    if x.data.size == 0:
        raise ShapeError(f"{op}: empty tensor {x.shape}")


def global_avg_pool(x: Tensor) -> Tensor:
    _nonempty(x, "global_avg_pool")
    n, c, h, w = x.shape
    inv = x.dtype.type(1.0 / (h * w))
    return _emit(x.data.mean(axis=(2, 3), keepdims=True), (x,),
                 lambda g: (np.broadcast_to(g * inv, x.shape).copy(),))


def channel_mean_map(x: Tensor) -> Tensor:
    _nonempty(x, "channel_mean_map")
    c = x.shape[1]
    inv = x.dtype.type(1.0 / c)
    return _emit(x.data.mean(axis=1, keepdims=True), (x,),
                 lambda g: (np.broadcast_to(g * inv, x.shape).copy(),))


def channel_max_map(x: Tensor) -> Tensor:
    """Max over channels; the gradient goes to the first argmax in channel order."""
    _nonempty(x, "channel_max_map")
    idx = np.argmax(x.data, axis=1)[:, None]
    _note_kink(idx)
    out = np.take_along_axis(x.data, idx, axis=1)

    def backward(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, idx, g, axis=1)
        return (gx,)

    return _emit(out, (x,), backward)


def _scalar(v, dtype) -> np.ndarray:
    return np.full((1, 1, 1, 1), v, dtype=dtype)


def mean_abs(x: Tensor) -> Tensor:
    """Mean absolute value over all elements, as a (1,1,1,1) tensor.

    The subgradient at 0 is taken as 0.
    """
    _nonempty(x, "mean_abs")
    d = x.data
    sign = np.sign(d)
    _note_kink(sign)
    count = d.size
    val = _scalar(np.abs(d).sum(dtype=d.dtype) / count, d.dtype)
    return _emit(val, (x,), lambda g: (sign * (g.reshape(()) / count),))


def mean(x: Tensor) -> Tensor:
    _nonempty(x, "mean")
    count = x.data.size
    val = _scalar(x.data.sum(dtype=x.dtype) / count, x.dtype)
    return _emit(val, (x,), lambda g: (np.full(x.shape, g.reshape(()) / count, dtype=x.dtype),))


def weighted_sum(x: Tensor, weights: np.ndarray) -> Tensor:
    """sum(x * weights) as a scalar tensor; weights are a constant array of x's shape."""
    if weights.shape != x.shape:
        raise ShapeError(f"weighted_sum: weights {weights.shape} vs tensor {x.shape}")
    wts = weights.astype(x.dtype, copy=False)
    val = _scalar((x.data * wts).sum(), x.dtype)
    return _emit(val, (x,), lambda g: (wts * g.reshape(()),))
