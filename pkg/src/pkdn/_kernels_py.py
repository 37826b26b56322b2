"""Pure numpy im2col / col2im, used when the compiled core is unavailable.

Column layout matches the compiled kernels exactly:
``cols[(c*k + ki)*k + kj, (b*oh + oy)*ow + ox]``.  Accumulation order in
``col2im`` is (ki, kj) per output pixel, which keeps both backends
bit-identical.
"""
import numpy as np


def out_size(size, k, stride, pad):
    return (size + 2 * pad - k) // stride + 1


def im2col(x, k, stride, pad):
    n, c, h, w = x.shape
    oh, ow = out_size(h, k, stride, pad), out_size(w, k, stride, pad)
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((c, k, k, n, oh, ow), dtype=x.dtype)
    xt = x.transpose(1, 0, 2, 3)
    for ki in range(k):
        for kj in range(k):
            cols[:, ki, kj] = xt[:, :, ki:ki + stride * oh:stride, kj:kj + stride * ow:stride]
    return cols.reshape(c * k * k, n * oh * ow)


def col2im(cols, shape, k, stride, pad):
    n, c, h, w = shape
    oh, ow = out_size(h, k, stride, pad), out_size(w, k, stride, pad)
    cols = cols.reshape(c, k, k, n, oh, ow)
    out = np.zeros((c, n, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for ki in range(k):
        for kj in range(k):
            out[:, :, ki:ki + stride * oh:stride, kj:kj + stride * ow:stride] += cols[:, ki, kj]
    out = out[:, :, pad:pad + h, pad:pad + w]
    return np.ascontiguousarray(out.transpose(1, 0, 2, 3))
