# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled im2col / col2im for NCHW tensors (float32 and float64).

Column layout: ``cols[(c*k + ki)*k + kj, (b*oh + oy)*ow + ox]``.  The valid
``ox`` range of each output row is computed once, so the inner loops are
branch-free strided copies.
"""
import numpy as np

ctypedef fused real:
    float
    double


cdef inline Py_ssize_t _first_valid(Py_ssize_t kj, Py_ssize_t pad, Py_ssize_t stride) noexcept nogil:
    # smallest ox with ox*stride + kj - pad >= 0
    cdef Py_ssize_t d = pad - kj
    if d <= 0:
        return 0
    return (d + stride - 1) // stride


cdef inline Py_ssize_t _end_valid(Py_ssize_t kj, Py_ssize_t pad, Py_ssize_t stride,
                                  Py_ssize_t w, Py_ssize_t ow) noexcept nogil:
    # one past the largest ox with ox*stride + kj - pad < w
    cdef Py_ssize_t d = w - 1 + pad - kj
    if d < 0:
        return 0
    d = d // stride + 1
    return d if d < ow else ow


def im2col(real[:, :, :, ::1] x, Py_ssize_t k, Py_ssize_t stride, Py_ssize_t pad):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t oh = (h + 2 * pad - k) // stride + 1
    cdef Py_ssize_t ow = (w + 2 * pad - k) // stride + 1
    out = np.empty((c * k * k, n * oh * ow), dtype=np.float32 if real is float else np.float64)
    cdef real[:, ::1] cols = out
    cdef Py_ssize_t b, ch, ki, kj, oy, ox, iy, lo, hi
    cdef real* dst
    cdef real* src
    with nogil:
        for ch in range(c):
            for ki in range(k):
                for kj in range(k):
                    lo = _first_valid(kj, pad, stride)
                    hi = _end_valid(kj, pad, stride, w, ow)
                    if hi < lo:
                        hi = lo
                    dst = &cols[(ch * k + ki) * k + kj, 0]
                    for b in range(n):
                        for oy in range(oh):
                            iy = oy * stride + ki - pad
                            if iy < 0 or iy >= h:
                                for ox in range(ow):
                                    dst[ox] = 0
                            else:
                                src = &x[b, ch, iy, 0]
                                for ox in range(lo):
                                    dst[ox] = 0
                                for ox in range(lo, hi):
                                    dst[ox] = src[ox * stride + kj - pad]
                                for ox in range(hi, ow):
                                    dst[ox] = 0
                            dst += ow
    return out


def col2im(real[:, ::1] cols, shape, Py_ssize_t k, Py_ssize_t stride, Py_ssize_t pad):
    cdef Py_ssize_t n = shape[0], c = shape[1], h = shape[2], w = shape[3]
    cdef Py_ssize_t oh = (h + 2 * pad - k) // stride + 1
    cdef Py_ssize_t ow = (w + 2 * pad - k) // stride + 1
    out = np.zeros((n, c, h, w), dtype=np.float32 if real is float else np.float64)
    cdef real[:, :, :, ::1] img = out
    cdef Py_ssize_t b, ch, ki, kj, oy, ox, iy, lo, hi
    cdef real* src
    cdef real* dst
    with nogil:
        for ch in range(c):
            for ki in range(k):
                for kj in range(k):
                    lo = _first_valid(kj, pad, stride)
                    hi = _end_valid(kj, pad, stride, w, ow)
                    src = &cols[(ch * k + ki) * k + kj, 0]
                    for b in range(n):
                        for oy in range(oh):
                            iy = oy * stride + ki - pad
                            if iy >= 0 and iy < h:
                                dst = &img[b, ch, iy, 0]
                                for ox in range(lo, hi):
                                    dst[ox * stride + kj - pad] += src[ox]
                            src += ow
    return out
