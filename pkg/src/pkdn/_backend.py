"""Selects the im2col/col2im implementation at import time.

The compiled Cython core (``pkdn._ckernels``) is preferred; the numpy
fallback is used when the extension was not built or when the environment
variable ``PKDN_BACKEND=python`` is set.  Both produce bit-identical results.
"""
import os

from . import _kernels_py

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_IMPLS = {"python": _kernels_py}
if _ckernels is not None:
    _IMPLS["cython"] = _ckernels

available = tuple(_IMPLS)

im2col = None
col2im = None
name = None


def set_backend(which: str) -> None:
    global im2col, col2im, name
    if which not in _IMPLS:
        raise ValueError(f"backend {which!r} unavailable; choose from {available}")
    impl = _IMPLS[which]
    im2col, col2im, name = impl.im2col, impl.col2im, which


_requested = os.environ.get("PKDN_BACKEND", "")
if _requested:
    set_backend(_requested)
else:
    set_backend("cython" if _ckernels is not None else "python")
