"""Teacher loss and the composite distillation loss of the student."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from . import ops
from .tensor import ShapeError, Tensor


@dataclass(frozen=True)
class LossBreakdown:
    l_sr: float
    l_ts: float
    l_fs: float
    total: float


def l1(a: Tensor, b: Tensor) -> Tensor:
    return ops.mean_abs(ops.sub(a, b))


def teacher_loss(sr_t: Tensor, hr: Tensor) -> Tensor:
    """Mean absolute error between the teacher output and the ground truth."""
    return l1(sr_t, hr)


def feature_loss(taps_t: Sequence[Tensor], taps_s: Sequence[Tensor]) -> Tensor:
    """Average over taps of the per-tap mean absolute difference."""
    if len(taps_t) != len(taps_s):
        raise ShapeError(f"tap count mismatch: teacher {len(taps_t)} vs student {len(taps_s)}")
    if not taps_t:
        raise ShapeError("feature loss needs at least one tap")
    acc = None
    for i, (ft, fs) in enumerate(zip(taps_t, taps_s)):
        if ft.shape != fs.shape:
            raise ShapeError(f"tap {i}: teacher {ft.shape} vs student {fs.shape}")
        term = l1(ft.detach(), fs)
        acc = term if acc is None else ops.add(acc, term)
    return ops.scale(acc, 1.0 / len(taps_t))


def student_loss(sr_s: Tensor, hr: Tensor, sr_t: Tensor, taps_t, taps_s, cfg) -> tuple[Tensor, LossBreakdown]:
    """Returns the differentiable total and its float breakdown.

    Teacher outputs and taps enter as constants, so no gradient reaches the
    teacher.
    """
    l_sr = l1(sr_s, hr)
    l_ts = l1(sr_t.detach(), sr_s)
    l_fs = feature_loss(taps_t, taps_s)
    total = ops.add(ops.add(l_sr, ops.scale(l_ts, cfg.lambda_ts)), ops.scale(l_fs, cfg.lambda_fs))
    return total, LossBreakdown(l_sr.item(), l_ts.item(), l_fs.item(), total.item())
