"""Central finite-difference verification of tape gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .ops import kink_log
from .tensor import Tensor, Tape, no_grad


@dataclass
class GradCheckReport:
    max_rel_error: float
    checked: int
    skipped_kinks: int
    worst: tuple | None = None  # (tensor index, flat index, analytic, numeric)
    errors: list = field(default_factory=list, repr=False)


def _signature(log):
    return [e.tobytes() for e in log.entries]


def gradient_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    epsilon: float = 1e-6,
    max_coords: int | None = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare analytic gradients of ``f`` against central differences.

    ``f`` takes no arguments and builds a scalar loss from ``params`` (leaf
    tensors with ``requires_grad``).  At most ``max_coords`` coordinates per
    tensor are sampled.  Coordinates whose +/- perturbations flip a relu sign,
    a max argmax or an |.| sign are skipped and counted, since the function
    is not differentiable across them.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    for p in params:
        if p.dtype != np.float64:
            raise ValueError("gradient checks need 64-bit tensors; build them under element_mode('float64')")
    for p in params:
        p.zero_grad()
        if p.grad is None:
            p.grad = np.zeros_like(p.data)
    with Tape() as tape:
        loss = f()
    tape.backward(loss)
    analytic = [p.grad.copy() for p in params]

    def evaluate():
        with no_grad(), kink_log() as log:
            val = f().item()
        return val, _signature(log)

    _, base_sig = evaluate()
    rng = np.random.default_rng(seed)
    worst = None
    max_err = 0.0
    checked = skipped = 0
    errors = []
    for ti, p in enumerate(params):
        flat = p.data.reshape(-1)
        size = flat.size
        if max_coords is not None and size > max_coords:
            coords = np.sort(rng.choice(size, max_coords, replace=False))
        else:
            coords = np.arange(size)
        for ci in coords:
            orig = flat[ci]
            flat[ci] = orig + epsilon
            fp, sig_p = evaluate()
            flat[ci] = orig - epsilon
            fm, sig_m = evaluate()
            flat[ci] = orig
            if sig_p != base_sig or sig_m != base_sig:
                skipped += 1
                continue
            num = (fp - fm) / (2 * epsilon)
            a = float(analytic[ti].reshape(-1)[ci])
            err = abs(a - num) / max(abs(a), abs(num), 1e-8)
            errors.append(err)
            checked += 1
            if err > max_err or worst is None:
                max_err = max(max_err, err)
                worst = (ti, int(ci), a, num)
    return GradCheckReport(max_err, checked, skipped, worst, errors)


def finite_diff_check(f, params, epsilon: float = 1e-6, max_coords: int | None = None, seed: int = 0) -> float:
    """Max relative error |a - n| / max(|a|, |n|, 1e-8) over sampled coordinates."""
    return gradient_check(f, params, epsilon, max_coords, seed).max_rel_error
