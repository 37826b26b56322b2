"""Compare the compiled and pure-numpy im2col/col2im backends.

    python benchmarks/bench_kernels.py [--repeat N]

Prints median wall time per call for each backend and the speedup.
"""
from __future__ import annotations

import argparse
import statistics
import time

import numpy as np

from pkdn import _backend, ops
from pkdn.networks import NetConfig, build_teacher
from pkdn.optim import Adam
from pkdn.tensor import Tape, Tensor, backward
from pkdn.data import SyntheticSpec, synthetic_samples, stack


def _median_ms(fn, repeat):
    fn()  # warm-up
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append((time.perf_counter() - t0) * 1e3)
    return statistics.median(times)


def cases():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((4, 16, 32, 32)).astype(np.float32)
    w = rng.standard_normal((16, 16, 3, 3)).astype(np.float32)
    cols = _backend.im2col(x, 3, 1, 1)
    g = rng.standard_normal(cols.shape).astype(np.float32)

    def conv_fwd_bwd():
        xt, wt = Tensor(x, requires_grad=True), Tensor(w, requires_grad=True)
        with Tape():
            backward(ops.mean(ops.conv2d(xt, wt, padding=1)))

    cfg = NetConfig()
    net = build_teacher(cfg)
    opt = Adam(net.parameters())
    batch = stack(synthetic_samples(SyntheticSpec(4, 32, 0), cfg.scale), dtype=np.float32)

    def train_step():
        from pkdn.losses import teacher_loss
        with Tape():
            out = net(batch.lr, batch.parsing)
            backward(teacher_loss(out.sr, Tensor(batch.hr)))
        opt.step()

    return {
        "im2col 4x16x32x32 k3": lambda: _backend.im2col(x, 3, 1, 1),
        "col2im 4x16x32x32 k3": lambda: _backend.col2im(g, x.shape, 3, 1, 1),
        "conv2d fwd+bwd": conv_fwd_bwd,
        "teacher train step (batch 4)": train_step,
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    results = {}
    for name in _backend.available:
        _backend.set_backend(name)
        results[name] = {k: _median_ms(fn, args.repeat) for k, fn in cases().items()}
    names = list(results)
    print(f"{'case':32s}" + "".join(f"{n:>12s}" for n in names) + ("     speedup" if len(names) == 2 else ""))
    for case in results[names[0]]:
        row = f"{case:32s}" + "".join(f"{results[n][case]:10.3f}ms" for n in names)
        if len(names) == 2:
            row += f"{results['python'][case] / results['cython'][case]:11.2f}x"
        print(row)


if __name__ == "__main__":
    main()
