from __future__ import annotations

import numpy as np

from .tensor import Parameter


class NonFiniteGradError(FloatingPointError):
    pass


class Adam:
    """Adam with bias correction and no weight decay; zeroes grads after each step.

    Frozen parameters (``requires_grad`` false) are left untouched.

    Moment buffers live on the parameters themselves (``p.m``, ``p.v``) so a
    checkpoint of the parameters carries the optimizer state too.
    """

    def __init__(self, params, lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params: list[Parameter] = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0

    def step(self) -> None:
        for p in self.params:
            if not np.all(np.isfinite(p.grad)):
                bad = int(np.size(p.grad) - np.count_nonzero(np.isfinite(p.grad)))
                raise NonFiniteGradError(f"non-finite gradient in parameter {p.name!r} ({bad} entries)")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p in self.params:
            if not p.requires_grad:
                continue
            dt = p.data.dtype.type
            g = p.grad
            p.m *= dt(self.beta1)
            p.m += dt(1 - self.beta1) * g
            p.v *= dt(self.beta2)
            p.v += dt(1 - self.beta2) * (g * g)
            m_hat = p.m / dt(bc1)
            v_hat = p.v / dt(bc2)
            p.data -= dt(self.lr) * m_hat / (np.sqrt(v_hat) + dt(self.eps))
            p.grad[...] = 0

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()
