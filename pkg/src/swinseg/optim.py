"""AdamW with decoupled weight decay."""

from __future__ import annotations

import numpy as np

from .errors import NumericError


def adamw_step(params, grads, state, lr, weight_decay, betas=(0.9, 0.999),
               eps=1e-8, t=1):
    """One update over parallel lists of arrays; state holds (m, v) pairs.

    p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p) with
    bias-corrected first/second moments; t is the 1-based step index.
    """
    b1, b2 = betas
    for p, g, (m, v) in zip(params, grads, state):
        if not np.isfinite(g).all():
            raise NumericError("non-finite gradient; aborting optimizer step")
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        p -= lr * (m_hat / (np.sqrt(v_hat) + eps) + weight_decay * p)
    return params, state


class AdamW:
    """Stateful wrapper binding the functional step to named tensors."""

    def __init__(self, named_params, lr, weight_decay=0.01, betas=(0.9, 0.999),
                 eps=1e-8):
        self.named_params = [
            (name, t) for name, t in named_params if t.requires_grad
        ]
        self.lr = lr
        self.weight_decay = weight_decay
        self.betas = betas
        self.eps = eps
        self.t = 0
        self.state = [
            (np.zeros_like(t.data), np.zeros_like(t.data))
            for _, t in self.named_params
        ]

    def step(self, lr=None):
        self.t += 1
        params, grads = [], []
        for _, tensor in self.named_params:
            params.append(tensor.data)
            grads.append(
                tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
            )
        adamw_step(
            params,
            grads,
            self.state,
            self.lr if lr is None else lr,
            self.weight_decay,
            self.betas,
            self.eps,
            self.t,
        )

    def zero_grad(self):
        for _, tensor in self.named_params:
            tensor.grad = None


def warmup_lr(base_lr: float, step: int, warmup: int) -> float:
    """Linear warmup to base_lr over `warmup` steps, then constant."""
    if warmup <= 0:
        return base_lr
    return base_lr * min(1.0, step / warmup)
