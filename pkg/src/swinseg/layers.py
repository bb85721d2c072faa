"""Small parameter bundles shared by the backbone, encoder, and decoders."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T


@dataclass
class LinearParams:
    weight: T.Tensor
    bias: T.Tensor

    @classmethod
    def build(cls, d_in, d_out, rng=None, dtype=np.float32):
        return cls(
            weight=T.trunc_normal((d_in, d_out), rng=rng, dtype=dtype),
            bias=T.zeros((d_out,), dtype=dtype),
        )

    def __call__(self, x):
        return T.linear(x, self.weight, self.bias)

    def params(self, prefix):
        return [(f"{prefix}.weight", self.weight), (f"{prefix}.bias", self.bias)]


@dataclass
class LayerNormParams:
    gamma: T.Tensor
    beta: T.Tensor
    eps: float = 1e-5

    @classmethod
    def build(cls, d, dtype=np.float32):
        return cls(gamma=T.ones((d,), dtype=dtype), beta=T.zeros((d,), dtype=dtype))

    def __call__(self, x):
        return T.layer_norm(x, self.gamma, self.beta, self.eps)

    def params(self, prefix):
        return [(f"{prefix}.gamma", self.gamma), (f"{prefix}.beta", self.beta)]


@dataclass
class BatchNormParams:
    gamma: T.Tensor
    beta: T.Tensor
    running_mean: T.Tensor
    running_var: T.Tensor
    eps: float = 1e-5
    momentum: float = 0.1

    @classmethod
    def build(cls, d, dtype=np.float32):
        return cls(
            gamma=T.ones((d,), dtype=dtype),
            beta=T.zeros((d,), dtype=dtype),
            running_mean=T.zeros((d,), dtype=dtype, requires_grad=False),
            running_var=T.ones((d,), dtype=dtype, requires_grad=False),
        )

    def __call__(self, x, training):
        return T.batch_norm(
            x,
            self.gamma,
            self.beta,
            self.running_mean,
            self.running_var,
            training=training,
            eps=self.eps,
            momentum=self.momentum,
        )

    def params(self, prefix):
        return [
            (f"{prefix}.gamma", self.gamma),
            (f"{prefix}.beta", self.beta),
            (f"{prefix}.running_mean", self.running_mean),
            (f"{prefix}.running_var", self.running_var),
        ]


@dataclass
class MlpParams:
    """Two-layer GELU MLP: d -> hidden -> d."""

    fc1: LinearParams
    fc2: LinearParams

    @classmethod
    def build(cls, d, hidden, rng=None, dtype=np.float32):
        return cls(
            fc1=LinearParams.build(d, hidden, rng, dtype),
            fc2=LinearParams.build(hidden, d, rng, dtype),
        )

    def __call__(self, x):
        return self.fc2(T.gelu(self.fc1(x)))

    def params(self, prefix):
        return self.fc1.params(f"{prefix}.fc1") + self.fc2.params(f"{prefix}.fc2")
