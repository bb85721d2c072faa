"""Multi-head windowed self-attention with relative position bias.

Three flavors over an [H, W, embed] map:

* `w_msa` — attention inside non-overlapping m x m windows (shift n = 0),
* `sw_msa` — the same after a cyclic (n, n) shift, with an additive mask
  forbidding attention across pre-shift regions,
* `cross_sw_msa` — sw_msa with the query projection removed: the input is
  used as the query directly while key/value keep their projections.

Scores are Q K^T / sqrt(head_dim) + B (+ mask), softmaxed over keys; head
outputs are concatenated and output-projected.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import tensor as T
from . import windows as W
from .errors import ConfigError


@dataclass
class AttentionParams:
    """Projections plus the per-head relative position bias table."""

    num_heads: int
    head_dim: int
    window: int
    shift: int
    w_q: T.Tensor
    b_q: T.Tensor
    w_k: T.Tensor
    b_k: T.Tensor
    w_v: T.Tensor
    b_v: T.Tensor
    w_o: T.Tensor
    b_o: T.Tensor
    bias_table: T.Tensor

    @property
    def embed(self) -> int:
        return self.num_heads * self.head_dim

    @classmethod
    def build(cls, embed, num_heads, window, shift=0, rng=None, dtype=np.float32):
        if embed % num_heads != 0:
            raise ConfigError(f"embed {embed} not divisible by {num_heads} heads")
        if not 0 <= shift < window:
            raise ConfigError(f"shift must satisfy 0 <= n < m, got n={shift} m={window}")
        rng = rng or np.random.default_rng()

        def proj():
            w = T.trunc_normal((embed, embed), rng=rng, dtype=dtype)
            b = T.zeros((embed,), dtype=dtype)
            return w, b

        w_q, b_q = proj()
        w_k, b_k = proj()
        w_v, b_v = proj()
        w_o, b_o = proj()
        table = T.zeros(((2 * window - 1) ** 2, num_heads), dtype=dtype)
        return cls(
            num_heads=num_heads,
            head_dim=embed // num_heads,
            window=window,
            shift=shift,
            w_q=w_q,
            b_q=b_q,
            w_k=w_k,
            b_k=b_k,
            w_v=w_v,
            b_v=b_v,
            w_o=w_o,
            b_o=b_o,
            bias_table=table,
        )

    def params(self, prefix=""):
        names = (
            "w_q", "b_q", "w_k", "b_k", "w_v", "b_v", "w_o", "b_o", "bias_table"
        )
        return [(f"{prefix}.{n}" if prefix else n, getattr(self, n)) for n in names]


def _split_heads(x: T.Tensor, num_heads: int, head_dim: int) -> T.Tensor:
    nw, tokens = x.shape[0], x.shape[1]
    x = T.reshape(x, (nw, tokens, num_heads, head_dim))
    return T.transpose(x, (0, 2, 1, 3))


def _merge_heads(x: T.Tensor) -> T.Tensor:
    nw, h, tokens, dh = x.shape
    x = T.transpose(x, (0, 2, 1, 3))
    return T.reshape(x, (nw, tokens, h * dh))


def attend(
    q_src: T.Tensor,
    k_src: T.Tensor,
    v_src: T.Tensor,
    params: AttentionParams,
    mask: W.ShiftMask | None = None,
    project_query: bool = True,
    return_weights: bool = False,
):
    """Window-batched attention on [num_windows, tokens, embed] inputs.

    The relative position bias is gathered per token pair from the
    params table; `mask` adds the per-window forbidden-pair surrogate.
    With project_query=False the query projection is skipped (cross
    variant) and q_src enters the score product as-is.
    """
    h, dh = params.num_heads, params.head_dim
    tokens = q_src.shape[1]
    if tokens != params.window**2:
        raise ValueError(
            f"expected {params.window ** 2} tokens per window, got {tokens}"
        )

    q = T.linear(q_src, params.w_q, params.b_q) if project_query else q_src
    k = T.linear(k_src, params.w_k, params.b_k)
    v = T.linear(v_src, params.w_v, params.b_v)

    q = _split_heads(q, h, dh)
    k = _split_heads(k, h, dh)
    v = _split_heads(v, h, dh)

    scores = T.scale(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dh))

    idx = W.relative_position_index(params.window)
    bias = T.gather(params.bias_table, idx)  # [tokens, tokens, h]
    bias = T.transpose(bias, (2, 0, 1))  # [h, tokens, tokens] broadcast over windows
    scores = T.add(scores, bias)

    if mask is not None:
        per_window = mask.per_window()[:, None, :, :]  # broadcast over heads
        scores = T.add(scores, T.constant(per_window, dtype=scores.dtype))

    T.check_finite(scores, "attention scores")
    weights = T.softmax(scores, axis=-1)
    out = _merge_heads(T.matmul(weights, v))
    out = T.linear(out, params.w_o, params.b_o)
    if return_weights:
        return out, weights
    return out


@lru_cache(maxsize=128)
def _cached_mask(grid: W.WindowGrid):
    return W.attention_mask(grid)


def _unshifted(x: T.Tensor, params: AttentionParams, project_query: bool) -> T.Tensor:
    grid = W.WindowGrid.build(x.shape[0], x.shape[1], params.window, 0)
    wins = W.window_partition(x, grid)
    out = attend(
        wins, wins, wins, params, mask=_cached_mask(grid), project_query=project_query
    )
    return W.window_reverse(out, grid)


def w_msa(x: T.Tensor, params: AttentionParams) -> T.Tensor:
    """Plain windowed attention (partition, attend, reverse); n must be 0."""
    if params.shift != 0:
        raise ConfigError("w_msa requires shift 0; use sw_msa for shifted windows")
    return _unshifted(x, params, project_query=True)


def _shifted(x: T.Tensor, params: AttentionParams, project_query: bool) -> T.Tensor:
    if not 0 < params.shift < params.window:
        raise ConfigError(
            f"sw_msa requires 0 < n < m, got n={params.shift} m={params.window}; "
            "w_msa covers the n=0 case"
        )
    grid = W.WindowGrid.build(x.shape[0], x.shape[1], params.window, params.shift)
    shifted = W.cyclic_shift(x, params.shift, params.shift)
    wins = W.window_partition(shifted, grid)
    out = attend(
        wins, wins, wins, params, mask=_cached_mask(grid), project_query=project_query
    )
    out = W.window_reverse(out, grid)
    return W.cyclic_shift(out, -params.shift, -params.shift)


def sw_msa(x: T.Tensor, params: AttentionParams) -> T.Tensor:
    """Shifted-window attention via cyclic shift + mask."""
    return _shifted(x, params, project_query=True)


def cross_sw_msa(x: T.Tensor, params: AttentionParams) -> T.Tensor:
    """Shifted-window attention with the input used directly as the query."""
    return _shifted(x, params, project_query=False)


def windowed_attention(x: T.Tensor, params: AttentionParams) -> T.Tensor:
    """Dispatch on the params' shift: W-MSA when n=0, SW-MSA otherwise."""
    if params.shift == 0:
        return w_msa(x, params)
    return sw_msa(x, params)


def cross_windowed_attention(x: T.Tensor, params: AttentionParams) -> T.Tensor:
    """Query-passthrough dispatch over shifted or unshifted windows."""
    if params.shift == 0:
        return _unshifted(x, params, project_query=False)
    return cross_sw_msa(x, params)
