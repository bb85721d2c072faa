"""Decoder heads over the fused stride-4 feature map.

Three aggregation strategies run a schedule of L windowed-attention
blocks with mixed window/shift sizes:

* parallel (`mswin-p`): all blocks read the same normalized input, their
  residual outputs are channel-concatenated, linearly reduced back to the
  fusion width, and finished with one residual MLP;
* sequential (`mswin-s`): a chain of L standard pre-norm blocks;
* cross (`mswin-c`): densely connected blocks whose query is the running
  sum of all previous outputs (query projection omitted), with no
  norm/MLP wrapper.

The plain baseline (`tfpn`) skips the decoder and classifies the fused
map directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .attention import AttentionParams, cross_windowed_attention, windowed_attention
from .backbone import SwinBlockParams, swin_block
from .errors import ConfigError
from .layers import LayerNormParams, LinearParams, MlpParams

# Hidden width multiplier for decoder-side MLPs. Kept at 1 (hidden equals
# the fusion width), which is what the reference cost accounting of the
# sequential-vs-parallel heads pins down; the backbone keeps the usual 4x.
DECODER_MLP_RATIO = 1.0

DECODER_VARIANTS = ("tfpn", "mswin-p", "mswin-s", "mswin-c")


@dataclass(frozen=True)
class WindowSchedule:
    """Ordered (window, shift) pairs for the decoder blocks."""

    entries: tuple

    DEFAULT = ((5, 0), (5, 2), (7, 0), (7, 3), (12, 0), (12, 6))

    def __post_init__(self):
        if not self.entries:
            raise ConfigError("window schedule must not be empty")
        for m, n in self.entries:
            if m < 1:
                raise ConfigError(f"window size must be >= 1, got {m}")
            if n not in (0, m // 2):
                raise ConfigError(
                    f"shift must be 0 or floor(m/2); got (m={m}, n={n})"
                )

    def __len__(self):
        return len(self.entries)

    @classmethod
    def default(cls):
        return cls(cls.DEFAULT)

    @classmethod
    def from_windows(cls, windows):
        """One unshifted and one half-shifted block per window size."""
        entries = []
        for m in windows:
            entries.append((m, 0))
            if m // 2 > 0:
                entries.append((m, m // 2))
        return cls(tuple(entries))

    @classmethod
    def parse(cls, text):
        """Parse 'm:n,m:n,...' (e.g. '5:0,5:2,7:0,7:3,12:0,12:6')."""
        entries = []
        for chunk in text.split(","):
            chunk = chunk.strip()
            if not chunk:
                continue
            try:
                m, n = (int(v) for v in chunk.split(":"))
            except ValueError as exc:
                raise ConfigError(f"bad schedule entry {chunk!r}") from exc
            entries.append((m, n))
        return cls(tuple(entries))


# ---------------------------------------------------------------------------
# parallel


@dataclass
class MSwinPParams:
    norm_in: LayerNormParams
    blocks: list  # AttentionParams per schedule entry
    reduce: LinearParams
    norm_out: LayerNormParams
    mlp: MlpParams

    @classmethod
    def build(cls, d_enc, heads, schedule: WindowSchedule, rng=None,
              dtype=np.float32):
        rng = rng or np.random.default_rng()
        blocks = [
            AttentionParams.build(d_enc, heads, m, n, rng, dtype)
            for m, n in schedule.entries
        ]
        return cls(
            norm_in=LayerNormParams.build(d_enc, dtype),
            blocks=blocks,
            reduce=LinearParams.build(len(blocks) * d_enc, d_enc, rng, dtype),
            norm_out=LayerNormParams.build(d_enc, dtype),
            mlp=MlpParams.build(
                d_enc, max(1, int(d_enc * DECODER_MLP_RATIO)), rng, dtype
            ),
        )

    def params(self, prefix="decoder"):
        out = self.norm_in.params(f"{prefix}.norm_in")
        for i, blk in enumerate(self.blocks):
            out += blk.params(f"{prefix}.block{i}")
        out += self.reduce.params(f"{prefix}.reduce")
        out += self.norm_out.params(f"{prefix}.norm_out")
        out += self.mlp.params(f"{prefix}.mlp")
        return out


def mswin_p(fused: T.Tensor, params: MSwinPParams) -> T.Tensor:
    """Parallel aggregation: shared normalized input, concat, reduce, MLP."""
    normed = params.norm_in(fused)
    outs = [
        T.add(windowed_attention(normed, blk), fused) for blk in params.blocks
    ]
    merged = params.reduce(T.concat(outs, axis=-1))
    return T.add(params.mlp(params.norm_out(merged)), merged)


# ---------------------------------------------------------------------------
# sequential


@dataclass
class MSwinSParams:
    blocks: list  # SwinBlockParams per schedule entry

    @classmethod
    def build(cls, d_enc, heads, schedule: WindowSchedule, rng=None,
              dtype=np.float32):
        rng = rng or np.random.default_rng()
        blocks = [
            SwinBlockParams.build(
                d_enc, heads, m, n, mlp_ratio=DECODER_MLP_RATIO, rng=rng, dtype=dtype
            )
            for m, n in schedule.entries
        ]
        return cls(blocks=blocks)

    def params(self, prefix="decoder"):
        out = []
        for i, blk in enumerate(self.blocks):
            out += blk.params(f"{prefix}.block{i}")
        return out


def mswin_s(fused: T.Tensor, params: MSwinSParams) -> T.Tensor:
    """Sequential aggregation: a chain of standard pre-norm blocks."""
    x = fused
    for blk in params.blocks:
        x = swin_block(x, blk)
    return x


# ---------------------------------------------------------------------------
# cross


@dataclass
class MSwinCParams:
    blocks: list  # AttentionParams per schedule entry

    @classmethod
    def build(cls, d_enc, heads, schedule: WindowSchedule, rng=None,
              dtype=np.float32):
        rng = rng or np.random.default_rng()
        blocks = [
            AttentionParams.build(d_enc, heads, m, n, rng, dtype)
            for m, n in schedule.entries
        ]
        return cls(blocks=blocks)

    def params(self, prefix="decoder"):
        out = []
        for i, blk in enumerate(self.blocks):
            out += blk.params(f"{prefix}.block{i}")
        return out


def mswin_c(fused: T.Tensor, params: MSwinCParams, return_intermediates=False):
    """Densely connected aggregation: block l queries the sum of outputs 0..l-1.

    The input itself counts as output 0; the final block's output is the
    decoded feature (no norm/MLP wrapper).
    """
    outputs = [fused]
    inputs = []
    running = fused
    for i, blk in enumerate(params.blocks):
        inputs.append(running)
        y = cross_windowed_attention(running, blk)
        outputs.append(y)
        if i + 1 < len(params.blocks):
            running = T.add(running, y)
    if return_intermediates:
        return outputs[-1], inputs, outputs
    return outputs[-1]


# ---------------------------------------------------------------------------
# classifier and auxiliary heads


def seg_head(feat: T.Tensor, classify: LinearParams, out_h: int, out_w: int) -> T.Tensor:
    """Per-position class logits, bilinearly upsampled to full resolution."""
    logits = classify(feat)
    return T.bilinear_resize(logits, out_h, out_w)


@dataclass
class AuxHeadParams:
    fc1: LinearParams
    fc2: LinearParams

    @classmethod
    def build(cls, d_in, hidden, num_classes, rng=None, dtype=np.float32):
        return cls(
            fc1=LinearParams.build(d_in, hidden, rng, dtype),
            fc2=LinearParams.build(hidden, num_classes, rng, dtype),
        )

    def params(self, prefix="aux"):
        return self.fc1.params(f"{prefix}.fc1") + self.fc2.params(f"{prefix}.fc2")


def aux_head(feat: T.Tensor, params: AuxHeadParams, out_h: int, out_w: int) -> T.Tensor:
    """Two-layer auxiliary classifier, upsampled to full resolution."""
    logits = params.fc2(T.relu(params.fc1(feat)))
    return T.bilinear_resize(logits, out_h, out_w)
