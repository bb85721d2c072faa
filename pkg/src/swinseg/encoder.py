"""Transformer feature-pyramid encoder.

Top-down pathway: the deepest backbone output is projected to the fusion
width, then repeatedly upsampled (bilinear x2) and summed with projected
shallower stages, producing laterals at strides 32/16/8/4. Each lateral
then passes through its own unshifted windowed attention, is upsampled to
stride 4, and the four branches are summed into the fused map.

Every lateral (including the deepest) gets a projection so all four
branches share the fusion width; the per-lateral attention blocks carry
independent parameters and no residual/MLP wrapper.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .attention import AttentionParams, w_msa
from .backbone import BackboneParams, backbone_forward
from .layers import BatchNormParams, LinearParams


@dataclass
class LateralParams:
    """Per-position linear map to the fusion width + batch norm + ReLU."""

    lin: LinearParams
    bn: BatchNormParams

    @classmethod
    def build(cls, d_in, d_out, rng=None, dtype=np.float32):
        return cls(
            lin=LinearParams.build(d_in, d_out, rng, dtype),
            bn=BatchNormParams.build(d_out, dtype),
        )

    def params(self, prefix):
        return self.lin.params(f"{prefix}.lin") + self.bn.params(f"{prefix}.bn")


def lateral_project(x: T.Tensor, lp: LateralParams, training: bool) -> T.Tensor:
    return T.relu(lp.bn(lp.lin(x), training))


@dataclass
class EncoderParams:
    d_enc: int
    laterals: list  # LateralParams for stages 1..4 (shallow to deep)
    fuse_attn: list  # AttentionParams per lateral L1..L4 (deep to shallow)

    @classmethod
    def build(cls, stage_widths, d_enc, heads=8, window=7, rng=None,
              dtype=np.float32):
        rng = rng or np.random.default_rng()
        laterals = [
            LateralParams.build(w, d_enc, rng, dtype) for w in stage_widths
        ]
        fuse = [
            AttentionParams.build(d_enc, heads, window, 0, rng, dtype)
            for _ in range(4)
        ]
        return cls(d_enc=d_enc, laterals=laterals, fuse_attn=fuse)

    def params(self, prefix="encoder"):
        out = []
        for s, lp in enumerate(self.laterals):
            out += lp.params(f"{prefix}.lateral{s + 1}")
        for k, ap in enumerate(self.fuse_attn):
            out += ap.params(f"{prefix}.fuse{k + 1}")
        return out


def top_down(feats, enc: EncoderParams, training: bool):
    """Build laterals at strides 32/16/8/4 from the four stage outputs."""
    x1, x2, x3, x4 = feats
    l1 = lateral_project(x4, enc.laterals[3], training)
    l2 = T.add(
        T.bilinear_resize(l1, x3.shape[0], x3.shape[1]),
        lateral_project(x3, enc.laterals[2], training),
    )
    l3 = T.add(
        T.bilinear_resize(l2, x2.shape[0], x2.shape[1]),
        lateral_project(x2, enc.laterals[1], training),
    )
    l4 = T.add(
        T.bilinear_resize(l3, x1.shape[0], x1.shape[1]),
        lateral_project(x1, enc.laterals[0], training),
    )
    return l1, l2, l3, l4


def pyramid_fuse(laterals, enc: EncoderParams) -> T.Tensor:
    """Attend within each lateral, upsample to stride 4, and sum."""
    l1, l2, l3, l4 = laterals
    out_h, out_w = l4.shape[0], l4.shape[1]
    fused = w_msa(l4, enc.fuse_attn[3])
    for lat, attn in ((l3, enc.fuse_attn[2]), (l2, enc.fuse_attn[1]),
                      (l1, enc.fuse_attn[0])):
        branch = T.bilinear_resize(w_msa(lat, attn), out_h, out_w)
        fused = T.add(fused, branch)
    return fused


def tfpn_forward(img: T.Tensor, bb: BackboneParams, enc: EncoderParams,
                 training: bool = False) -> T.Tensor:
    """Backbone, top-down pathway, and pyramid fusion; output at stride 4."""
    feats = backbone_forward(img, bb)
    laterals = top_down(feats, enc, training)
    return pyramid_fuse(laterals, enc)
