"""Hierarchical windowed-attention backbone.

Patch embedding, four stages of pre-norm attention blocks (alternating
unshifted/shifted windows), and 2x2 patch merging between stages. Stage s
emits channels C * 2^(s-1) at stride patch * 2^(s-1); with the default
patch size 4 the four outputs sit at strides 4/8/16/32.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .attention import AttentionParams, windowed_attention
from .errors import ConfigError
from .layers import LayerNormParams, LinearParams, MlpParams


@dataclass(frozen=True)
class BackboneConfig:
    base_width: int = 32
    depths: tuple = (2, 2, 2, 2)
    heads: tuple = (1, 2, 4, 8)
    window: int = 4
    patch: int = 4

    def stage_width(self, stage: int) -> int:
        return self.base_width * 2**stage

    def validate(self):
        if len(self.depths) != 4 or len(self.heads) != 4:
            raise ConfigError("backbone needs exactly four stage depths and head counts")
        for s in range(4):
            if self.stage_width(s) % self.heads[s] != 0:
                raise ConfigError(
                    f"stage {s + 1} width {self.stage_width(s)} not divisible by "
                    f"{self.heads[s]} heads"
                )
        return self


# Named configurations. swin-s / swin-b mirror the published small/base
# hierarchies (windows 7 and 12); swin-nano is the desk-scale preset used
# for synthetic training runs.
BACKBONE_PRESETS = {
    "swin-nano": BackboneConfig(
        base_width=32, depths=(2, 2, 2, 2), heads=(1, 2, 4, 8), window=4, patch=4
    ),
    "swin-s": BackboneConfig(
        base_width=96, depths=(2, 2, 18, 2), heads=(3, 6, 12, 24), window=7, patch=4
    ),
    "swin-b": BackboneConfig(
        base_width=128, depths=(2, 2, 18, 2), heads=(4, 8, 16, 32), window=12, patch=4
    ),
}


def backbone_preset(name: str) -> BackboneConfig:
    try:
        return BACKBONE_PRESETS[name]
    except KeyError:
        raise ConfigError(
            f"unknown backbone preset {name!r}; expected one of "
            f"{sorted(BACKBONE_PRESETS)}"
        ) from None


@dataclass
class SwinBlockParams:
    norm1: LayerNormParams
    attn: AttentionParams
    norm2: LayerNormParams
    mlp: MlpParams

    @classmethod
    def build(cls, embed, heads, window, shift, mlp_ratio=4.0, rng=None,
              dtype=np.float32):
        return cls(
            norm1=LayerNormParams.build(embed, dtype),
            attn=AttentionParams.build(embed, heads, window, shift, rng, dtype),
            norm2=LayerNormParams.build(embed, dtype),
            mlp=MlpParams.build(embed, max(1, int(embed * mlp_ratio)), rng, dtype),
        )

    def params(self, prefix):
        return (
            self.norm1.params(f"{prefix}.norm1")
            + self.attn.params(f"{prefix}.attn")
            + self.norm2.params(f"{prefix}.norm2")
            + self.mlp.params(f"{prefix}.mlp")
        )


def swin_block(x: T.Tensor, blk: SwinBlockParams) -> T.Tensor:
    """Pre-norm residual block: x + attn(LN(x)), then + MLP(LN(.))."""
    y = T.add(x, windowed_attention(blk.norm1(x), blk.attn))
    return T.add(y, blk.mlp(blk.norm2(y)))


@dataclass
class PatchEmbedParams:
    proj: LinearParams
    norm: LayerNormParams
    patch: int

    @classmethod
    def build(cls, patch, width, rng=None, dtype=np.float32):
        return cls(
            proj=LinearParams.build(patch * patch * 3, width, rng, dtype),
            norm=LayerNormParams.build(width, dtype),
            patch=patch,
        )

    def params(self, prefix):
        return self.proj.params(f"{prefix}.proj") + self.norm.params(f"{prefix}.norm")


def patch_embed(img: T.Tensor, pe: PatchEmbedParams) -> T.Tensor:
    """Flatten non-overlapping p x p x 3 patches, project, layer-norm."""
    h, w, c = img.shape
    p = pe.patch
    if h % p or w % p:
        raise ConfigError(f"image {h}x{w} not divisible by patch size {p}")
    x = T.reshape(img, (h // p, p, w // p, p, c))
    x = T.transpose(x, (0, 2, 1, 3, 4))
    x = T.reshape(x, (h // p, w // p, p * p * c))
    return pe.norm(pe.proj(x))


@dataclass
class PatchMergeParams:
    norm: LayerNormParams
    reduce: LinearParams

    @classmethod
    def build(cls, width, rng=None, dtype=np.float32):
        return cls(
            norm=LayerNormParams.build(4 * width, dtype),
            reduce=LinearParams.build(4 * width, 2 * width, rng, dtype),
        )

    def params(self, prefix):
        return self.norm.params(f"{prefix}.norm") + self.reduce.params(
            f"{prefix}.reduce"
        )


def patch_merging(x: T.Tensor, pm: PatchMergeParams) -> T.Tensor:
    """Concatenate 2x2 neighborhoods (4C), norm, project to 2C.

    Odd extents are padded by edge replication first.
    """
    h, w, c = x.shape
    x = T.pad2d(x, h % 2, w % 2, mode="edge")
    h2, w2 = (h + h % 2) // 2, (w + w % 2) // 2
    x = T.reshape(x, (h2, 2, w2, 2, c))
    x = T.transpose(x, (0, 2, 1, 3, 4))
    x = T.reshape(x, (h2, w2, 4 * c))
    return pm.reduce(pm.norm(x))


@dataclass
class BackboneParams:
    config: BackboneConfig
    embed: PatchEmbedParams
    stages: list  # four lists of SwinBlockParams
    merges: list  # three PatchMergeParams

    @classmethod
    def build(cls, config: BackboneConfig, rng=None, dtype=np.float32):
        config.validate()
        rng = rng or np.random.default_rng()
        stages = []
        for s in range(4):
            width = config.stage_width(s)
            blocks = []
            for b in range(config.depths[s]):
                shift = 0 if b % 2 == 0 else config.window // 2
                if config.window == 1:
                    shift = 0
                blocks.append(
                    SwinBlockParams.build(
                        width, config.heads[s], config.window, shift,
                        rng=rng, dtype=dtype,
                    )
                )
            stages.append(blocks)
        merges = [
            PatchMergeParams.build(config.stage_width(s), rng, dtype)
            for s in range(3)
        ]
        return cls(
            config=config,
            embed=PatchEmbedParams.build(config.patch, config.base_width, rng, dtype),
            stages=stages,
            merges=merges,
        )

    def params(self, prefix="backbone"):
        out = self.embed.params(f"{prefix}.embed")
        for s, blocks in enumerate(self.stages):
            for b, blk in enumerate(blocks):
                out += blk.params(f"{prefix}.stage{s + 1}.block{b}")
        for s, merge in enumerate(self.merges):
            out += merge.params(f"{prefix}.merge{s + 1}")
        return out


def backbone_forward(img: T.Tensor, bb: BackboneParams):
    """Run all four stages; returns the pyramid at strides 4/8/16/32."""
    x = patch_embed(img, bb.embed)
    outputs = []
    for s in range(4):
        if s > 0:
            x = patch_merging(x, bb.merges[s - 1])
        for blk in bb.stages[s]:
            x = swin_block(x, blk)
        outputs.append(x)
    return tuple(outputs)
