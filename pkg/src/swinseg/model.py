"""Full segmentation model: backbone + pyramid encoder + decoder + heads."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import decoders as D
from . import tensor as T
from .backbone import BackboneConfig, BackboneParams, backbone_forward
from .encoder import EncoderParams, pyramid_fuse, top_down
from .errors import ConfigError
from .layers import LinearParams

AUX_LOSS_WEIGHT = 0.4


@dataclass
class SegModel:
    backbone: BackboneParams
    encoder: EncoderParams
    decoder_variant: str
    decoder: object  # variant params, or None for the plain baseline
    classify: LinearParams
    aux: D.AuxHeadParams
    num_classes: int

    @classmethod
    def build(
        cls,
        backbone_config: BackboneConfig,
        num_classes: int,
        d_enc: int = 512,
        heads: int = 8,
        decoder: str = "mswin-s",
        schedule: D.WindowSchedule | None = None,
        fuse_window: int = 7,
        aux_hidden: int = 256,
        seed: int = 0,
        dtype=np.float32,
    ) -> "SegModel":
        if decoder not in D.DECODER_VARIANTS:
            raise ConfigError(
                f"unknown decoder {decoder!r}; expected one of {D.DECODER_VARIANTS}"
            )
        schedule = schedule or D.WindowSchedule.default()
        rng = np.random.default_rng(seed)
        bb = BackboneParams.build(backbone_config, rng, dtype)
        widths = tuple(backbone_config.stage_width(s) for s in range(4))
        enc = EncoderParams.build(widths, d_enc, heads, fuse_window, rng, dtype)
        if decoder == "tfpn":
            dec = None
        elif decoder == "mswin-p":
            dec = D.MSwinPParams.build(d_enc, heads, schedule, rng, dtype)
        elif decoder == "mswin-s":
            dec = D.MSwinSParams.build(d_enc, heads, schedule, rng, dtype)
        else:
            dec = D.MSwinCParams.build(d_enc, heads, schedule, rng, dtype)
        classify = LinearParams.build(d_enc, num_classes, rng, dtype)
        aux = D.AuxHeadParams.build(widths[2], aux_hidden, num_classes, rng, dtype)
        return cls(
            backbone=bb,
            encoder=enc,
            decoder_variant=decoder,
            decoder=dec,
            classify=classify,
            aux=aux,
            num_classes=num_classes,
        )

    def decode(self, fused: T.Tensor) -> T.Tensor:
        if self.decoder_variant == "tfpn":
            return fused
        if self.decoder_variant == "mswin-p":
            return D.mswin_p(fused, self.decoder)
        if self.decoder_variant == "mswin-s":
            return D.mswin_s(fused, self.decoder)
        return D.mswin_c(fused, self.decoder)

    def forward(self, img: T.Tensor, training: bool = False):
        """Main and auxiliary logits at the input resolution."""
        h, w = img.shape[0], img.shape[1]
        feats = backbone_forward(img, self.backbone)
        laterals = top_down(feats, self.encoder, training)
        fused = pyramid_fuse(laterals, self.encoder)
        decoded = self.decode(fused)
        logits = D.seg_head(decoded, self.classify, h, w)
        aux_logits = D.aux_head(feats[2], self.aux, h, w)
        return logits, aux_logits

    def params(self):
        out = self.backbone.params("backbone") + self.encoder.params("encoder")
        if self.decoder is not None:
            out += self.decoder.params("decoder")
        out += self.classify.params("classify")
        out += self.aux.params("aux")
        return out

    def trainable_params(self):
        return [(n, t) for n, t in self.params() if t.requires_grad]


def composite_loss(logits: T.Tensor, aux_logits: T.Tensor, labels: np.ndarray):
    """Total = main cross-entropy + 0.4 * auxiliary cross-entropy."""
    flat = labels.reshape(-1)
    main = T.cross_entropy(T.reshape(logits, (-1, logits.shape[-1])), flat)
    aux = T.cross_entropy(T.reshape(aux_logits, (-1, aux_logits.shape[-1])), flat)
    total = T.add(main, T.scale(aux, AUX_LOSS_WEIGHT))
    return total, main, aux
