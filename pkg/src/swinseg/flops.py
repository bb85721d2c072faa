"""Analytic FLOPs accounting over the model structure.

Conventions (multiply-accumulates count as 2 FLOPs):

* linear map: 2 * positions * d_in * d_out
* windowed attention, per window of side m at embed width d:
  2*4*m^2*d^2 for the Q/K/V/output projections (3 projections for the
  query-passthrough variant) plus 2*2*(m^2)^2*d for the score and
  weighted-value products; windows are counted over the padded grid
* norms and activations: positions * channels
* bilinear resize: out_positions * channels * 8

Softmax exponentials and the divisions inside norms beyond the
per-element count are excluded.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .backbone import BackboneConfig
from .decoders import DECODER_MLP_RATIO, WindowSchedule


@dataclass
class FlopsReport:
    parts: dict = field(default_factory=dict)

    def add(self, part: str, amount: float):
        self.parts[part] = self.parts.get(part, 0.0) + float(amount)

    @property
    def total(self) -> float:
        return float(sum(self.parts.values()))

    def giga(self, part=None) -> float:
        value = self.total if part is None else self.parts.get(part, 0.0)
        return value / 1e9

    def table(self) -> str:
        lines = [f"{name:12s} {val / 1e9:10.2f} GFLOPs"
                 for name, val in self.parts.items()]
        lines.append(f"{'total':12s} {self.total / 1e9:10.2f} GFLOPs")
        return "\n".join(lines)


def linear_flops(positions: int, d_in: int, d_out: int) -> float:
    return 2.0 * positions * d_in * d_out


def norm_flops(positions: int, channels: int) -> float:
    return float(positions * channels)


def activation_flops(positions: int, channels: int) -> float:
    return float(positions * channels)


def resize_flops(out_positions: int, channels: int) -> float:
    return 8.0 * out_positions * channels


def _padded(extent: int, m: int) -> int:
    return -(-extent // m) * m


def attention_flops(h: int, w: int, m: int, embed: int,
                    projections: int = 4) -> float:
    """Windowed attention over an h x w map (padded to window multiples)."""
    num_windows = (_padded(h, m) // m) * (_padded(w, m) // m)
    tokens = m * m
    per_window = 2.0 * projections * tokens * embed**2
    per_window += 2.0 * 2.0 * tokens**2 * embed
    return num_windows * per_window


def _mlp_flops(positions: int, d: int, hidden: int) -> float:
    return (
        linear_flops(positions, d, hidden)
        + activation_flops(positions, hidden)
        + linear_flops(positions, hidden, d)
    )


def _swin_block_flops(h: int, w: int, m: int, d: int, mlp_ratio: float) -> float:
    positions = h * w
    hidden = max(1, int(d * mlp_ratio))
    return (
        norm_flops(positions, d)
        + attention_flops(h, w, m, d)
        + norm_flops(positions, d)
        + _mlp_flops(positions, d, hidden)
    )


@dataclass(frozen=True)
class ModelSpec:
    """Everything the estimator needs to know about a model."""

    backbone: BackboneConfig
    d_enc: int
    num_classes: int
    decoder: str
    schedule: WindowSchedule
    fuse_window: int = 7
    aux_hidden: int = 256
    backbone_mlp_ratio: float = 4.0
    decoder_mlp_ratio: float = DECODER_MLP_RATIO


def flops_estimate(spec: ModelSpec, h: int, w: int) -> FlopsReport:
    """Analytic FLOPs of one forward pass on an h x w input."""
    report = FlopsReport()
    bb = spec.backbone
    p = bb.patch

    # backbone
    sh, sw = h // p, w // p
    report.add("backbone", linear_flops(sh * sw, p * p * 3, bb.base_width))
    report.add("backbone", norm_flops(sh * sw, bb.base_width))
    stage_extents = []
    for s in range(4):
        d = bb.stage_width(s)
        if s > 0:
            report.add("backbone", norm_flops(sh * sw, 4 * (d // 2)))
            report.add("backbone", linear_flops(sh * sw, 4 * (d // 2), d))
        stage_extents.append((sh, sw))
        for _ in range(bb.depths[s]):
            report.add(
                "backbone",
                _swin_block_flops(sh, sw, bb.window, d, spec.backbone_mlp_ratio),
            )
        if s < 3:
            sh, sw = -(-sh // 2), -(-sw // 2)

    # encoder: lateral projections, top-down resizes, per-lateral fusion
    d_enc = spec.d_enc
    for s in range(4):
        eh, ew = stage_extents[s]
        width = bb.stage_width(s)
        report.add("encoder", linear_flops(eh * ew, width, d_enc))
        report.add("encoder", norm_flops(eh * ew, d_enc))
        report.add("encoder", activation_flops(eh * ew, d_enc))
    for s in (2, 1, 0):  # upsample deeper lateral onto this stage's grid
        eh, ew = stage_extents[s]
        report.add("encoder", resize_flops(eh * ew, d_enc))
    out_h, out_w = stage_extents[0]
    for s in range(4):
        eh, ew = stage_extents[s]
        report.add("encoder", attention_flops(eh, ew, spec.fuse_window, d_enc))
        if s > 0:
            report.add("encoder", resize_flops(out_h * out_w, d_enc))

    # decoder
    positions = out_h * out_w
    hidden = max(1, int(d_enc * spec.decoder_mlp_ratio))
    if spec.decoder == "mswin-p":
        report.add("decoder", norm_flops(positions, d_enc))
        for m, _ in spec.schedule.entries:
            report.add("decoder", attention_flops(out_h, out_w, m, d_enc))
        l = len(spec.schedule)
        report.add("decoder", linear_flops(positions, l * d_enc, d_enc))
        report.add("decoder", norm_flops(positions, d_enc))
        report.add("decoder", _mlp_flops(positions, d_enc, hidden))
    elif spec.decoder == "mswin-s":
        for m, _ in spec.schedule.entries:
            report.add(
                "decoder",
                _swin_block_flops(out_h, out_w, m, d_enc, spec.decoder_mlp_ratio),
            )
    elif spec.decoder == "mswin-c":
        for m, _ in spec.schedule.entries:
            report.add(
                "decoder",
                attention_flops(out_h, out_w, m, d_enc, projections=3),
            )
    # 'tfpn': no decoder cost

    # heads
    report.add("seg_head", linear_flops(positions, d_enc, spec.num_classes))
    report.add("seg_head", resize_flops(h * w, spec.num_classes))
    ah, aw = stage_extents[2]
    report.add("aux_head", linear_flops(ah * aw, bb.stage_width(2), spec.aux_hidden))
    report.add("aux_head", activation_flops(ah * aw, spec.aux_hidden))
    report.add("aux_head", linear_flops(ah * aw, spec.aux_hidden, spec.num_classes))
    report.add("aux_head", resize_flops(h * w, spec.num_classes))
    return report
