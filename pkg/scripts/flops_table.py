#!/usr/bin/env python3
"""Print the analytic FLOPs table for the reference configuration.

Four decoder variants on the small backbone at 512x512, fusion width 512,
with the six-block window schedule (5/7/12, unshifted + half-shifted).
"""

from swinseg.backbone import backbone_preset
from swinseg.decoders import WindowSchedule
from swinseg.flops import ModelSpec, flops_estimate


def main():
    schedule = WindowSchedule.from_windows([5, 7, 12])
    rows = []
    for decoder in ("tfpn", "mswin-p", "mswin-s", "mswin-c"):
        spec = ModelSpec(
            backbone=backbone_preset("swin-s"),
            d_enc=512,
            num_classes=150,
            decoder=decoder,
            schedule=schedule,
        )
        report = flops_estimate(spec, 512, 512)
        rows.append((decoder, report))

    print(f"{'decoder':10s} {'GFLOPs':>10s} {'GMACs':>10s} {'vs tfpn':>8s}")
    base = rows[0][1].total
    for decoder, report in rows:
        print(
            f"{decoder:10s} {report.giga():10.1f} {report.total / 2e9:10.1f} "
            f"{report.total / base:8.2f}"
        )
    print("\nper-part breakdown (GFLOPs):")
    for decoder, report in rows:
        parts = "  ".join(f"{k}={v / 1e9:.1f}" for k, v in report.parts.items())
        print(f"  {decoder:10s} {parts}")


if __name__ == "__main__":
    main()
