"""Command-line interface.

Subcommands: train, eval, flops, gen-data, selfcheck. Exit codes:
0 success, 1 config error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .config import load_config
from .errors import ConfigError, DataError, NumericError


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _parse_size(text: str):
    try:
        h, w = (int(v) for v in text.lower().split("x"))
        if h < 1 or w < 1:
            raise ValueError
        return h, w
    except ValueError:
        raise ConfigError(f"bad --size {text!r}; expected HxW like 512x512") from None


def _cmd_train(args) -> int:
    from .train import train

    cfg = load_config(args.config)
    result = train(cfg, args.out, quiet=not args.verbose)
    print(f"steps={result.steps_run} miou={result.final_miou:.6f}")
    print(f"checkpoint={result.checkpoint}")
    print(f"metrics={result.metrics_log}")
    return 0


def _cmd_eval(args) -> int:
    from .infer import infer_ms, infer_ss
    from .metrics import ConfusionMatrix
    from .train import load_checkpoint, load_dataset

    cfg = load_config(args.config)
    model = load_checkpoint(cfg, args.checkpoint)
    samples = load_dataset(cfg)
    if not samples:
        raise DataError("no samples to evaluate")
    cm = ConfusionMatrix(cfg.model.num_classes)
    for sample in samples:
        if args.ms:
            pred = infer_ms(
                model, sample.image, scales=cfg.eval.scales, flip=cfg.eval.flip,
                crop=cfg.data.crop,
            )
        else:
            pred = infer_ss(model, sample.image, crop=cfg.data.crop)
        cm.update(pred, sample.mask)
    print(f"samples={len(samples)}")
    print(f"mode={'ms' if args.ms else 'ss'}")
    print(f"miou={cm.miou():.6f}")
    print(f"pixel_accuracy={cm.pixel_accuracy():.6f}")
    for cls, iou in enumerate(cm.per_class_iou()):
        if not np.isnan(iou):
            print(f"iou_class_{cls}={iou:.6f}")
    if args.confusion_csv:
        cm.to_csv(args.confusion_csv)
        print(f"confusion_csv={args.confusion_csv}")
    return 0


def _cmd_flops(args) -> int:
    from .flops import ModelSpec, flops_estimate

    cfg = load_config(args.config)
    h, w = _parse_size(args.size)
    spec = ModelSpec(
        backbone=cfg.model.backbone_config(),
        d_enc=cfg.model.d_enc,
        num_classes=cfg.model.num_classes,
        decoder=cfg.model.decoder,
        schedule=cfg.model.window_schedule(),
        fuse_window=cfg.model.fuse_window,
        aux_hidden=cfg.model.aux_hidden,
    )
    report = flops_estimate(spec, h, w)
    for part, value in report.parts.items():
        print(f"flops_{part}={value:.0f}")
    print(f"flops_total={report.total:.0f}")
    print(f"gflops_total={report.giga():.3f}")
    return 0


def _cmd_gen_data(args) -> int:
    from .data import gen_synthetic, save_dataset

    h, w = _parse_size(args.size)
    samples = gen_synthetic(args.seed, args.count, h, w, args.classes)
    save_dataset(samples, args.out)
    print(f"wrote={args.count} dir={args.out}")
    return 0


def _cmd_selfcheck(_args) -> int:
    from .selfcheck import run_selfcheck

    if not run_selfcheck(verbose=True):
        raise NumericError("selfcheck failed")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="swinseg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model from a config file")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--out", default="run")
    p_train.add_argument("--verbose", action="store_true")
    p_train.set_defaults(fn=_cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint")
    p_eval.add_argument("--config", required=True)
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--ms", action="store_true",
                        help="multi-scale + flip probability averaging")
    p_eval.add_argument("--confusion-csv", default="")
    p_eval.set_defaults(fn=_cmd_eval)

    p_flops = sub.add_parser("flops", help="analytic FLOPs for a config")
    p_flops.add_argument("--config", required=True)
    p_flops.add_argument("--size", required=True, help="input size HxW")
    p_flops.set_defaults(fn=_cmd_flops)

    p_gen = sub.add_parser("gen-data", help="write a synthetic dataset")
    p_gen.add_argument("--seed", type=int, required=True)
    p_gen.add_argument("--count", type=int, required=True)
    p_gen.add_argument("--out", required=True)
    p_gen.add_argument("--size", default="64x64")
    p_gen.add_argument("--classes", type=int, default=4)
    p_gen.set_defaults(fn=_cmd_gen_data)

    p_check = sub.add_parser("selfcheck", help="run the oracle/gradient suite")
    p_check.set_defaults(fn=_cmd_selfcheck)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
