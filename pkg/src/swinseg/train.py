"""Training loop: composite-loss optimization with periodic train-set eval.

Emits a line-delimited metrics log (`step=... loss=... miou=... lr=...`,
with `#`-prefixed header lines echoing the configuration) and saves
checkpoints in the flat parameter container. A non-finite loss aborts
the run, leaving the last good checkpoint on disk.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .config import RunConfig, dump_config
from .data import Sample, augment, gen_synthetic, load_directory
from .errors import NumericError
from .infer import infer_ss
from .io import load_into, save_params
from .metrics import ConfusionMatrix
from .model import SegModel, composite_loss
from .optim import AdamW, warmup_lr


def build_model(cfg: RunConfig, seed: int | None = None) -> SegModel:
    m = cfg.model
    return SegModel.build(
        m.backbone_config(),
        num_classes=m.num_classes,
        d_enc=m.d_enc,
        heads=m.heads,
        decoder=m.decoder,
        schedule=m.window_schedule(),
        fuse_window=m.fuse_window,
        aux_hidden=m.aux_hidden,
        seed=cfg.data.seed if seed is None else seed,
    )


def load_dataset(cfg: RunConfig) -> list[Sample]:
    d = cfg.data
    if d.source == "synthetic":
        return gen_synthetic(d.seed, d.count, d.crop, d.crop, cfg.model.num_classes)
    return load_directory(d.path)


def evaluate(model: SegModel, samples, num_classes: int,
             crop: int | None = None) -> ConfusionMatrix:
    cm = ConfusionMatrix(num_classes)
    for sample in samples:
        pred = infer_ss(model, sample.image, crop=crop)
        cm.update(pred, sample.mask)
    return cm


@dataclass
class TrainResult:
    steps_run: int
    final_miou: float
    nan_detected: bool
    checkpoint: Path
    metrics_log: Path
    miou_history: list


def train(cfg: RunConfig, out_dir, quiet: bool = True) -> TrainResult:
    cfg.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    checkpoint = out / "checkpoint.swpt"
    log_path = out / "metrics.log"

    dataset = load_dataset(cfg)
    model = build_model(cfg)
    opt = AdamW(
        model.trainable_params(),
        lr=cfg.optimizer.lr,
        weight_decay=cfg.optimizer.weight_decay,
        betas=(cfg.optimizer.beta1, cfg.optimizer.beta2),
        eps=cfg.optimizer.eps,
    )
    order_rng = np.random.default_rng(np.random.SeedSequence([cfg.data.seed, 1]))
    aug_rng = np.random.default_rng(np.random.SeedSequence([cfg.data.seed, 2]))

    miou_history = []
    nan_detected = False
    steps_run = 0

    with open(log_path, "w", encoding="utf-8") as log:
        for line in dump_config(cfg).strip().splitlines():
            log.write(f"# {line}\n")

        def emit(step, loss_val, miou, lr):
            line = f"step={step} loss={loss_val:.6f} miou={miou:.6f} lr={lr:.8g}"
            log.write(line + "\n")
            log.flush()
            if not quiet:
                print(line)

        save_params(checkpoint, model.params())
        last_loss = float("nan")
        for step in range(1, cfg.optimizer.steps + 1):
            lr = warmup_lr(cfg.optimizer.lr, step, cfg.optimizer.warmup)
            batch_losses = []
            with T.Tape(rng_seed=cfg.data.seed) as tape:
                for _ in range(cfg.optimizer.batch_size):
                    idx = int(order_rng.integers(len(dataset)))
                    sample = augment(
                        dataset[idx], cfg.data.crop, cfg.data.crop,
                        cfg.data.flip_p, aug_rng,
                    )
                    img = T.constant(sample.image)
                    logits, aux_logits = model.forward(img, training=True)
                    total, _, _ = composite_loss(logits, aux_logits, sample.mask)
                    if cfg.optimizer.batch_size > 1:
                        total = T.scale(total, 1.0 / cfg.optimizer.batch_size)
                    batch_losses.append(total)
                loss = batch_losses[0]
                for extra in batch_losses[1:]:
                    loss = T.add(loss, extra)
                last_loss = loss.item()
                if not np.isfinite(last_loss):
                    nan_detected = True
                    emit(step, last_loss, -1.0, lr)
                    log.write("# aborted: non-finite loss, last good checkpoint kept\n")
                    break
                tape.backward(loss)
            opt.step(lr=lr)
            opt.zero_grad()
            steps_run = step

            if step % cfg.eval.every == 0 or step == cfg.optimizer.steps:
                cm = evaluate(model, dataset, cfg.model.num_classes)
                miou = cm.miou()
                miou_history.append((step, miou))
                emit(step, last_loss, miou, lr)
                save_params(checkpoint, model.params())
                if cfg.optimizer.stop_miou > 0 and miou >= cfg.optimizer.stop_miou:
                    log.write(f"# early stop: miou {miou:.4f} at step {step}\n")
                    break

    if nan_detected:
        raise NumericError(
            f"training aborted at step {steps_run + 1}: non-finite loss "
            f"(last good checkpoint at {checkpoint})"
        )

    final_miou = miou_history[-1][1] if miou_history else float("nan")
    return TrainResult(
        steps_run=steps_run,
        final_miou=final_miou,
        nan_detected=nan_detected,
        checkpoint=checkpoint,
        metrics_log=log_path,
        miou_history=miou_history,
    )


def load_checkpoint(cfg: RunConfig, path) -> SegModel:
    model = build_model(cfg)
    load_into(model.params(), path)
    return model
