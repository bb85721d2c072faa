"""Single-scale and multi-scale/flip inference.

Both paths produce per-pixel class probabilities and argmax with
lowest-index tie-breaking; `infer_ms` with scales=[1.0] and flip off is
bit-identical to `infer_ss` by construction (identity resize, averaging
over one term).

Images larger than the configured crop are tiled with stride crop/2 and
overlapping probabilities are averaged.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T

BACKBONE_STRIDE = 32


def _softmax_np(logits: np.ndarray) -> np.ndarray:
    e = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _resize_np(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    if arr.shape[0] == out_h and arr.shape[1] == out_w:
        return arr
    return T.bilinear_resize(T.constant(arr), out_h, out_w).data


def _forward_probs(model, image: np.ndarray) -> np.ndarray:
    """Pad to the backbone stride, forward, crop, softmax."""
    h, w = image.shape[:2]
    pad_h = (-h) % BACKBONE_STRIDE
    pad_w = (-w) % BACKBONE_STRIDE
    padded = np.pad(image, ((0, pad_h), (0, pad_w), (0, 0)))
    logits, _ = model.forward(T.constant(padded.astype(np.float32)), training=False)
    return _softmax_np(logits.data[:h, :w])


def _tiled_probs(model, image: np.ndarray, crop: int) -> np.ndarray:
    h, w = image.shape[:2]
    if h <= crop and w <= crop:
        return _forward_probs(model, image)
    stride = max(1, crop // 2)

    def starts(extent):
        if extent <= crop:
            return [0]
        xs = list(range(0, extent - crop, stride))
        xs.append(extent - crop)
        return xs

    acc = None
    weight = np.zeros((h, w, 1), dtype=np.float64)
    for y0 in starts(h):
        for x0 in starts(w):
            y1, x1 = min(h, y0 + crop), min(w, x0 + crop)
            probs = _forward_probs(model, image[y0:y1, x0:x1])
            if acc is None:
                acc = np.zeros((h, w, probs.shape[-1]), dtype=np.float64)
            acc[y0:y1, x0:x1] += probs
            weight[y0:y1, x0:x1] += 1.0
    return (acc / weight).astype(probs.dtype)


def predict_probs(model, image: np.ndarray, crop: int | None = None) -> np.ndarray:
    if crop is not None and (image.shape[0] > crop or image.shape[1] > crop):
        return _tiled_probs(model, image, crop)
    return _forward_probs(model, image)


def infer_ss(model, image: np.ndarray, crop: int | None = None) -> np.ndarray:
    """Single-scale label map; ties break to the lowest class index."""
    probs = predict_probs(model, image, crop)
    return probs.argmax(axis=-1).astype(np.uint8)


def infer_ms(model, image: np.ndarray, scales=(0.75, 1.0, 1.25),
             flip: bool = True, crop: int | None = None) -> np.ndarray:
    """Probability-averaged multi-scale (and optionally flipped) prediction."""
    if not scales:
        raise ValueError("infer_ms needs at least one scale")
    h, w = image.shape[:2]
    acc = None
    count = 0
    for scale in scales:
        sh, sw = max(1, round(h * scale)), max(1, round(w * scale))
        scaled = _resize_np(image, sh, sw)
        variants = [(scaled, False)]
        if flip:
            variants.append((np.ascontiguousarray(scaled[:, ::-1]), True))
        for img, flipped in variants:
            probs = predict_probs(model, img, crop)
            probs = _resize_np(probs, h, w)
            if flipped:
                probs = probs[:, ::-1]
            acc = probs.copy() if acc is None else acc + probs
            count += 1
    avg = acc / float(count)
    return avg.argmax(axis=-1).astype(np.uint8)
