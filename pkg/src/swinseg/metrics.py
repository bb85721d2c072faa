"""Segmentation metrics: confusion matrix, mIoU, pixel accuracy."""

from __future__ import annotations

import numpy as np

from .errors import DataError

IGNORE_LABEL = 255


class ConfusionMatrix:
    """K x K pixel-count accumulator; rows are ground truth, cols prediction.

    Label 255 marks ignored pixels and is never counted. Matrices
    accumulated independently merge by addition.
    """

    def __init__(self, num_classes: int):
        if num_classes < 1:
            raise DataError("need at least one class")
        self.num_classes = num_classes
        self.counts = np.zeros((num_classes, num_classes), dtype=np.int64)

    def update(self, pred: np.ndarray, gt: np.ndarray) -> "ConfusionMatrix":
        pred = np.asarray(pred)
        gt = np.asarray(gt)
        if pred.shape != gt.shape:
            raise DataError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
        keep = gt != IGNORE_LABEL
        p = pred[keep].astype(np.int64)
        g = gt[keep].astype(np.int64)
        k = self.num_classes
        if p.size:
            if p.min() < 0 or p.max() >= k:
                raise DataError("prediction label out of range")
            if g.min() < 0 or g.max() >= k:
                raise DataError("ground-truth label out of range")
            self.counts += np.bincount(g * k + p, minlength=k * k).reshape(k, k)
        return self

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.num_classes != self.num_classes:
            raise DataError("cannot merge confusion matrices of different sizes")
        self.counts += other.counts
        return self

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def per_class_iou(self) -> np.ndarray:
        """IoU per class; NaN where the class is absent from pred and gt."""
        diag = np.diag(self.counts).astype(np.float64)
        union = self.counts.sum(0) + self.counts.sum(1) - diag
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(union > 0, diag / union, np.nan)

    def miou(self) -> float:
        """Mean IoU over classes present in prediction or ground truth."""
        iou = self.per_class_iou()
        valid = ~np.isnan(iou)
        if not valid.any():
            raise DataError("mIoU undefined: no class has a nonzero union")
        return float(iou[valid].mean())

    def pixel_accuracy(self) -> float:
        if self.total == 0:
            raise DataError("pixel accuracy undefined on an empty matrix")
        return float(np.diag(self.counts).sum() / self.total)

    def to_csv(self, path):
        header = ",".join(f"pred_{i}" for i in range(self.num_classes))
        np.savetxt(path, self.counts, fmt="%d", delimiter=",",
                   header="gt\\pred," + header, comments="")
