"""Datasets: procedural synthetic scenes, directory ingestion, augmentation.

A Sample pairs an RGB image in [0, 1] with a same-size uint8 label map
(255 = ignore). Synthetic scenes paint one shape per foreground class
(rectangles, discs, right triangles, cycling for K > 4) over a noisy
background, in class order so later classes occlude earlier ones; labels
are exact by construction and everything is deterministic per seed.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

IGNORE_LABEL = 255

# well-separated base colors; index 0 is the background
PALETTE = np.array(
    [
        (0.46, 0.46, 0.46),
        (0.85, 0.16, 0.16),
        (0.15, 0.78, 0.24),
        (0.20, 0.34, 0.90),
        (0.92, 0.82, 0.14),
        (0.80, 0.18, 0.84),
        (0.12, 0.84, 0.84),
        (0.95, 0.55, 0.10),
    ],
    dtype=np.float32,
)

PIXEL_NOISE = 0.04
BRIGHTNESS_JITTER = 0.08


def _shape_size_range(h, w):
    """Size bounds scaled to the canvas (tuned for 64x64)."""
    base = min(h, w)
    return {
        "rect": (base // 4, base * 7 // 16),  # side range
        "disc": (base // 9, base * 3 // 16),  # radius range
        "tri": (base * 9 // 32, base * 15 // 32),  # leg range
    }


def _paint_rect(canvas_mask, rng, lo, hi):
    h, w = canvas_mask.shape
    rw = int(rng.integers(lo, hi + 1))
    rh = int(rng.integers(lo, hi + 1))
    y0 = int(rng.integers(0, h - rh + 1))
    x0 = int(rng.integers(0, w - rw + 1))
    region = np.zeros_like(canvas_mask, dtype=bool)
    region[y0 : y0 + rh, x0 : x0 + rw] = True
    return region


def _paint_disc(canvas_mask, rng, lo, hi):
    h, w = canvas_mask.shape
    r = int(rng.integers(lo, hi + 1))
    cy = int(rng.integers(r, h - r))
    cx = int(rng.integers(r, w - r))
    yy, xx = np.ogrid[:h, :w]
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r


def _paint_triangle(canvas_mask, rng, lo, hi):
    # right triangle with horizontal/vertical legs of length s:
    # pixels (y0+dy, x0+dx) with dx+dy <= s
    h, w = canvas_mask.shape
    s = int(rng.integers(lo, hi + 1))
    y0 = int(rng.integers(0, h - s))
    x0 = int(rng.integers(0, w - s))
    yy, xx = np.ogrid[:h, :w]
    dy = yy - y0
    dx = xx - x0
    return (dy >= 0) & (dx >= 0) & (dy + dx <= s)


_FAMILIES = (("rect", _paint_rect), ("disc", _paint_disc), ("tri", _paint_triangle))


@dataclass
class Sample:
    image: np.ndarray  # float32 [H, W, 3] in [0, 1]
    mask: np.ndarray  # uint8 [H, W], labels or 255

    def __post_init__(self):
        if self.image.shape[:2] != self.mask.shape:
            raise DataError(
                f"image {self.image.shape[:2]} and mask {self.mask.shape} differ"
            )


def _render_sample(rng, h, w, num_classes) -> Sample:
    sizes = _shape_size_range(h, w)
    image = np.clip(
        PALETTE[0] + rng.normal(0.0, PIXEL_NOISE, size=(h, w, 3)), 0.0, 1.0
    ).astype(np.float32)
    mask = np.zeros((h, w), dtype=np.uint8)

    for cls in range(1, num_classes):
        family, painter = _FAMILIES[(cls - 1) % len(_FAMILIES)]
        lo, hi = sizes[family]
        region = painter(mask, rng, lo, hi)
        color = PALETTE[cls % len(PALETTE)] + rng.uniform(
            -BRIGHTNESS_JITTER, BRIGHTNESS_JITTER
        )
        noise = rng.normal(0.0, PIXEL_NOISE, size=(int(region.sum()), 3))
        image[region] = np.clip(color + noise, 0.0, 1.0).astype(np.float32)
        mask[region] = cls
    return Sample(image=image, mask=mask)


def gen_synthetic(seed: int, count: int, h: int = 64, w: int = 64,
                  num_classes: int = 4) -> list[Sample]:
    """Deterministic procedural dataset; same seed, same bytes."""
    if num_classes < 2:
        raise ConfigError("synthetic data needs at least 2 classes")
    sizes = _shape_size_range(h, w)
    if h < 16 or w < 16 or any(lo < 1 or lo > hi for lo, hi in sizes.values()):
        raise ConfigError(f"canvas {h}x{w} too small for shape generation")
    children = np.random.SeedSequence(seed).spawn(count)
    return [
        _render_sample(np.random.default_rng(child), h, w, num_classes)
        for child in children
    ]


def expected_visible_fraction(h: int, w: int, num_classes: int) -> np.ndarray:
    """Closed-form expected per-class pixel fraction of `gen_synthetic`.

    Raw expected areas come from exact rasterization counts averaged over
    the size distribution; occlusion by later-painted classes is applied
    as a first-order uniform-coverage correction.
    """
    sizes = _shape_size_range(h, w)

    def raw_area(cls):
        family, _ = _FAMILIES[(cls - 1) % len(_FAMILIES)]
        lo, hi = sizes[family]
        draws = np.arange(lo, hi + 1)
        if family == "rect":
            return float(draws.mean() ** 2)
        if family == "disc":
            counts = []
            for r in draws:
                yy, xx = np.ogrid[-r : r + 1, -r : r + 1]
                counts.append(int((yy**2 + xx**2 <= r * r).sum()))
            return float(np.mean(counts))
        return float(np.mean((draws + 1) * (draws + 2) / 2))

    canvas = float(h * w)
    areas = np.array([raw_area(c) for c in range(1, num_classes)])
    fractions = np.zeros(num_classes)
    for cls in range(1, num_classes):
        cover_after = areas[cls:].sum() / canvas
        fractions[cls] = areas[cls - 1] / canvas * max(0.0, 1.0 - cover_after)
    fractions[0] = 1.0 - fractions[1:].sum()
    return fractions


# ---------------------------------------------------------------------------
# directory ingestion


def load_directory(path) -> list[Sample]:
    """Load paired images/<name>.png and masks/<name>.png, sorted by name."""
    from PIL import Image

    root = Path(path)
    img_dir, mask_dir = root / "images", root / "masks"
    if not img_dir.is_dir() or not mask_dir.is_dir():
        raise DataError(f"{root}: expected images/ and masks/ subdirectories")
    img_files = {p.stem: p for p in sorted(img_dir.glob("*.png"))}
    mask_files = {p.stem: p for p in sorted(mask_dir.glob("*.png"))}
    for stem in img_files.keys() ^ mask_files.keys():
        where = img_files.get(stem) or mask_files.get(stem)
        raise DataError(f"unpaired file: {where}")
    if not img_files:
        warnings.warn(f"{root}: no samples found", stacklevel=2)
        return []

    samples = []
    for stem in sorted(img_files):
        img = np.asarray(Image.open(img_files[stem]).convert("RGB"), dtype=np.float32)
        mask = np.asarray(Image.open(mask_files[stem]))
        if mask.ndim == 3:
            mask = mask[..., 0]
        if img.shape[:2] != mask.shape:
            raise DataError(
                f"{img_files[stem].name}: image {img.shape[:2]} vs mask {mask.shape}"
            )
        samples.append(Sample(image=img / 255.0, mask=mask.astype(np.uint8)))
    return samples


def save_dataset(samples, out_dir):
    """Write samples as paired PNGs under images/ and masks/."""
    from PIL import Image

    root = Path(out_dir)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    for i, sample in enumerate(samples):
        name = f"{i:05d}.png"
        rgb = np.clip(sample.image * 255.0 + 0.5, 0, 255).astype(np.uint8)
        Image.fromarray(rgb).save(root / "images" / name)
        Image.fromarray(sample.mask, mode="L").save(root / "masks" / name)


# ---------------------------------------------------------------------------
# augmentation


def augment(sample: Sample, crop_h: int, crop_w: int, flip_p: float,
            rng: np.random.Generator) -> Sample:
    """Random crop (padding small inputs with zeros/ignore) + optional flip."""
    img, mask = sample.image, sample.mask
    h, w = mask.shape
    if h < crop_h or w < crop_w:
        pad_h, pad_w = max(0, crop_h - h), max(0, crop_w - w)
        img = np.pad(img, ((0, pad_h), (0, pad_w), (0, 0)))
        mask = np.pad(mask, ((0, pad_h), (0, pad_w)), constant_values=IGNORE_LABEL)
        h, w = mask.shape
    y0 = int(rng.integers(0, h - crop_h + 1))
    x0 = int(rng.integers(0, w - crop_w + 1))
    img = img[y0 : y0 + crop_h, x0 : x0 + crop_w]
    mask = mask[y0 : y0 + crop_h, x0 : x0 + crop_w]
    if rng.random() < flip_p:
        img = img[:, ::-1]
        mask = mask[:, ::-1]
    return Sample(image=np.ascontiguousarray(img), mask=np.ascontiguousarray(mask))
