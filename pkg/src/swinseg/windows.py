"""Window partitioning, cyclic shifts, attention masks, and the
relative-position index table.

Conventions: feature maps are [H, W, C]; windows are enumerated row-major
over the window grid and flattened row-major within each window. Maps
whose extents are not multiples of the window side are zero-padded on the
bottom/right; padded tokens are excluded from attention by the mask and
dropped again by `window_reverse`.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import tensor as T
from .errors import ConfigError

# Additive -inf surrogate: large enough that softmax underflows to 0 in
# float32 while keeping all arithmetic finite.
MASK_FILL = -1e9


@dataclass(frozen=True)
class WindowGrid:
    """Geometry of one windowed-attention pass over an H x W token map."""

    m: int
    n: int
    h: int
    w: int
    h_pad: int
    w_pad: int

    @classmethod
    def build(cls, h: int, w: int, m: int, n: int = 0) -> "WindowGrid":
        if m <= 0:
            raise ConfigError(f"window size must be positive, got {m}")
        if not 0 <= n < m:
            raise ConfigError(f"shift must satisfy 0 <= n < m, got n={n} m={m}")
        h_pad = -(-h // m) * m
        w_pad = -(-w // m) * m
        return cls(m=m, n=n, h=h, w=w, h_pad=h_pad, w_pad=w_pad)

    @property
    def pad_bottom(self) -> int:
        return self.h_pad - self.h

    @property
    def pad_right(self) -> int:
        return self.w_pad - self.w

    @property
    def windows_y(self) -> int:
        return self.h_pad // self.m

    @property
    def windows_x(self) -> int:
        return self.w_pad // self.m

    @property
    def num_windows(self) -> int:
        return self.windows_y * self.windows_x

    @property
    def has_padding(self) -> bool:
        return self.pad_bottom > 0 or self.pad_right > 0

    def padded_token_mask(self) -> np.ndarray:
        """Boolean [num_windows, m*m], True for zero-padded positions."""
        rows = np.arange(self.h_pad) >= self.h
        cols = np.arange(self.w_pad) >= self.w
        canvas = rows[:, None] | cols[None, :]
        return _tile_windows(canvas, self.m)


def _tile_windows(canvas: np.ndarray, m: int) -> np.ndarray:
    """Reshape an [Hp, Wp] array into [num_windows, m*m] window tiles."""
    hp, wp = canvas.shape
    tiles = canvas.reshape(hp // m, m, wp // m, m).transpose(0, 2, 1, 3)
    return tiles.reshape(-1, m * m)


def window_partition(x: T.Tensor, grid: WindowGrid) -> T.Tensor:
    """Tile an [H, W, C] map into non-overlapping windows.

    Pads bottom/right with zeros up to the grid's padded extents and
    returns [num_windows, m*m, C].
    """
    if x.shape[0] != grid.h or x.shape[1] != grid.w:
        raise ConfigError(
            f"grid built for {grid.h}x{grid.w}, got map {x.shape[0]}x{x.shape[1]}"
        )
    m = grid.m
    x = T.pad2d(x, grid.pad_bottom, grid.pad_right)
    c = x.shape[-1]
    x = T.reshape(x, (grid.windows_y, m, grid.windows_x, m, c))
    x = T.transpose(x, (0, 2, 1, 3, 4))
    return T.reshape(x, (grid.num_windows, m * m, c))


def window_reverse(w: T.Tensor, grid: WindowGrid) -> T.Tensor:
    """Exact inverse of `window_partition`, including the padding crop."""
    m = grid.m
    if w.shape[0] != grid.num_windows or w.shape[1] != m * m:
        raise ValueError(
            f"expected [{grid.num_windows}, {m * m}, C] windows, got {w.shape}"
        )
    c = w.shape[-1]
    x = T.reshape(w, (grid.windows_y, grid.windows_x, m, m, c))
    x = T.transpose(x, (0, 2, 1, 3, 4))
    x = T.reshape(x, (grid.h_pad, grid.w_pad, c))
    return T.crop2d(x, grid.h, grid.w)


def cyclic_shift(x: T.Tensor, dy: int, dx: int) -> T.Tensor:
    """Forward shift: torus roll by (-dy, -dx). Undo with (-dy, -dx)."""
    return T.roll2d(x, -dy, -dx)


@dataclass(frozen=True)
class ShiftMask:
    """Additive attention masks, deduplicated by window pattern.

    patterns: [num_patterns, m*m, m*m] with 0 for permitted pairs and
    MASK_FILL otherwise; window_pattern maps each window to its pattern.
    """

    patterns: np.ndarray
    window_pattern: np.ndarray

    def per_window(self) -> np.ndarray:
        """Expand to one [m*m, m*m] mask per window."""
        return self.patterns[self.window_pattern]

    @property
    def num_patterns(self) -> int:
        return self.patterns.shape[0]


def _axis_region_ids(size: int, pad_size: int, m: int, n: int) -> np.ndarray:
    """Per-coordinate region id along one axis of the rolled canvas.

    Position p < size holds the token whose pre-shift coordinate was
    (p + n) mod size; tokens may only attend within the same contiguous
    pre-shift band (the displaced partition cuts bands at n, n+m, ...).
    Padded coordinates get the sentinel -1.
    """
    ids = np.full(pad_size, -1, dtype=np.int64)
    pos = np.arange(size)
    origin = (pos + n) % size
    ids[:size] = np.where(origin < n, 0, 1 + (origin - n) // m)
    return ids


def _region_mask(grid: WindowGrid) -> ShiftMask:
    row_ids = _axis_region_ids(grid.h, grid.h_pad, grid.m, grid.n)
    col_ids = _axis_region_ids(grid.w, grid.w_pad, grid.m, grid.n)
    stride = col_ids.max() + 2
    labels = row_ids[:, None] * stride + col_ids[None, :]
    # all padded coordinates share one forbidden region
    pad = (row_ids[:, None] < 0) | (col_ids[None, :] < 0)
    labels = np.where(pad, -1, labels)

    win_labels = _tile_windows(labels, grid.m)
    blocked = win_labels[:, :, None] != win_labels[:, None, :]
    uniq, inverse = np.unique(
        blocked.reshape(blocked.shape[0], -1), axis=0, return_inverse=True
    )
    mm = grid.m * grid.m
    patterns = np.where(uniq.reshape(-1, mm, mm), np.float32(MASK_FILL), np.float32(0))
    return ShiftMask(patterns=patterns, window_pattern=inverse.reshape(-1))


def shift_attention_mask(grid: WindowGrid) -> ShiftMask:
    """Mask forbidding cross-region attention after a cyclic shift.

    Tokens whose pre-shift coordinates lie in different cells of the
    displaced window partition (or that are padding) must not attend to
    each other. Requires n > 0; plain W-MSA needs at most a padding mask.
    """
    if grid.n == 0:
        raise ConfigError("shift mask requested for an unshifted grid (n=0)")
    return _region_mask(grid)


def padding_attention_mask(grid: WindowGrid) -> ShiftMask | None:
    """Mask isolating zero-padded tokens for an unshifted grid, if any."""
    if not grid.has_padding:
        return None
    return _region_mask(grid)


def attention_mask(grid: WindowGrid) -> ShiftMask | None:
    """The mask a windowed-attention pass over this grid needs, or None."""
    if grid.n > 0:
        return shift_attention_mask(grid)
    return padding_attention_mask(grid)


@lru_cache(maxsize=64)
def relative_position_index(m: int) -> np.ndarray:
    """[m*m, m*m] indices into a (2m-1)^2-row bias table.

    Entry (i, j) encodes the coordinate delta between tokens i and j of an
    m x m window: (dy + m - 1) * (2m - 1) + (dx + m - 1). Shared by all
    heads.
    """
    if m < 1:
        raise ConfigError(f"window size must be >= 1, got {m}")
    coords = np.stack(np.meshgrid(np.arange(m), np.arange(m), indexing="ij"))
    flat = coords.reshape(2, -1)
    delta = flat[:, :, None] - flat[:, None, :]
    return (delta[0] + m - 1) * (2 * m - 1) + (delta[1] + m - 1)
