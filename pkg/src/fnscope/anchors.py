"""Deterministic one-stage anchor-grid generation.

Dumps from one-stage detectors may elide their (very large) proposal set and
declare an anchor spec instead; the analyzer regenerates the grid from image
size and spec alone. The resize convention implemented here — scale the
shorter side to ``shorter_side`` capped by ``max_side``, round half-up, pad
both dims up to ``pad_multiple``, then ``ceil(padded / stride)`` locations per
level — yields 163206 anchors for a 640x480 image under the defaults.

Grid order is part of the format contract: levels in ``strides`` order, then
locations row-major (y outer, x inner), then sizes, then aspect ratios.
Anchor boxes are returned in the *original* image coordinate frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np


@dataclass(frozen=True)
class AnchorSpec:
    strides: tuple[int, ...] = (8, 16, 32, 64, 128)
    base_sizes: tuple[float, ...] = (32.0, 64.0, 128.0, 256.0, 512.0)
    aspect_ratios: tuple[float, ...] = (0.5, 1.0, 2.0)
    scale_octaves: int = 3
    # Explicit per-level size lists override base_sizes/scale_octaves.
    sizes_per_level: tuple[tuple[float, ...], ...] | None = None
    shorter_side: int | None = 800
    max_side: int | None = 1333
    pad_multiple: int = 32
    center_offset: float = 0.5

    def __post_init__(self):
        if not self.strides:
            raise ValueError("anchor spec needs at least one stride")
        if any(b <= a for a, b in zip(self.strides, self.strides[1:])):
            raise ValueError("strides must be strictly increasing")
        if self.sizes_per_level is not None:
            if len(self.sizes_per_level) != len(self.strides):
                raise ValueError("sizes_per_level length must match strides")
            counts = {len(s) for s in self.sizes_per_level}
            if len(counts) != 1 or 0 in counts:
                raise ValueError("each level needs the same nonzero size count")
        else:
            if len(self.base_sizes) != len(self.strides):
                raise ValueError("base_sizes length must match strides")
            if self.scale_octaves < 1:
                raise ValueError("scale_octaves must be >= 1")
        if not self.aspect_ratios or any(r <= 0 for r in self.aspect_ratios):
            raise ValueError("aspect ratios must be positive")
        if self.pad_multiple < 1:
            raise ValueError("pad_multiple must be >= 1")

    def level_sizes(self, level: int) -> tuple[float, ...]:
        if self.sizes_per_level is not None:
            return self.sizes_per_level[level]
        base = self.base_sizes[level]
        return tuple(base * 2.0 ** (k / self.scale_octaves) for k in range(self.scale_octaves))

    @property
    def anchors_per_location(self) -> int:
        return len(self.level_sizes(0)) * len(self.aspect_ratios)


def resized_dims(width: int, height: int, spec: AnchorSpec) -> tuple[int, int, float]:
    """Resized (width, height) plus the applied scale factor."""
    if width <= 0 or height <= 0:
        raise ValueError("image dimensions must be positive")
    if spec.shorter_side is None:
        return width, height, 1.0
    scale = spec.shorter_side / min(width, height)
    if spec.max_side is not None and max(width, height) * scale > spec.max_side:
        scale = spec.max_side / max(width, height)
    return int(width * scale + 0.5), int(height * scale + 0.5), scale


def padded_dims(width: int, height: int, spec: AnchorSpec) -> tuple[int, int]:
    rw, rh, _ = resized_dims(width, height, spec)
    m = spec.pad_multiple
    return math.ceil(rw / m) * m, math.ceil(rh / m) * m


def level_grid_shapes(width: int, height: int, spec: AnchorSpec) -> list[tuple[int, int]]:
    """(cols, rows) of the location grid at every pyramid level."""
    pw, ph = padded_dims(width, height, spec)
    return [(math.ceil(pw / s), math.ceil(ph / s)) for s in spec.strides]


def anchor_count(width: int, height: int, spec: AnchorSpec) -> int:
    per_loc = spec.anchors_per_location
    return sum(cols * rows * per_loc for cols, rows in level_grid_shapes(width, height, spec))


@lru_cache(maxsize=8)
def _anchor_boxes_cached(width: int, height: int, spec: AnchorSpec) -> np.ndarray:
    rw, rh, _ = resized_dims(width, height, spec)
    sx = rw / width
    sy = rh / height
    shapes = level_grid_shapes(width, height, spec)
    chunks: list[np.ndarray] = []
    for level, (cols, rows) in enumerate(shapes):
        stride = spec.strides[level]
        # Per-location template: sizes outer, ratios inner (w, h) half-extents.
        half = []
        for size in spec.level_sizes(level):
            for ratio in spec.aspect_ratios:
                h = size * math.sqrt(ratio)
                w = size / math.sqrt(ratio)
                half.append((w / 2.0, h / 2.0))
        half_arr = np.asarray(half, dtype=np.float64)  # (A, 2)
        cx = (np.arange(cols, dtype=np.float64) + spec.center_offset) * stride
        cy = (np.arange(rows, dtype=np.float64) + spec.center_offset) * stride
        gx, gy = np.meshgrid(cx, cy)  # row-major: y outer, x inner
        centers = np.stack([gx.ravel(), gy.ravel()], axis=1)  # (L, 2)
        c = np.repeat(centers, len(half_arr), axis=0)
        e = np.tile(half_arr, (len(centers), 1))
        boxes = np.concatenate([c - e, c + e], axis=1)  # resized frame
        boxes[:, 0::2] /= sx
        boxes[:, 1::2] /= sy
        chunks.append(boxes)
    out = np.concatenate(chunks, axis=0)
    out.setflags(write=False)
    return out


def anchor_boxes(width: int, height: int, spec: AnchorSpec) -> np.ndarray:
    """(N, 4) corner-form anchor boxes in original image coordinates.

    Cached per (size, spec); the returned array is read-only and shared.
    """
    return _anchor_boxes_cached(width, height, spec)


DEFAULT_ANCHOR_SPEC = AnchorSpec()
