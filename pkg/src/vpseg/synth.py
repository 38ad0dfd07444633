"""Deterministic synthetic scenes: labeled, non-overlapping shapes on a canvas.

These scenes act as a pixel-perfect oracle for the refinement pipeline and the
evaluation metrics; every run with the same seed and spec is identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .arrays import BinaryMask
from .errors import ScenePackingError

__all__ = ["SceneSpec", "SyntheticScene", "scene_generate"]

SHAPE_KINDS = ("rectangle", "ellipse", "ring")


@dataclass(frozen=True)
class SceneSpec:
    height: int = 128
    width: int = 128
    min_objects: int = 3
    max_objects: int = 6
    kinds: tuple[str, ...] = SHAPE_KINDS
    min_size: int = 20
    max_size: int = 48
    gap: int = 2
    max_attempts: int = 200

    def __post_init__(self):
        if self.min_objects < 1 or self.max_objects < self.min_objects:
            raise ValueError("need 1 <= min_objects <= max_objects")
        unknown = [k for k in self.kinds if k not in SHAPE_KINDS]
        if unknown:
            raise ValueError(f"unknown shape kinds: {unknown}")
        if self.min_size < 4 or self.max_size < self.min_size:
            raise ValueError("need 4 <= min_size <= max_size")


@dataclass(frozen=True)
class SyntheticScene:
    """Label image (0 = background, k > 0 = object k) plus per-object masks."""

    labels: np.ndarray
    shapes: tuple[BinaryMask, ...] = field(default=())

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int32)
        labels = np.ascontiguousarray(labels)
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        if not self.shapes:
            count = int(labels.max())
            shapes = tuple(BinaryMask(labels == k) for k in range(1, count + 1))
            object.__setattr__(self, "shapes", shapes)

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def object_count(self) -> int:
        return len(self.shapes)

    def mask_for_label(self, label: int) -> BinaryMask:
        if not (1 <= label <= self.object_count):
            raise ValueError(f"label {label} out of range 1..{self.object_count}")
        return self.shapes[label - 1]


def _draw_shape(kind: str, size_y: int, size_x: int) -> np.ndarray:
    """Render one shape into a tight size_y x size_x boolean stamp."""
    yy, xx = np.mgrid[0:size_y, 0:size_x]
    if kind == "rectangle":
        return np.ones((size_y, size_x), dtype=bool)
    cy, cx = (size_y - 1) / 2.0, (size_x - 1) / 2.0
    ry, rx = size_y / 2.0, size_x / 2.0
    inside = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
    if kind == "ellipse":
        return inside
    if kind == "ring":
        # hole radius ~40% keeps the ring 4-connected and leaves a real hole
        hole = ((yy - cy) / (0.4 * ry)) ** 2 + ((xx - cx) / (0.4 * rx)) ** 2 <= 1.0
        return inside & ~hole
    raise ValueError(f"unknown shape kind {kind!r}")


def scene_generate(seed: int, spec: SceneSpec = SceneSpec()) -> SyntheticScene:
    """Place non-overlapping shapes on the canvas, deterministically per seed.

    Shapes keep `spec.gap` pixels of clearance from each other. Raises
    ScenePackingError if a shape cannot be placed within max_attempts tries.
    """
    rng = np.random.default_rng(seed)
    labels = np.zeros((spec.height, spec.width), dtype=np.int32)
    occupied = np.zeros((spec.height, spec.width), dtype=bool)
    count = int(rng.integers(spec.min_objects, spec.max_objects + 1))
    for obj in range(1, count + 1):
        placed = False
        for _ in range(spec.max_attempts):
            kind = str(rng.choice(spec.kinds))
            size_y = int(rng.integers(spec.min_size, spec.max_size + 1))
            size_x = int(rng.integers(spec.min_size, spec.max_size + 1))
            if size_y > spec.height or size_x > spec.width:
                continue
            top = int(rng.integers(0, spec.height - size_y + 1))
            left = int(rng.integers(0, spec.width - size_x + 1))
            stamp = _draw_shape(kind, size_y, size_x)
            g = spec.gap
            y0, y1 = max(0, top - g), min(spec.height, top + size_y + g)
            x0, x1 = max(0, left - g), min(spec.width, left + size_x + g)
            if occupied[y0:y1, x0:x1].any():
                continue
            labels[top : top + size_y, left : left + size_x][stamp] = obj
            occupied[top : top + size_y, left : left + size_x] |= stamp
            placed = True
            break
        if not placed:
            raise ScenePackingError(
                f"could not place object {obj}/{count} after {spec.max_attempts} attempts"
            )
    return SyntheticScene(labels=labels)
