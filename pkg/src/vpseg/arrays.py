"""Dense maps, binary masks, and the geometry primitives shared by the whole engine.

All types are immutable after construction and every operation is a pure
function, so samples can be processed in parallel without locking.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ShapeMismatchError

__all__ = [
    "DenseMap",
    "BinaryMask",
    "PadSpec",
    "pad_to_square",
    "unpad",
    "bilinear_resize",
    "connected_components",
    "intersection_area",
    "union",
    "iou",
]

_FOUR_CONN = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
_EIGHT_CONN = np.ones((3, 3), dtype=bool)


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class DenseMap:
    """An H x W field of finite real values (logits, similarity maps, prompts)."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"dense map must be 2-D and non-empty, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("dense map contains non-finite values")
        object.__setattr__(self, "values", _freeze(arr))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape  # type: ignore[return-value]


@dataclass(frozen=True)
class BinaryMask:
    """An H x W boolean mask."""

    bits: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.bits)
        if arr.dtype != bool:
            arr = arr.astype(bool)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"mask must be 2-D and non-empty, got shape {arr.shape}")
        object.__setattr__(self, "bits", _freeze(arr))

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.bits.shape  # type: ignore[return-value]

    def area(self) -> int:
        return int(self.bits.sum())

    @classmethod
    def zeros(cls, height: int, width: int) -> "BinaryMask":
        return cls(np.zeros((height, width), dtype=bool))


@dataclass(frozen=True)
class PadSpec:
    """Records how an image was embedded into a square canvas so it can be undone.

    `padded_side` is always max(original_h, original_w); the offsets locate the
    original content inside the square (top-left anchoring puts them at (0, 0)).
    """

    original_h: int
    original_w: int
    padded_side: int
    offset_y: int
    offset_x: int

    def __post_init__(self):
        if self.padded_side != max(self.original_h, self.original_w):
            raise ValueError("padded_side must equal the longer original side")
        if not (0 <= self.offset_y <= self.padded_side - self.original_h):
            raise ValueError("offset_y places content outside the square")
        if not (0 <= self.offset_x <= self.padded_side - self.original_w):
            raise ValueError("offset_x places content outside the square")


def pad_to_square(m, anchor: str = "top-left"):
    """Zero-pad a map or mask to a square whose side is the longer original side.

    Returns (padded, PadSpec). Padding pixels are 0 / False. `anchor` is
    "top-left" (default) or "center"; the choice is recorded in the PadSpec so
    either convention round-trips through `unpad`.
    """
    h, w = m.shape
    side = max(h, w)
    if anchor == "top-left":
        oy, ox = 0, 0
    elif anchor == "center":
        oy, ox = (side - h) // 2, (side - w) // 2
    else:
        raise ValueError(f"unknown anchor {anchor!r}")
    spec = PadSpec(original_h=h, original_w=w, padded_side=side, offset_y=oy, offset_x=ox)
    if isinstance(m, DenseMap):
        out = np.zeros((side, side), dtype=np.float64)
        out[oy : oy + h, ox : ox + w] = m.values
        return DenseMap(out), spec
    if isinstance(m, BinaryMask):
        out = np.zeros((side, side), dtype=bool)
        out[oy : oy + h, ox : ox + w] = m.bits
        return BinaryMask(out), spec
    raise TypeError(f"cannot pad {type(m).__name__}")


def unpad(m, spec: PadSpec):
    """Crop the original content back out of a padded square. Exact inverse of pad."""
    h, w = m.shape
    if h != spec.padded_side or w != spec.padded_side:
        raise ShapeMismatchError(
            f"padded map is {h}x{w}, expected {spec.padded_side}x{spec.padded_side}"
        )
    ys = slice(spec.offset_y, spec.offset_y + spec.original_h)
    xs = slice(spec.offset_x, spec.offset_x + spec.original_w)
    if isinstance(m, DenseMap):
        return DenseMap(m.values[ys, xs])
    if isinstance(m, BinaryMask):
        return BinaryMask(m.bits[ys, xs])
    raise TypeError(f"cannot unpad {type(m).__name__}")


def bilinear_resize(m: DenseMap, out_h: int, out_w: int) -> DenseMap:
    """Resample a dense map to (out_h, out_w) with bilinear interpolation.

    Uses the half-pixel-center convention: source coordinate
    (dst + 0.5) * in/out - 0.5, clamped to the borders. Constant maps stay
    constant and the operation is exact when the size is unchanged.
    """
    if out_h < 1 or out_w < 1:
        raise ValueError("output size must be at least 1x1")
    src = m.values
    in_h, in_w = src.shape
    if (out_h, out_w) == (in_h, in_w):
        return DenseMap(src.copy())

    ys = (np.arange(out_h, dtype=np.float64) + 0.5) * (in_h / out_h) - 0.5
    xs = (np.arange(out_w, dtype=np.float64) + 0.5) * (in_w / out_w) - 0.5
    ys = np.clip(ys, 0.0, in_h - 1.0)
    xs = np.clip(xs, 0.0, in_w - 1.0)

    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]

    top = src[np.ix_(y0, x0)] * (1.0 - wx) + src[np.ix_(y0, x1)] * wx
    bot = src[np.ix_(y1, x0)] * (1.0 - wx) + src[np.ix_(y1, x1)] * wx
    return DenseMap(top * (1.0 - wy) + bot * wy)


def connected_components(mask: BinaryMask, connectivity: int = 4) -> list[BinaryMask]:
    """Split a mask into connected components (4-connected by default).

    Components are returned in deterministic order: by their top-left-most
    pixel in row-major scan order. Their union is the input and they are
    pairwise disjoint.
    """
    if connectivity == 4:
        structure = _FOUR_CONN
    elif connectivity == 8:
        structure = _EIGHT_CONN
    else:
        raise ValueError("connectivity must be 4 or 8")
    labels, count = ndimage.label(mask.bits, structure=structure)
    if count == 0:
        return []
    flat = labels.ravel()
    first_index = np.full(count + 1, flat.size, dtype=np.int64)
    hits = np.flatnonzero(flat)
    # reversed assignment keeps the smallest flat index per label
    first_index[flat[hits[::-1]]] = hits[::-1]
    order = np.argsort(first_index[1:], kind="stable")
    return [BinaryMask(labels == lab + 1) for lab in order]


def _check_same_shape(a: BinaryMask, b: BinaryMask) -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(f"mask shapes differ: {a.shape} vs {b.shape}")


def intersection_area(a: BinaryMask, b: BinaryMask) -> int:
    _check_same_shape(a, b)
    return int(np.logical_and(a.bits, b.bits).sum())


def union(a: BinaryMask, b: BinaryMask) -> BinaryMask:
    _check_same_shape(a, b)
    return BinaryMask(np.logical_or(a.bits, b.bits))


def iou(a: BinaryMask, b: BinaryMask) -> float:
    """Intersection over union. Both masks empty is defined as 1.0."""
    _check_same_shape(a, b)
    inter = int(np.logical_and(a.bits, b.bits).sum())
    uni = int(np.logical_or(a.bits, b.bits).sum())
    if uni == 0:
        return 1.0
    return inter / uni
