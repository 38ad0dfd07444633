"""Random-data helpers shared by the tests."""

import numpy as np

from vpseg.arrays import BinaryMask, DenseMap


def random_blob_mask(rng: np.random.Generator, h: int, w: int, blobs: int = 3) -> BinaryMask:
    """Union of random rectangles and disks; occasionally empty."""
    bits = np.zeros((h, w), dtype=bool)
    for _ in range(int(rng.integers(0, blobs + 1))):
        if rng.random() < 0.5:
            y0 = int(rng.integers(0, h))
            x0 = int(rng.integers(0, w))
            y1 = min(h, y0 + int(rng.integers(1, max(2, h // 2))))
            x1 = min(w, x0 + int(rng.integers(1, max(2, w // 2))))
            bits[y0:y1, x0:x1] = True
        else:
            cy = int(rng.integers(0, h))
            cx = int(rng.integers(0, w))
            r = int(rng.integers(1, max(2, min(h, w) // 3)))
            yy, xx = np.ogrid[:h, :w]
            bits |= (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    return BinaryMask(bits)


def random_dense_map(rng: np.random.Generator, h: int, w: int, scale: float = 1.0) -> DenseMap:
    return DenseMap(rng.normal(0.0, scale, size=(h, w)))
