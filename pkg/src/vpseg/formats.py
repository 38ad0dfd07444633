"""Bit-exact on-disk formats: tensors, RLE masks, mask images, points, manifests.

Tensor container (`.nvt`):
    magic "NVT1" | u8 dtype code (f32=1, u8=2) | u8 rank | rank x u32 LE dims
    | row-major payload. Little-endian throughout.

RLE masks are COCO-compatible uncompressed run lengths: column-major scan,
alternating run counts starting with a zero-run.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .arrays import BinaryMask
from .errors import FormatError, ManifestError

__all__ = [
    "MAGIC",
    "tensor_to_bytes",
    "tensor_from_bytes",
    "write_tensor",
    "read_tensor",
    "RleMask",
    "rle_encode",
    "rle_decode",
    "write_mask_png",
    "read_mask_png",
    "write_mask",
    "read_mask",
    "write_points",
    "read_points",
    "ManifestSample",
    "load_manifest",
]

MAGIC = b"NVT1"
_DTYPE_CODES = {np.dtype(np.float32): 1, np.dtype(np.uint8): 2}
_CODE_DTYPES = {1: np.dtype("<f4"), 2: np.dtype(np.uint8)}


def tensor_to_bytes(arr: np.ndarray) -> bytes:
    """Serialize a float32 or uint8 array to the tensor container byte layout."""
    arr = np.ascontiguousarray(arr)
    if arr.dtype not in _DTYPE_CODES:
        raise FormatError(f"unsupported tensor dtype {arr.dtype} (use float32 or uint8)")
    code = _DTYPE_CODES[arr.dtype]
    header = MAGIC + struct.pack("<BB", code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    if arr.dtype == np.float32:
        payload = arr.astype("<f4", copy=False).tobytes()
    else:
        payload = arr.tobytes()
    return header + payload


def tensor_from_bytes(data: bytes) -> np.ndarray:
    """Parse tensor container bytes back into a numpy array."""
    if len(data) < 6:
        raise FormatError("truncated header", offset=len(data))
    if data[:4] != MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}, expected {MAGIC!r}", offset=0)
    code, rank = struct.unpack_from("<BB", data, 4)
    if code not in _CODE_DTYPES:
        raise FormatError(f"unknown dtype code {code}", offset=4)
    dims_end = 6 + 4 * rank
    if len(data) < dims_end:
        raise FormatError("truncated dims", offset=len(data))
    dims = struct.unpack_from(f"<{rank}I", data, 6)
    dtype = _CODE_DTYPES[code]
    expected = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize if rank else dtype.itemsize
    if len(data) != dims_end + expected:
        raise FormatError(
            f"payload length {len(data) - dims_end}, expected {expected}", offset=dims_end
        )
    arr = np.frombuffer(data, dtype=dtype, count=int(np.prod(dims, dtype=np.int64)), offset=dims_end)
    arr = arr.reshape(dims)
    if dtype == np.dtype("<f4"):
        arr = arr.astype(np.float32)
    return arr.copy()


def write_tensor(path: str | Path, arr: np.ndarray) -> None:
    Path(path).write_bytes(tensor_to_bytes(arr))


def read_tensor(path: str | Path) -> np.ndarray:
    return tensor_from_bytes(Path(path).read_bytes())


@dataclass(frozen=True)
class RleMask:
    """Uncompressed run-length encoding of a binary mask.

    Counts scan the mask column-major and alternate false/true runs, starting
    with the (possibly zero-length) false run.
    """

    height: int
    width: int
    counts: tuple[int, ...]

    def __post_init__(self):
        total = sum(self.counts)
        if total != self.height * self.width:
            raise FormatError(
                f"RLE counts sum to {total}, expected {self.height * self.width}"
            )
        if any(c < 0 for c in self.counts):
            raise FormatError("RLE counts must be non-negative")


def rle_encode(mask: BinaryMask) -> RleMask:
    flat = mask.bits.T.ravel()  # column-major scan
    counts: list[int] = []
    if flat.size:
        change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
        bounds = np.concatenate(([0], change, [flat.size]))
        runs = np.diff(bounds)
        if flat[0]:  # runs must start with a false run
            counts.append(0)
        counts.extend(int(r) for r in runs)
    return RleMask(height=mask.height, width=mask.width, counts=tuple(counts))


def rle_decode(rle: RleMask) -> BinaryMask:
    flat = np.zeros(rle.height * rle.width, dtype=bool)
    pos = 0
    value = False
    for count in rle.counts:
        if value:
            flat[pos : pos + count] = True
        pos += count
        value = not value
    return BinaryMask(flat.reshape((rle.width, rle.height)).T)


def write_mask_png(path: str | Path, mask: BinaryMask) -> None:
    """Write a mask as a single-channel PNG with values 0/255."""
    img = Image.fromarray(mask.bits.astype(np.uint8) * 255, mode="L")
    img.save(Path(path), format="PNG")


def read_mask_png(path: str | Path) -> BinaryMask:
    with Image.open(Path(path)) as img:
        arr = np.asarray(img.convert("L"))
    return BinaryMask(arr >= 128)


def write_mask(path: str | Path, mask: BinaryMask) -> None:
    """Write a mask as PNG or, for .json paths, as an RLE record."""
    path = Path(path)
    if path.suffix == ".json":
        rle = rle_encode(mask)
        path.write_text(
            json.dumps({"height": rle.height, "width": rle.width, "counts": list(rle.counts)})
        )
    else:
        write_mask_png(path, mask)


def read_mask(path: str | Path) -> BinaryMask:
    path = Path(path)
    if path.suffix == ".json":
        obj = json.loads(path.read_text())
        return rle_decode(RleMask(obj["height"], obj["width"], tuple(obj["counts"])))
    return read_mask_png(path)


def write_points(path: str | Path, points, provenance: dict | None = None) -> None:
    """Write point prompts as one `y x polarity score` record per line."""
    lines = []
    for key, value in (provenance or {}).items():
        lines.append(f"# {key}={value}")
    for p in points:
        lines.append(f"{p.y}\t{p.x}\t{p.polarity}\t{p.source_score!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_points(path: str | Path):
    from .prompts import PointPrompt

    points = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise FormatError(f"{path}:{lineno}: expected 4 tab-separated fields")
        y, x, polarity, score = parts
        if polarity not in ("positive", "negative"):
            raise FormatError(f"{path}:{lineno}: bad polarity {polarity!r}")
        points.append(
            PointPrompt(y=int(y), x=int(x), polarity=polarity, source_score=float(score))
        )
    return points


@dataclass(frozen=True)
class ManifestSample:
    image_id: str
    image: str
    query: str
    masks: tuple[BinaryMask, ...]
    height: int
    width: int
    split: str


def load_manifest(path: str | Path, require_masks: bool = True) -> list[ManifestSample]:
    """Load a JSON-lines sample manifest, validating eagerly.

    Every violation across the whole file is collected and reported at once.
    Mask references are either paths (PNG / RLE .json, relative to the
    manifest) or inline RLE objects {"height", "width", "counts"}.
    """
    path = Path(path)
    base = path.parent
    samples: list[ManifestSample] = []
    violations: list[str] = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        where = f"{path.name}:{lineno}"
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            violations.append(f"{where}: invalid JSON ({exc})")
            continue
        missing = [k for k in ("image_id", "image", "query", "masks", "height", "width") if k not in obj]
        if missing:
            violations.append(f"{where}: missing fields {missing}")
            continue
        height, width = int(obj["height"]), int(obj["width"])
        split = str(obj.get("split", "val"))
        masks: list[BinaryMask] = []
        ok = True
        for i, ref in enumerate(obj["masks"]):
            try:
                if isinstance(ref, str):
                    ref_path = base / ref
                    if not ref_path.exists():
                        violations.append(f"{where}: mask[{i}] file not found: {ref}")
                        ok = False
                        continue
                    mask = read_mask(ref_path)
                else:
                    mask = rle_decode(
                        RleMask(int(ref["height"]), int(ref["width"]), tuple(ref["counts"]))
                    )
            except (FormatError, KeyError, OSError) as exc:
                violations.append(f"{where}: mask[{i}] unreadable: {exc}")
                ok = False
                continue
            if mask.shape != (height, width):
                violations.append(
                    f"{where}: mask[{i}] is {mask.shape}, manifest says {(height, width)}"
                )
                ok = False
                continue
            masks.append(mask)
        if require_masks and not obj["masks"]:
            violations.append(f"{where}: evaluation sample has no ground-truth masks")
            ok = False
        image_path = Path(obj["image"]) if os.path.isabs(obj["image"]) else base / str(obj["image"])
        if not image_path.exists():
            violations.append(f"{where}: image file not found: {obj['image']}")
            ok = False
        if ok:
            samples.append(
                ManifestSample(
                    image_id=str(obj["image_id"]),
                    image=str(obj["image"]),
                    query=str(obj["query"]),
                    masks=tuple(masks),
                    height=height,
                    width=width,
                    split=split,
                )
            )
    if violations:
        raise ManifestError(violations)
    return samples
