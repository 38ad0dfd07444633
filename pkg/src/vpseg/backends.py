"""Segmentation backends: prompts in, logits out; points in, candidate masks out.

Two implementations ship with the engine. ReplayBackend serves previously
recorded model outputs bit-exactly from a directory store, keyed by a digest
of the request. MockBackend answers from a synthetic scene and is the
pixel-perfect oracle used by the refinement and metric test suites.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .arrays import BinaryMask, DenseMap, bilinear_resize
from .errors import BackendError, FormatError, ReplayNotFoundError
from .formats import read_mask_png, read_tensor, tensor_to_bytes, write_mask_png, write_tensor
from .prompts import PointPrompt, PromptBundle
from .synth import SyntheticScene

__all__ = [
    "MODE_PROMPT_SEGMENTATION",
    "MODE_POINT_CANDIDATES",
    "BackendRequest",
    "BackendResponse",
    "request_digest",
    "ReplayBackend",
    "ReplayStoreWriter",
    "NoiseConfig",
    "MockBackend",
]

MODE_PROMPT_SEGMENTATION = "prompt-segmentation"
MODE_POINT_CANDIDATES = "point-candidates"

DEFAULT_LOGIT_MAGNITUDE = 4.0


@dataclass(frozen=True)
class BackendRequest:
    """One query. `prompts` is set in prompt-segmentation mode, `point` in
    point-candidates mode."""

    image_id: str
    mode: str
    prompts: PromptBundle | None = None
    point: PointPrompt | None = None

    def __post_init__(self):
        if self.mode == MODE_PROMPT_SEGMENTATION:
            if self.prompts is None or self.point is not None:
                raise ValueError("prompt-segmentation requests carry prompts only")
        elif self.mode == MODE_POINT_CANDIDATES:
            if self.point is None or self.prompts is not None:
                raise ValueError("point-candidates requests carry a single point only")
        else:
            raise ValueError(f"unknown mode {self.mode!r}")


@dataclass(frozen=True)
class BackendResponse:
    logits: DenseMap | None = None
    candidates: tuple[BinaryMask, ...] = ()


def _point_digest_bytes(image_id: str, point: PointPrompt) -> bytes:
    return f"point:{image_id}:{point.y}:{point.x}:{point.polarity}".encode()


def _prompt_digest_bytes(image_id: str, prompts: PromptBundle) -> bytes:
    parts = [b"prompt:", image_id.encode(), b":"]
    if prompts.mask_prompt is not None:
        parts.append(tensor_to_bytes(prompts.mask_prompt.values.astype(np.float32)))
    parts.append(b";points:")
    for p in prompts.points:
        parts.append(f"{p.y},{p.x},{p.polarity};".encode())
    return b"".join(parts)


def request_digest(req: BackendRequest) -> str:
    """Hex digest identifying a request; covers image_id and all prompt bytes."""
    if req.mode == MODE_POINT_CANDIDATES:
        raw = _point_digest_bytes(req.image_id, req.point)
    else:
        raw = _prompt_digest_bytes(req.image_id, req.prompts)
    return hashlib.sha256(raw).hexdigest()[:16]


class ReplayBackend:
    """Serves stored responses verbatim from an on-disk replay store.

    Store layout, one directory per image_id:
        <root>/<image_id>/index.txt      lines: <digest>\\t<kind>\\t<relpath>
        <root>/<image_id>/logits.nvt     float32 logits for a prompt digest
        <root>/<image_id>/candidates/<digest>/mask_<j>.png
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        if not self.root.is_dir():
            raise BackendError(f"replay store not found: {self.root}")

    def _index(self, image_id: str) -> dict[str, tuple[str, str]]:
        index_path = self.root / image_id / "index.txt"
        if not index_path.exists():
            raise ReplayNotFoundError(image_id, "<no index>")
        entries: dict[str, tuple[str, str]] = {}
        for lineno, line in enumerate(index_path.read_text().splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise FormatError(f"{index_path}:{lineno}: expected 3 fields")
            digest, kind, relpath = parts
            entries[digest] = (kind, relpath)
        return entries

    def query(self, req: BackendRequest) -> BackendResponse:
        digest = request_digest(req)
        entries = self._index(req.image_id)
        if digest not in entries:
            raise ReplayNotFoundError(req.image_id, digest)
        kind, relpath = entries[digest]
        base = self.root / req.image_id
        if req.mode == MODE_PROMPT_SEGMENTATION:
            if kind != "logits":
                raise ReplayNotFoundError(req.image_id, digest)
            arr = read_tensor(base / relpath)
            return BackendResponse(logits=DenseMap(arr.astype(np.float64)))
        if kind != "candidates":
            raise ReplayNotFoundError(req.image_id, digest)
        cand_dir = base / relpath
        masks = []
        for mask_path in sorted(cand_dir.glob("mask_*.png")):
            masks.append(read_mask_png(mask_path))
        return BackendResponse(candidates=tuple(masks))


class ReplayStoreWriter:
    """Appends records to a replay store in the layout ReplayBackend reads."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _append_index(self, image_id: str, digest: str, kind: str, relpath: str) -> None:
        image_dir = self.root / image_id
        image_dir.mkdir(parents=True, exist_ok=True)
        with open(image_dir / "index.txt", "a") as fh:
            fh.write(f"{digest}\t{kind}\t{relpath}\n")

    def put_logits(self, req: BackendRequest, logits: DenseMap) -> str:
        digest = request_digest(req)
        image_dir = self.root / req.image_id
        image_dir.mkdir(parents=True, exist_ok=True)
        name = "logits.nvt" if not (image_dir / "logits.nvt").exists() else f"logits_{digest}.nvt"
        write_tensor(image_dir / name, logits.values.astype(np.float32))
        self._append_index(req.image_id, digest, "logits", name)
        return digest

    def put_candidates(self, req: BackendRequest, masks: list[BinaryMask]) -> str:
        digest = request_digest(req)
        rel = f"candidates/{digest}"
        cand_dir = self.root / req.image_id / rel
        cand_dir.mkdir(parents=True, exist_ok=True)
        for j, mask in enumerate(masks):
            write_mask_png(cand_dir / f"mask_{j}.png", mask)
        self._append_index(req.image_id, digest, "candidates", rel)
        return digest


@dataclass(frozen=True)
class NoiseConfig:
    """Optional perturbations applied by the mock backend.

    erosion/dilation radii morph candidate masks; logit_noise_sigma adds
    Gaussian noise to prompt-segmentation logits. Noise is derived from
    (seed, request digest) so concurrent queries stay deterministic.
    """

    erosion_radius: int = 0
    dilation_radius: int = 0
    logit_noise_sigma: float = 0.0
    seed: int = 0

    @property
    def enabled(self) -> bool:
        return bool(self.erosion_radius or self.dilation_radius or self.logit_noise_sigma)


def _disk(radius: int) -> np.ndarray:
    yy, xx = np.mgrid[-radius : radius + 1, -radius : radius + 1]
    return yy * yy + xx * xx <= radius * radius


class MockBackend:
    """Synthetic oracle standing in for a real promptable segmentation model.

    point-candidates: returns the scene object containing the point (exactly
    when noise is off, morphologically perturbed otherwise); background points
    yield an empty candidate.

    prompt-segmentation: logits are +L inside scene objects selected by the
    prompts and -L elsewhere. An object is selected when more than half its
    area falls under the thresholded (> 0) mask prompt; with point prompts, a
    contained positive point additionally selects it unless a negative point
    also landed inside. Point prompts never remove a mask-rule selection.
    """

    def __init__(
        self,
        scene: SyntheticScene,
        noise: NoiseConfig = NoiseConfig(),
        logit_magnitude: float = DEFAULT_LOGIT_MAGNITUDE,
    ):
        self.scene = scene
        self.noise = noise
        self.logit_magnitude = float(logit_magnitude)

    def _rng(self, digest: str) -> np.random.Generator:
        mix = hashlib.sha256(f"{self.noise.seed}:{digest}".encode()).digest()
        return np.random.default_rng(int.from_bytes(mix[:8], "little"))

    def query(self, req: BackendRequest) -> BackendResponse:
        if req.mode == MODE_POINT_CANDIDATES:
            return self._point_candidates(req)
        return self._prompt_segmentation(req)

    def _point_candidates(self, req: BackendRequest) -> BackendResponse:
        p = req.point
        h, w = self.scene.labels.shape
        if not (0 <= p.y < h and 0 <= p.x < w):
            raise BackendError(f"point ({p.y}, {p.x}) outside {h}x{w} image")
        label = int(self.scene.labels[p.y, p.x])
        if label == 0:
            return BackendResponse(candidates=(BinaryMask.zeros(h, w),))
        bits = self.scene.mask_for_label(label).bits
        if self.noise.erosion_radius > 0:
            bits = ndimage.binary_erosion(bits, structure=_disk(self.noise.erosion_radius))
        if self.noise.dilation_radius > 0:
            bits = ndimage.binary_dilation(bits, structure=_disk(self.noise.dilation_radius))
        return BackendResponse(candidates=(BinaryMask(bits),))

    def _selected_objects(self, prompts: PromptBundle) -> list[bool]:
        h, w = self.scene.labels.shape
        selected = [False] * self.scene.object_count
        prompt_fg = None
        if prompts.mask_prompt is not None:
            resized = bilinear_resize(prompts.mask_prompt, h, w)
            prompt_fg = resized.values > 0.0
        pos_hits = [0] * self.scene.object_count
        neg_hits = [0] * self.scene.object_count
        for p in prompts.points:
            if not (0 <= p.y < h and 0 <= p.x < w):
                raise BackendError(f"point ({p.y}, {p.x}) outside {h}x{w} image")
            label = int(self.scene.labels[p.y, p.x])
            if label == 0:
                continue
            if p.polarity == "positive":
                pos_hits[label - 1] += 1
            else:
                neg_hits[label - 1] += 1
        for i, shape in enumerate(self.scene.shapes):
            if prompt_fg is not None:
                overlap = np.logical_and(shape.bits, prompt_fg).sum() / shape.area()
                if overlap > 0.5:
                    selected[i] = True
                    continue
            # point rule only ever adds objects; negatives veto the addition
            if pos_hits[i] > 0 and neg_hits[i] == 0:
                selected[i] = True
        return selected

    def _prompt_segmentation(self, req: BackendRequest) -> BackendResponse:
        h, w = self.scene.labels.shape
        selected = self._selected_objects(req.prompts)
        logits = np.full((h, w), -self.logit_magnitude, dtype=np.float64)
        for i, shape in enumerate(self.scene.shapes):
            if selected[i]:
                logits[shape.bits] = self.logit_magnitude
        if self.noise.logit_noise_sigma > 0.0:
            rng = self._rng(request_digest(req))
            logits = logits + rng.normal(0.0, self.noise.logit_noise_sigma, size=logits.shape)
        return BackendResponse(logits=DenseMap(logits))
