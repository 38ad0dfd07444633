"""Visual prompt generation.

Turns a set of patch embeddings plus one segmentation-token embedding into
backend-ready prompts: a dense similarity map (upsampled to the prompt
resolution) and sparse positive/negative points at the best- and worst-ranked
patch centers.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .arrays import DenseMap, bilinear_resize

__all__ = [
    "DegenerateEmbeddingWarning",
    "EmbeddingSet",
    "PointPrompt",
    "PromptBundle",
    "PromptConfig",
    "similarity_map",
    "make_mask_prompt",
    "sample_points",
    "build_prompts",
]

POSITIVE = "positive"
NEGATIVE = "negative"


class DegenerateEmbeddingWarning(UserWarning):
    """Raised as a warning when a zero-norm embedding forces a similarity of 0."""


@dataclass(frozen=True)
class EmbeddingSet:
    """N patch embeddings (rows) plus one segmentation-token embedding.

    N must be a perfect square; `grid_side` is its square root and gives the
    row-major patch grid layout.
    """

    patches: np.ndarray
    seg: np.ndarray

    def __post_init__(self):
        patches = np.asarray(self.patches, dtype=np.float64)
        seg = np.asarray(self.seg, dtype=np.float64)
        if patches.ndim != 2 or patches.shape[0] < 1 or patches.shape[1] < 1:
            raise ValueError(f"patch embeddings must be N x d, got {patches.shape}")
        if seg.shape != (patches.shape[1],):
            raise ValueError(
                f"seg embedding has dim {seg.shape}, patches have d={patches.shape[1]}"
            )
        side = int(round(patches.shape[0] ** 0.5))
        if side * side != patches.shape[0]:
            raise ValueError(f"N={patches.shape[0]} is not a perfect square")
        if not (np.all(np.isfinite(patches)) and np.all(np.isfinite(seg))):
            raise ValueError("embeddings contain non-finite values")
        patches = np.ascontiguousarray(patches)
        patches.setflags(write=False)
        seg = np.ascontiguousarray(seg)
        seg.setflags(write=False)
        object.__setattr__(self, "patches", patches)
        object.__setattr__(self, "seg", seg)

    @property
    def count(self) -> int:
        return self.patches.shape[0]

    @property
    def dim(self) -> int:
        return self.patches.shape[1]

    @property
    def grid_side(self) -> int:
        return int(round(self.count ** 0.5))


@dataclass(frozen=True)
class PointPrompt:
    """A pixel coordinate with polarity and the similarity score it came from."""

    y: int
    x: int
    polarity: str
    source_score: float = 0.0

    def __post_init__(self):
        if self.polarity not in (POSITIVE, NEGATIVE):
            raise ValueError(f"polarity must be positive/negative, got {self.polarity!r}")


@dataclass(frozen=True)
class PromptBundle:
    """Prompts handed to a segmentation backend. `mask_prompt` is None when the
    configuration disables the dense prompt (point-only mode)."""

    mask_prompt: DenseMap | None
    points: tuple[PointPrompt, ...]


@dataclass
class PromptConfig:
    """Which prompt types to build, and with what geometry."""

    image_h: int
    image_w: int
    use_mask: bool = True
    use_points: bool = True
    k_pos: int = 3
    k_neg: int = 3
    prompt_side: int = 256


def similarity_map(emb: EmbeddingSet) -> DenseMap:
    """Cosine similarity between the segmentation embedding and every patch,
    reshaped row-major to the patch grid.

    Zero-norm embeddings would make the cosine undefined; those entries are
    set to 0 and a DegenerateEmbeddingWarning is emitted.
    """
    seg_norm = float(np.linalg.norm(emb.seg))
    patch_norms = np.linalg.norm(emb.patches, axis=1)
    denom = patch_norms * seg_norm
    degenerate = denom == 0.0
    if degenerate.any():
        warnings.warn(
            "zero-norm embedding(s): affected similarities set to 0",
            DegenerateEmbeddingWarning,
            stacklevel=2,
        )
    sims = np.zeros(emb.count, dtype=np.float64)
    valid = ~degenerate
    if valid.any():
        sims[valid] = (emb.patches[valid] @ emb.seg) / denom[valid]
    sims = np.clip(sims, -1.0, 1.0)
    side = emb.grid_side
    return DenseMap(sims.reshape(side, side))


def make_mask_prompt(sim: DenseMap, prompt_side: int = 256) -> DenseMap:
    """Upsample a (square) similarity map to the backend's prompt resolution."""
    if sim.height != sim.width:
        raise ValueError(f"similarity map must be square, got {sim.shape}")
    return bilinear_resize(sim, prompt_side, prompt_side)


def sample_points(
    sim: DenseMap, k_pos: int, k_neg: int, image_h: int, image_w: int
) -> list[PointPrompt]:
    """Pick the k_pos highest- and k_neg lowest-similarity patches as points.

    Points are placed at patch centers mapped into image pixel coordinates
    (floor of (index + 0.5) * image/grid). Ties are broken by row-major patch
    index; on a tie spanning both ends the positive selection wins, so the two
    sets are always disjoint.
    """
    side = sim.height
    n = side * side
    if k_pos + k_neg > n:
        raise ValueError(f"k_pos + k_neg = {k_pos + k_neg} exceeds patch count {n}")
    if image_h < side or image_w < side:
        raise ValueError("image dimensions must be at least the patch grid size")
    flat = sim.values.ravel()
    idx = np.arange(n)
    desc = np.lexsort((idx, -flat))  # score desc, then index asc
    asc = np.lexsort((idx, flat))  # score asc, then index asc

    def to_point(patch: int, polarity: str) -> PointPrompt:
        r, c = divmod(patch, side)
        y = int((r + 0.5) * image_h / side)
        x = int((c + 0.5) * image_w / side)
        return PointPrompt(y=y, x=x, polarity=polarity, source_score=float(flat[patch]))

    points = [to_point(int(p), POSITIVE) for p in desc[:k_pos]]
    taken = set(int(p) for p in desc[:k_pos])
    negatives = [int(p) for p in asc if int(p) not in taken][:k_neg]
    points.extend(to_point(p, NEGATIVE) for p in negatives)
    return points


def build_prompts(emb: EmbeddingSet, cfg: PromptConfig) -> PromptBundle:
    """Compose the full prompt bundle according to the configuration."""
    if not (cfg.use_mask or cfg.use_points):
        raise ValueError("at least one prompt type must be enabled")
    sim = similarity_map(emb)
    mask_prompt = make_mask_prompt(sim, cfg.prompt_side) if cfg.use_mask else None
    points: tuple[PointPrompt, ...] = ()
    if cfg.use_points:
        points = tuple(sample_points(sim, cfg.k_pos, cfg.k_neg, cfg.image_h, cfg.image_w))
    return PromptBundle(mask_prompt=mask_prompt, points=points)
