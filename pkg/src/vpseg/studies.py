"""Desk-scale study harnesses built on the synthetic oracle.

These wire scenes, synthetic embeddings, mock backends, refinement, and the
metrics into the two runnable experiments: the prompt-type ablation
(mask-only / point-only / both) and the refinement-improvement study on
degraded masks. Everything is seeded and deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .arrays import BinaryMask, DenseMap
from .backends import (
    MODE_PROMPT_SEGMENTATION,
    BackendRequest,
    MockBackend,
    NoiseConfig,
)
from .metrics import boundary_iou, evaluate_semantic
from .prompts import EmbeddingSet, PromptConfig, build_prompts
from .refine import RefinementConfig, refine
from .synth import SceneSpec, SyntheticScene, scene_generate

__all__ = [
    "choose_targets",
    "target_union",
    "synth_embeddings",
    "degrade_mask",
    "AblationRow",
    "prompt_ablation_study",
    "RefinementComparison",
    "refinement_improvement_study",
]


def choose_targets(scene: SyntheticScene, rng: np.random.Generator) -> list[int]:
    """Pick a random non-empty subset of scene object labels."""
    labels = list(range(1, scene.object_count + 1))
    chosen = [k for k in labels if rng.random() < 0.5]
    if not chosen:
        chosen = [int(rng.choice(labels))]
    return chosen


def target_union(scene: SyntheticScene, targets: list[int]) -> BinaryMask:
    bits = np.zeros(scene.labels.shape, dtype=bool)
    for k in targets:
        bits |= scene.mask_for_label(k).bits
    return BinaryMask(bits)


def synth_embeddings(
    scene: SyntheticScene,
    targets: list[int],
    rng: np.random.Generator,
    grid_side: int = 16,
    dim: int = 32,
    noise: float = 0.55,
    weak_frac: float = 0.0,
    visible_frac: float = 0.45,
) -> EmbeddingSet:
    """Build an embedding set whose similarity landscape mirrors the scene.

    Patches whose center pixel lies in a target object align with the
    segmentation embedding; other objects point in a mildly anti-aligned
    direction and the background in a clearly anti-aligned one, so the
    bottom-ranked patches are background. `noise` is the expected norm of the
    per-patch Gaussian perturbation.

    With weak_frac > 0, that fraction of target objects is only partially
    visible: each of their patches aligns with probability `visible_frac` and
    otherwise looks like background. Partially visible objects are what the
    dense prompt tends to miss while their aligned patches still rank high
    enough for point prompts to recover them.
    """
    basis = np.linalg.qr(rng.normal(size=(dim, 3)))[0]
    seg = basis[:, 0]
    other = basis[:, 1] - 0.2 * seg
    background = 0.6 * basis[:, 2] - 0.25 * seg

    weak = {k: rng.random() < weak_frac for k in targets}
    # per-object activation strength concentrates the top ranks on one object
    strength = {k: rng.uniform(0.75, 1.0) for k in targets}
    target_set = set(targets)
    h, w = scene.labels.shape
    sigma = noise / np.sqrt(dim)
    patches = np.empty((grid_side * grid_side, dim), dtype=np.float64)
    for r in range(grid_side):
        for c in range(grid_side):
            y = int((r + 0.5) * h / grid_side)
            x = int((c + 0.5) * w / grid_side)
            label = int(scene.labels[y, x])
            if label in target_set:
                if weak[label] and rng.random() >= visible_frac:
                    base = background
                else:
                    base = strength[label] * seg
            elif label > 0:
                base = other
            else:
                base = background
            patches[r * grid_side + c] = base + sigma * rng.normal(size=dim)
    return EmbeddingSet(patches=patches, seg=seg)


def degrade_mask(
    mask: BinaryMask,
    rng: np.random.Generator,
    hole_count: int = 2,
    hole_radius: tuple[int, int] = (2, 4),
    jitter_px: int = 2,
) -> BinaryMask:
    """Degrade a mask the way thresholded logits tend to look: interior holes
    and per-pixel speckle in a +/- jitter_px band around the boundary."""
    bits = mask.bits.copy()
    if jitter_px > 0:
        disk = _disk(jitter_px)
        dilated = ndimage.binary_dilation(mask.bits, structure=disk)
        eroded = ndimage.binary_erosion(mask.bits, structure=disk, border_value=0)
        band = dilated & ~eroded
        speckle = rng.random(bits.shape) < 0.5
        bits[band] = speckle[band]
        bits |= eroded  # keep the interior solid
    interior = ndimage.binary_erosion(
        mask.bits, structure=_disk(max(hole_radius) + 1), border_value=0
    )
    ys, xs = np.nonzero(interior)
    for _ in range(hole_count):
        if len(ys) == 0:
            break
        i = int(rng.integers(len(ys)))
        radius = int(rng.integers(hole_radius[0], hole_radius[1] + 1))
        yy, xx = np.ogrid[: bits.shape[0], : bits.shape[1]]
        hole = (yy - ys[i]) ** 2 + (xx - xs[i]) ** 2 <= radius * radius
        bits[hole] = False
    return BinaryMask(bits)


def _disk(radius: int) -> np.ndarray:
    yy, xx = np.mgrid[-radius : radius + 1, -radius : radius + 1]
    return yy * yy + xx * xx <= radius * radius


def logits_from_mask(mask: BinaryMask, magnitude: float = 1.0) -> DenseMap:
    """Logit field that binarizes back to the mask: +magnitude in, -magnitude out."""
    return DenseMap(np.where(mask.bits, magnitude, -magnitude))


@dataclass(frozen=True)
class AblationRow:
    mode: str
    g_iou: float
    c_iou: float


def prompt_ablation_study(
    seeds: list[int],
    spec: SceneSpec | None = None,
    grid_side: int = 16,
    dim: int = 32,
    embedding_noise: float = 0.55,
    weak_frac: float = 0.5,
    logit_noise_sigma: float = 1.0,
    k_pos: int = 3,
    k_neg: int = 3,
) -> list[AblationRow]:
    """Run mask-only / point-only / both prompting over seeded scenes and
    score the binarized backend logits against the target union."""
    spec = spec or SceneSpec(kinds=("rectangle", "ellipse"))
    modes = {
        "mask-only": (True, False),
        "point-only": (False, True),
        "both": (True, True),
    }
    samples: dict[str, list[tuple[str, BinaryMask, BinaryMask]]] = {m: [] for m in modes}
    for seed in seeds:
        scene = scene_generate(seed, spec)
        rng = np.random.default_rng(seed + 10_000)
        targets = choose_targets(scene, rng)
        gt = target_union(scene, targets)
        emb = synth_embeddings(
            scene,
            targets,
            rng,
            grid_side=grid_side,
            dim=dim,
            noise=embedding_noise,
            weak_frac=weak_frac,
        )
        backend = MockBackend(
            scene, noise=NoiseConfig(logit_noise_sigma=logit_noise_sigma, seed=seed)
        )
        for mode, (use_mask, use_points) in modes.items():
            cfg = PromptConfig(
                image_h=scene.height,
                image_w=scene.width,
                use_mask=use_mask,
                use_points=use_points,
                k_pos=k_pos,
                k_neg=k_neg,
            )
            bundle = build_prompts(emb, cfg)
            req = BackendRequest(
                image_id=f"scene-{seed}", mode=MODE_PROMPT_SEGMENTATION, prompts=bundle
            )
            logits = backend.query(req).logits
            pred = BinaryMask(logits.values >= 0.0)
            samples[mode].append((f"scene-{seed}", pred, gt))
    rows = []
    for mode in modes:
        report = evaluate_semantic(samples[mode])
        rows.append(AblationRow(mode=mode, g_iou=report.g_iou, c_iou=report.c_iou))
    return rows


@dataclass(frozen=True)
class RefinementComparison:
    seed: int
    baseline_b_iou: float
    refined_b_iou: float
    baseline_g_iou: float
    refined_g_iou: float


def refinement_improvement_study(
    seeds: list[int],
    spec: SceneSpec | None = None,
    refinement: RefinementConfig | None = None,
    boundary_tolerance: int = 3,
) -> list[RefinementComparison]:
    """Compare the thresholded degraded mask against its refinement, per scene.

    The degraded mask plays the role of binarized model logits; refinement
    re-queries the (noiseless) mock backend, so it can recover the exact
    object shapes the degradation destroyed.
    """
    spec = spec or SceneSpec(
        height=160,
        width=160,
        min_objects=3,
        max_objects=4,
        kinds=("rectangle", "ellipse"),
        min_size=32,
        max_size=44,
        max_attempts=500,
    )
    refinement = refinement or RefinementConfig(grid_interval=8)
    out = []
    for seed in seeds:
        scene = scene_generate(seed, spec)
        rng = np.random.default_rng(seed + 20_000)
        targets = choose_targets(scene, rng)
        gt = target_union(scene, targets)
        degraded = degrade_mask(gt, rng)
        backend = MockBackend(scene)
        result = refine(
            logits_from_mask(degraded),
            backend,
            refinement,
            image_id=f"scene-{seed}",
        )
        out.append(
            RefinementComparison(
                seed=seed,
                baseline_b_iou=boundary_iou(degraded, gt, boundary_tolerance),
                refined_b_iou=boundary_iou(result.semantic_mask, gt, boundary_tolerance),
                baseline_g_iou=_plain_iou(degraded, gt),
                refined_g_iou=_plain_iou(result.semantic_mask, gt),
            )
        )
    return out


def _plain_iou(a: BinaryMask, b: BinaryMask) -> float:
    inter = int(np.logical_and(a.bits, b.bits).sum())
    uni = int(np.logical_or(a.bits, b.bits).sum())
    return 1.0 if uni == 0 else inter / uni
