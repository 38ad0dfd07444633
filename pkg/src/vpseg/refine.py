"""Training-free mask refinement.

Converts segmentation logits into grid point prompts, collects candidate
masks from a backend, keeps the candidates that sufficiently overlap the
thresholded reference mask, and assembles the survivors into a semantic mask
plus disjoint instances.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .arrays import BinaryMask, DenseMap
from .backends import MODE_POINT_CANDIDATES, BackendRequest
from .errors import BackendError
from .prompts import POSITIVE, PointPrompt

__all__ = [
    "RefinementConfig",
    "InstanceSet",
    "RefinementResult",
    "sample_grid_points",
    "reference_mask",
    "overlap_score",
    "refine",
]


@dataclass(frozen=True)
class RefinementConfig:
    grid_interval: int = 16
    tau: float = 0.0
    delta: float = 0.7
    merge_policy: str = "union-on-any-intersection"
    fallback_policy: str = "return-reference-on-empty"

    def __post_init__(self):
        if self.grid_interval < 1:
            raise ValueError("grid_interval must be >= 1")
        if not (0.0 < self.delta <= 1.0):
            raise ValueError("delta must be in (0, 1]")
        if not np.isfinite(self.tau):
            raise ValueError("tau must be finite")
        if self.merge_policy != "union-on-any-intersection":
            raise ValueError(f"unsupported merge policy {self.merge_policy!r}")
        if self.fallback_policy != "return-reference-on-empty":
            raise ValueError(f"unsupported fallback policy {self.fallback_policy!r}")


@dataclass(frozen=True)
class InstanceSet:
    """Disjoint instance masks with confidences in (0, 1]."""

    members: tuple[tuple[BinaryMask, float], ...]

    def __len__(self) -> int:
        return len(self.members)

    def __iter__(self):
        return iter(self.members)


@dataclass(frozen=True)
class RefinementResult:
    semantic_mask: BinaryMask
    instances: InstanceSet
    selected_count: int
    candidate_count: int
    fallback_used: bool
    per_candidate_scores: tuple[float, ...]


def sample_grid_points(s: DenseMap, interval: int, tau: float) -> list[PointPrompt]:
    """Fixed-interval grid points at which the logits strictly exceed tau.

    Points sit at (r * interval + interval // 2, c * interval + interval // 2)
    and are emitted in row-major order, all positive polarity.
    """
    if interval < 1:
        raise ValueError("interval must be >= 1")
    off = interval // 2
    points = []
    for y in range(off, s.height, interval):
        for x in range(off, s.width, interval):
            value = float(s.values[y, x])
            if value > tau:
                points.append(PointPrompt(y=y, x=x, polarity=POSITIVE, source_score=value))
    return points


def reference_mask(s: DenseMap, tau: float) -> BinaryMask:
    """Binarize logits with an inclusive threshold: bit set iff value >= tau."""
    return BinaryMask(s.values >= tau)


def overlap_score(candidate: BinaryMask, reference: BinaryMask) -> float:
    """Fraction of the candidate covered by the reference: |M ∩ B| / |M|.

    Undefined for empty candidates; callers must drop those first.
    """
    area = candidate.area()
    if area == 0:
        raise ValueError("overlap score is undefined for an empty candidate")
    inter = int(np.logical_and(candidate.bits, reference.bits).sum())
    return inter / area


def _merge_groups(masks: list[BinaryMask]) -> list[list[int]]:
    """Group mask indices by transitive pixel overlap (union-find)."""
    parent = list(range(len(masks)))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(len(masks)):
        for j in range(i + 1, len(masks)):
            if np.logical_and(masks[i].bits, masks[j].bits).any():
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[rj] = ri
    groups: dict[int, list[int]] = {}
    for i in range(len(masks)):
        groups.setdefault(find(i), []).append(i)
    # deterministic: groups ordered by their smallest member index
    return [groups[root] for root in sorted(groups, key=lambda r: min(groups[r]))]


def refine(
    s: DenseMap,
    backend,
    cfg: RefinementConfig = RefinementConfig(),
    image_id: str = "image",
) -> RefinementResult:
    """Run the full refinement pipeline over logits `s` using `backend` for
    point-to-candidate queries.

    Candidates scoring strictly above cfg.delta against the reference mask are
    kept; overlapping survivors merge into one instance (confidence = max
    member score) and the semantic mask is the union of all instances. When
    nothing is selected the reference mask itself is returned with
    fallback_used set.
    """
    points = sample_grid_points(s, cfg.grid_interval, cfg.tau)
    ref = reference_mask(s, cfg.tau)

    candidates: list[BinaryMask] = []
    for point in points:
        req = BackendRequest(image_id=image_id, mode=MODE_POINT_CANDIDATES, point=point)
        try:
            resp = backend.query(req)
        except BackendError as exc:
            raise BackendError(f"backend failed at point ({point.y}, {point.x}): {exc}") from exc
        for cand in resp.candidates:
            if cand.shape != s.shape:
                raise BackendError(
                    f"candidate shape {cand.shape} does not match logits shape {s.shape}"
                )
            if cand.area() == 0:
                continue
            if any(np.array_equal(cand.bits, kept.bits) for kept in candidates):
                continue
            candidates.append(cand)

    scores = [overlap_score(cand, ref) for cand in candidates]
    selected = [i for i, score in enumerate(scores) if score > cfg.delta]

    if not selected:
        semantic = ref
        if ref.area() == 0:
            instances = InstanceSet(members=())
        else:
            if candidates:
                best = max(range(len(candidates)), key=lambda i: scores[i])
                covered = int(np.logical_and(candidates[best].bits, ref.bits).sum())
                confidence = covered / ref.area()
                if confidence == 0.0:
                    confidence = 1.0  # degenerate: no candidate touches the reference
            else:
                confidence = 1.0
            instances = InstanceSet(members=((ref, confidence),))
        return RefinementResult(
            semantic_mask=semantic,
            instances=instances,
            selected_count=0,
            candidate_count=len(candidates),
            fallback_used=True,
            per_candidate_scores=tuple(scores),
        )

    kept = [candidates[i] for i in selected]
    kept_scores = [scores[i] for i in selected]
    members = []
    for group in _merge_groups(kept):
        merged = np.zeros(s.shape, dtype=bool)
        for i in group:
            merged |= kept[i].bits
        members.append((BinaryMask(merged), max(kept_scores[i] for i in group)))

    semantic_bits = np.zeros(s.shape, dtype=bool)
    for mask, _ in members:
        semantic_bits |= mask.bits
    return RefinementResult(
        semantic_mask=BinaryMask(semantic_bits),
        instances=InstanceSet(members=tuple(members)),
        selected_count=len(selected),
        candidate_count=len(candidates),
        fallback_used=False,
        per_candidate_scores=tuple(scores),
    )
