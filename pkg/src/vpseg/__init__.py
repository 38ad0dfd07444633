"""Visual-prompt segmentation engine.

Deterministic building blocks for prompt-driven segmentation downstream of
the neural networks: visual prompt generation from embeddings, training-free
mask refinement, loss evaluation, semantic/instance metrics, and replayable
backends, all exposed through a CLI and an HTTP service.
"""

__version__ = "0.1.0"

FORMAT_VERSION = 1

from .arrays import (  # noqa: F401
    BinaryMask,
    DenseMap,
    PadSpec,
    bilinear_resize,
    connected_components,
    intersection_area,
    iou,
    pad_to_square,
    union,
    unpad,
)
from .prompts import (  # noqa: F401
    EmbeddingSet,
    PointPrompt,
    PromptBundle,
    PromptConfig,
    build_prompts,
    make_mask_prompt,
    sample_points,
    similarity_map,
)
from .refine import (  # noqa: F401
    InstanceSet,
    RefinementConfig,
    RefinementResult,
    overlap_score,
    reference_mask,
    refine,
    sample_grid_points,
)
