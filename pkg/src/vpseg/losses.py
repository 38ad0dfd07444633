"""Training objectives as pure functions with analytic gradients.

Cross-entropy over token logits, pixelwise binary cross-entropy, and soft
Dice, combined linearly by configurable weights. Gradients are returned
alongside values so they can be checked against finite differences without a
training framework.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .arrays import BinaryMask, DenseMap, bilinear_resize
from .errors import ShapeMismatchError

__all__ = [
    "IGNORE_INDEX",
    "LossWeights",
    "TokenSequence",
    "ce_loss",
    "bce_loss",
    "dice_loss",
    "combine_losses",
    "total_loss",
    "GradientCheckReport",
    "gradient_check_suite",
]

IGNORE_INDEX = -100


@dataclass(frozen=True)
class LossWeights:
    lambda_ce: float = 1.0
    lambda_bce: float = 2.0
    lambda_dice: float = 0.5

    def __post_init__(self):
        if min(self.lambda_ce, self.lambda_bce, self.lambda_dice) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass(frozen=True)
class TokenSequence:
    """T x V prediction logits plus T target token ids (IGNORE_INDEX skips a
    position)."""

    logits: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        logits = np.asarray(self.logits, dtype=np.float64)
        targets = np.asarray(self.targets, dtype=np.int64)
        if logits.ndim != 2 or logits.shape[0] < 1 or logits.shape[1] < 1:
            raise ValueError(f"logits must be T x V, got {logits.shape}")
        if targets.shape != (logits.shape[0],):
            raise ValueError("targets must have one entry per position")
        valid = targets != IGNORE_INDEX
        if np.any((targets[valid] < 0) | (targets[valid] >= logits.shape[1])):
            raise ValueError("target ids outside vocabulary")
        object.__setattr__(self, "logits", np.ascontiguousarray(logits))
        object.__setattr__(self, "targets", np.ascontiguousarray(targets))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def ce_loss(seq: TokenSequence) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over non-ignored positions; gradient w.r.t. logits."""
    valid = seq.targets != IGNORE_INDEX
    n = int(valid.sum())
    if n == 0:
        raise ValueError("all targets ignored")
    logits = seq.logits
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_z
    rows = np.flatnonzero(valid)
    value = -float(log_probs[rows, seq.targets[rows]].sum()) / n
    grad = np.zeros_like(logits)
    softmax = np.exp(log_probs[rows])
    softmax[np.arange(len(rows)), seq.targets[rows]] -= 1.0
    grad[rows] = softmax / n
    return value, grad


def bce_loss(pred_logits: DenseMap, target: BinaryMask) -> tuple[float, np.ndarray]:
    """Mean pixelwise binary cross-entropy on logits; gradient w.r.t. logits."""
    if pred_logits.shape != target.shape:
        raise ShapeMismatchError(
            f"logits {pred_logits.shape} vs target {target.shape}"
        )
    s = pred_logits.values
    t = target.bits.astype(np.float64)
    # stable form: max(s,0) - s*t + log(1 + exp(-|s|))
    value = float(np.mean(np.maximum(s, 0.0) - s * t + np.log1p(np.exp(-np.abs(s)))))
    grad = (_sigmoid(s) - t) / s.size
    return value, grad


def dice_loss(
    pred_logits: DenseMap, target: BinaryMask, eps: float = 1.0
) -> tuple[float, np.ndarray]:
    """Soft Dice loss on sigmoid probabilities; gradient w.r.t. logits."""
    if pred_logits.shape != target.shape:
        raise ShapeMismatchError(
            f"logits {pred_logits.shape} vs target {target.shape}"
        )
    p = _sigmoid(pred_logits.values)
    t = target.bits.astype(np.float64)
    num = 2.0 * float((p * t).sum()) + eps
    den = float(p.sum() + t.sum()) + eps
    value = 1.0 - num / den
    dl_dp = -(2.0 * t * den - num) / (den * den)
    grad = dl_dp * p * (1.0 - p)
    return value, grad


def combine_losses(ce: float, bce: float, dice: float, w: LossWeights) -> float:
    """Weighted linear combination of the three component losses."""
    return w.lambda_ce * ce + w.lambda_bce * bce + w.lambda_dice * dice


def total_loss(
    seq: TokenSequence,
    pred_logits: DenseMap,
    target: BinaryMask,
    w: LossWeights = LossWeights(),
    dice_eps: float = 1.0,
) -> float:
    """Joint objective: weighted CE on tokens plus weighted BCE and Dice on the
    mask. Logits at a different resolution are bilinearly resized to the
    target's before the mask losses are computed."""
    if pred_logits.shape != target.shape:
        pred_logits = bilinear_resize(pred_logits, target.height, target.width)
    ce, _ = ce_loss(seq)
    bce, _ = bce_loss(pred_logits, target)
    dice, _ = dice_loss(pred_logits, target, eps=dice_eps)
    return combine_losses(ce, bce, dice, w)


@dataclass(frozen=True)
class GradientCheckReport:
    trials: int
    max_rel_err_ce: float
    max_rel_err_bce: float
    max_rel_err_dice: float
    uniform_ce_error: float
    weights_fixture: float

    @property
    def passed(self) -> bool:
        return (
            max(self.max_rel_err_ce, self.max_rel_err_bce, self.max_rel_err_dice) <= 1e-4
            and self.uniform_ce_error <= 1e-9
            and abs(self.weights_fixture - 3.5) <= 1e-12
        )


def _numeric_gradient(fn, x: np.ndarray, step: float) -> np.ndarray:
    grad = np.zeros_like(x)
    flat = x.ravel()
    out = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = fn(x)
        flat[i] = orig - step
        lo = fn(x)
        flat[i] = orig
        out[i] = (hi - lo) / (2.0 * step)
    return grad


def gradient_check_suite(
    seed: int = 0, trials: int = 20, step: float = 1e-4
) -> GradientCheckReport:
    """Check every analytic gradient against central finite differences on
    random small fixtures, plus the analytic cross-entropy and weight-sum
    anchors."""
    rng = np.random.default_rng(seed)
    worst = {"ce": 0.0, "bce": 0.0, "dice": 0.0}

    def rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
        return float(
            (np.abs(analytic - numeric) / np.maximum(np.abs(numeric), 1e-8)).max()
        )

    for _ in range(trials):
        t = int(rng.integers(2, 9))
        v = int(rng.integers(2, 17))
        targets = rng.integers(0, v, size=t)
        logits = rng.normal(size=(t, v))
        _, grad = ce_loss(TokenSequence(logits=logits, targets=targets))
        numeric = _numeric_gradient(
            lambda x: ce_loss(TokenSequence(logits=x, targets=targets))[0], logits.copy(), step
        )
        worst["ce"] = max(worst["ce"], rel_err(grad, numeric))

        h = int(rng.integers(2, 17))
        w = int(rng.integers(2, 17))
        target = BinaryMask(rng.random((h, w)) < 0.5)
        s = rng.normal(size=(h, w))
        _, grad = bce_loss(DenseMap(s), target)
        numeric = _numeric_gradient(lambda x: bce_loss(DenseMap(x), target)[0], s.copy(), step)
        worst["bce"] = max(worst["bce"], rel_err(grad, numeric))

        _, grad = dice_loss(DenseMap(s), target)
        numeric = _numeric_gradient(lambda x: dice_loss(DenseMap(x), target)[0], s.copy(), step)
        worst["dice"] = max(worst["dice"], rel_err(grad, numeric))

    uniform, _ = ce_loss(TokenSequence(logits=np.zeros((3, 4)), targets=np.array([0, 1, 2])))
    return GradientCheckReport(
        trials=trials,
        max_rel_err_ce=worst["ce"],
        max_rel_err_bce=worst["bce"],
        max_rel_err_dice=worst["dice"],
        uniform_ce_error=abs(uniform - float(np.log(4.0))),
        weights_fixture=combine_losses(1.0, 1.0, 1.0, LossWeights()),
    )
