"""Metric kernels: patch confusion, counting precision/recall/F1, grid
absolute error, classic MAE/RMSE, negative-prompt statistics, and the
two-half mosaic closed forms.

Predicted counts are real-valued throughout; nothing is rounded. All
accumulation happens in double precision and dataset means use numpy's
pairwise summation, so results do not depend on evaluation order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .density import PatchCounts


@dataclass(frozen=True)
class ConfusionTriple:
    """Patch-level decomposition of a predicted count against the truth.

    tp + fp always equals the prediction and tp + fn the truth; at most one
    of fp, fn is nonzero.
    """

    tp: float
    fp: float
    fn: float


@dataclass(frozen=True)
class ImageScore:
    """Per-image counting scores and their confusion sums."""

    cntp: float
    cntr: float
    cntf1: float
    game: float
    tp: float
    fp: float
    fn: float


@dataclass(frozen=True)
class PccnBreakdown:
    """Per-image distances behind the positive-count-nearness decision."""

    d_pos: float
    d_neg: float
    hit: bool


@dataclass(frozen=True)
class NegativeImageDiag:
    """Negative-label diagnostics for one image."""

    image_id: str
    total_true: int
    negative_counts: Mapping[str, float]
    d_pos: float
    d_neg: float
    pccn_hit: bool

    def __post_init__(self):
        if self.pccn_hit != (self.d_pos < self.d_neg):
            raise ValueError("pccn_hit must equal the strict d_pos < d_neg comparison")
        object.__setattr__(self, "negative_counts", dict(self.negative_counts))


def patch_confusion(predicted: float, truth: float) -> ConfusionTriple:
    """Split one patch's counts into matched, over- and under-counted mass."""
    if predicted < 0 or truth < 0:
        raise ValueError("patch counts must be non-negative")
    tp = min(predicted, truth)
    # subtracting the min keeps tp+fp == predicted and tp+fn == truth exact
    return ConfusionTriple(tp=tp, fp=predicted - tp, fn=truth - tp)


def _count_vector(counts: PatchCounts | Sequence[float]) -> tuple[int | None, np.ndarray]:
    if isinstance(counts, PatchCounts):
        return counts.level, np.asarray(counts.counts, dtype=np.float64)
    return None, np.asarray(counts, dtype=np.float64)


def image_prf(pred: PatchCounts | Sequence[float], gt: PatchCounts | Sequence[float]) -> ImageScore:
    """Counting precision/recall/F1 and grid absolute error for one image.

    With no mass anywhere in prediction or truth the scores are vacuously
    perfect; an empty prediction against nonzero truth scores zero.
    """
    pred_level, pc = _count_vector(pred)
    gt_level, gc = _count_vector(gt)
    if pred_level is not None and gt_level is not None and pred_level != gt_level:
        raise ValueError(f"partition level mismatch: {pred_level} vs {gt_level}")
    if pc.shape != gc.shape:
        raise ValueError(f"patch count length mismatch: {pc.shape} vs {gc.shape}")
    if pc.size == 0:
        raise ValueError("empty patch-count vectors")
    tp = np.minimum(pc, gc)
    fp = pc - tp
    fn = gc - tp
    tp_sum = float(tp.sum())
    fp_sum = float(fp.sum())
    fn_sum = float(fn.sum())
    game = float((fp + fn).sum())
    if tp_sum == 0.0 and fp_sum == 0.0 and fn_sum == 0.0:
        return ImageScore(1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0)
    cntp = tp_sum / (tp_sum + fp_sum) if tp_sum + fp_sum > 0 else 0.0
    cntr = tp_sum / (tp_sum + fn_sum) if tp_sum + fn_sum > 0 else 0.0
    denom = 2 * tp_sum + fp_sum + fn_sum
    cntf1 = 2 * tp_sum / denom if denom > 0 else 0.0
    return ImageScore(cntp, cntr, cntf1, game, tp_sum, fp_sum, fn_sum)


def dataset_prf(scores: Sequence[ImageScore]) -> tuple[float, float, float]:
    """Unweighted means of per-image precision, recall, and F1."""
    if not scores:
        raise ValueError("cannot aggregate an empty score list")
    cntp = float(np.mean([s.cntp for s in scores]))
    cntr = float(np.mean([s.cntr for s in scores]))
    cntf1 = float(np.mean([s.cntf1 for s in scores]))
    return cntp, cntr, cntf1


def game_dataset(per_image_game: Sequence[float]) -> float:
    """Unweighted mean of per-image grid absolute errors."""
    if len(per_image_game) == 0:
        raise ValueError("cannot aggregate an empty list")
    return float(np.mean(np.asarray(per_image_game, dtype=np.float64)))


def classic_errors(pairs: Sequence[tuple[float, float]]) -> tuple[float, float]:
    """MAE and RMSE over (predicted total, ground-truth total) pairs."""
    if not pairs:
        raise ValueError("cannot compute errors over an empty list")
    arr = np.asarray(pairs, dtype=np.float64)
    diff = arr[:, 1] - arr[:, 0]
    mae = float(np.mean(np.abs(diff)))
    rmse = float(math.sqrt(np.mean(diff * diff)))
    return mae, rmse


def nmn(per_image: Sequence[tuple[Sequence[float], float]]) -> float:
    """Mean over images of the mean negative-prompt count, each divided by
    the image's total true instance count."""
    if not per_image:
        raise ValueError("cannot compute the statistic over an empty list")
    values = []
    for negative_counts, total_true in per_image:
        if len(negative_counts) == 0:
            raise ValueError("image without negative prompts must be filtered out first")
        if total_true <= 0:
            raise ValueError("total true count must be positive")
        arr = np.asarray(negative_counts, dtype=np.float64)
        values.append(float(np.mean(arr / total_true)))
    return float(np.mean(values))


def pccn(
    per_image: Sequence[tuple[Sequence[tuple[float, float]], Sequence[float]]],
) -> tuple[float, list[PccnBreakdown]]:
    """Percentage of images whose positive-prompt error stays strictly below
    the mean distance between negative-prompt counts and the true counts.

    Each image contributes ([(positive prediction, truth), ...],
    [negative predictions]). Ties count as failures.
    """
    if not per_image:
        raise ValueError("cannot compute the statistic over an empty list")
    breakdown = []
    hits = 0
    for positives, negative_counts in per_image:
        if not positives or len(negative_counts) == 0:
            raise ValueError("each image needs at least one positive and one negative entry")
        neg = np.asarray(negative_counts, dtype=np.float64)
        d_pos = float(np.mean([abs(pred - truth) for pred, truth in positives]))
        d_neg = float(np.mean([float(np.mean(np.abs(neg - truth))) for _, truth in positives]))
        hit = d_pos < d_neg
        hits += hit
        breakdown.append(PccnBreakdown(d_pos=d_pos, d_neg=d_neg, hit=hit))
    return 100.0 * hits / len(per_image), breakdown


def mosaic_closed_form(
    pred_top: float, truth_top: float, pred_bottom: float
) -> tuple[float, float]:
    """Counting precision/recall of a two-half mosaic from half totals.

    The top half carries all truth_top true instances and the bottom half
    none, so precision is min(pred_top, truth_top) / (pred_top + pred_bottom)
    and recall is min(pred_top, truth_top) / truth_top. These coincide with
    the patch-based scores on the two-patch split.
    """
    if pred_top < 0 or truth_top < 0 or pred_bottom < 0:
        raise ValueError("counts must be non-negative")
    if truth_top <= 0:
        raise ValueError("the top half must contain at least one true instance")
    matched = min(pred_top, truth_top)
    total_pred = pred_top + pred_bottom
    cntp = matched / total_pred if total_pred > 0 else 0.0
    cntr = matched / truth_top
    return cntp, cntr
