"""Semantic-similarity analysis of negative-prompt errors.

For every (image, absent category) pair the analysis records how similar the
absent category is to the closest present one (cosine similarity of their
text embeddings) and the predicted count normalized by that positive's true
count. Downstream statistics: Pearson correlation and equal-width similarity
bins with quartile summaries.

Embedding file schema (JSON):
    {"dimension": D, "template": "a photo of",
     "vectors": {"category": [f, ...], ...}}
The template records how the vectors were produced; this module never
computes embeddings itself.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .corpus import AnnotationStore, PredictionStore, derive_prompt_sets
from .density import payload_count
from .protocols import MissingPredictionsError

NUM_BINS = 5


@dataclass(frozen=True)
class EmbeddingTable:
    """Per-category text-embedding vectors of a single shared dimension."""

    dimension: int
    vectors: Mapping[str, np.ndarray]
    template: str | None = None

    def __post_init__(self):
        if self.dimension < 1:
            raise ValueError("embedding dimension must be positive")
        frozen = {}
        for category, vector in self.vectors.items():
            arr = np.asarray(vector, dtype=np.float64)
            if arr.shape != (self.dimension,):
                raise ValueError(
                    f"category {category!r}: expected dimension {self.dimension}, "
                    f"got shape {arr.shape}"
                )
            if not np.isfinite(arr).all():
                raise ValueError(f"category {category!r}: non-finite embedding values")
            if not arr.any():
                raise ValueError(f"category {category!r}: zero embedding vector")
            arr.flags.writeable = False
            frozen[category] = arr
        object.__setattr__(self, "vectors", frozen)


def load_embeddings(path: str | Path) -> EmbeddingTable:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(payload, dict) or "dimension" not in payload or "vectors" not in payload:
        raise ValueError(f"{path}: embedding file needs 'dimension' and 'vectors'")
    return EmbeddingTable(
        dimension=int(payload["dimension"]),
        vectors={str(cat): vec for cat, vec in payload["vectors"].items()},
        template=payload.get("template"),
    )


@dataclass(frozen=True)
class SemSimSample:
    """One (image, absent category) analysis sample."""

    image_id: str
    negative_category: str
    similarity: float
    normalized_error: float
    reference_category: str


@dataclass(frozen=True)
class BinStat:
    """Error statistics of one similarity bin; None fields mean an empty bin."""

    lo: float
    hi: float
    count: int
    mean: float | None
    median: float | None
    q1: float | None
    q3: float | None


@dataclass(frozen=True)
class BinReport:
    """Equal-width similarity bins with per-bin error quartiles."""

    edges: tuple[float, ...]
    bins: tuple[BinStat, ...]
    degenerate_range: bool


def cosine_similarity(u: Sequence[float], v: Sequence[float]) -> float:
    """Cosine of the angle between two vectors, clamped into [-1, 1]."""
    ua = np.asarray(u, dtype=np.float64)
    va = np.asarray(v, dtype=np.float64)
    if ua.ndim != 1 or ua.shape != va.shape:
        raise ValueError(f"dimension mismatch: {ua.shape} vs {va.shape}")
    uu = float(np.dot(ua, ua))
    vv = float(np.dot(va, va))
    if uu == 0.0 or vv == 0.0:
        raise ValueError("cosine similarity of a zero vector is undefined")
    value = float(np.dot(ua, va)) / math.sqrt(uu * vv)
    return max(-1.0, min(1.0, value))


def max_positive_similarity(
    negative: str,
    positives: Sequence[str] | frozenset[str],
    table: EmbeddingTable,
) -> tuple[float, str]:
    """Highest similarity between the absent category and any present one.

    Ties resolve to the lexicographically smallest category name.
    """
    if not positives:
        raise ValueError("positives must be non-empty")
    for category in (negative, *positives):
        if category not in table.vectors:
            raise ValueError(f"category {category!r} missing from the embedding table")
    best_sim = -math.inf
    best_cat = None
    for category in sorted(positives):
        sim = cosine_similarity(table.vectors[negative], table.vectors[category])
        if sim > best_sim:
            best_sim, best_cat = sim, category
    return best_sim, best_cat


def collect_samples(
    store: AnnotationStore,
    preds: PredictionStore,
    table: EmbeddingTable,
) -> list[SemSimSample]:
    """One sample per (image, absent category).

    The error is the predicted count for the absent category divided by the
    true count of the most similar present category. Images where nothing is
    absent are skipped, mirroring the negative-label protocol.
    """
    jobs = []
    missing = []
    for image_id in store.image_ids():
        ps = derive_prompt_sets(store, image_id)
        if not ps.negatives:
            continue
        if not ps.positives:
            raise ValueError(f"image {image_id!r} has no present categories to compare against")
        for negative in sorted(ps.negatives):
            if (image_id, negative) not in preds:
                missing.append((image_id, negative))
            else:
                jobs.append((image_id, negative, ps.positives))
    if missing:
        raise MissingPredictionsError(missing)

    samples = []
    for image_id, negative, positives in jobs:
        similarity, reference = max_positive_similarity(negative, positives, table)
        truth = store.records[image_id].count(reference)
        if truth <= 0:
            raise AssertionError(f"reference category {reference!r} has no dots")
        predicted = payload_count(preds.entries[(image_id, negative)])
        samples.append(
            SemSimSample(
                image_id=image_id,
                negative_category=negative,
                similarity=similarity,
                normalized_error=predicted / truth,
                reference_category=reference,
            )
        )
    return samples


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float | None:
    """Pearson correlation; None when either variable has zero variance.

    Returning None rather than 0 keeps flat inputs visibly undefined instead
    of fabricating "no correlation".
    """
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("inputs must be 1-D of equal length")
    if x.size < 2:
        raise ValueError("correlation needs at least two samples")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(np.dot(dx, dx))
    syy = float(np.dot(dy, dy))
    if sxx == 0.0 or syy == 0.0:
        return None
    value = float(np.dot(dx, dy)) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, value))


def bin_statistics(
    samples: Sequence[SemSimSample],
    *,
    bin_range: tuple[float, float] | None = None,
) -> BinReport:
    """Five equal-width similarity bins with error quartile summaries.

    Bins span the observed similarity range by default, or a caller-fixed
    range; the rightmost bin is closed on the right and out-of-range samples
    clamp into the end bins. Quartiles interpolate linearly between order
    statistics. An all-equal similarity range degenerates to a single
    flagged bin.
    """
    if not samples:
        raise ValueError("cannot bin an empty sample list")
    sims = np.asarray([s.similarity for s in samples], dtype=np.float64)
    errs = np.asarray([s.normalized_error for s in samples], dtype=np.float64)
    if bin_range is not None:
        lo, hi = float(bin_range[0]), float(bin_range[1])
        if not lo < hi:
            raise ValueError("fixed bin range must satisfy lo < hi")
    else:
        lo, hi = float(sims.min()), float(sims.max())
    if hi <= lo:
        stats = _bin_stat(lo, hi, errs)
        return BinReport(edges=(lo, hi), bins=(stats,), degenerate_range=True)
    span = hi - lo
    edges = tuple(lo + k * span / NUM_BINS for k in range(NUM_BINS)) + (hi,)
    indices = np.clip((sims - lo) / span * NUM_BINS, 0, NUM_BINS - 1).astype(int)
    bins = []
    for k in range(NUM_BINS):
        members = errs[indices == k]
        if members.size:
            bins.append(_bin_stat(edges[k], edges[k + 1], members))
        else:
            bins.append(BinStat(edges[k], edges[k + 1], 0, None, None, None, None))
    return BinReport(edges=edges, bins=tuple(bins), degenerate_range=False)


def _bin_stat(lo: float, hi: float, errors: np.ndarray) -> BinStat:
    q1, median, q3 = (float(v) for v in np.percentile(errors, [25, 50, 75]))
    return BinStat(
        lo=lo,
        hi=hi,
        count=int(errors.size),
        mean=float(errors.mean()),
        median=median,
        q1=q1,
        q3=q3,
    )
