"""Evaluation protocols: negative-label cross-probing and the two distractor
modes (direct multi-class and synthetic mosaics).

Runs are deterministic given (corpus, predictions, seed): images, categories,
and mosaics are always visited in sorted order, and dataset reductions are
order-insensitive. Per-pair scoring is embarrassingly parallel; pass jobs > 1
to fan it out over a thread pool.
"""

from __future__ import annotations

import logging
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

from . import metrics
from .corpus import AnnotationStore, PredictionStore, derive_prompt_sets
from .density import (
    DensityGrid,
    InstancePointList,
    MosaicManifest,
    PatchCounts,
    build_mosaic_manifest,
    partition_grid,
    patch_counts_from_density,
    patch_counts_from_dots,
    payload_count,
    points_to_density,
    _round_half_up,
)
from .metrics import ImageScore, NegativeImageDiag

log = logging.getLogger(__name__)


class MissingPredictionsError(RuntimeError):
    """A protocol aborts with the complete list of absent prediction keys."""

    def __init__(self, missing: Sequence[tuple[str, str]]):
        self.missing = tuple(sorted(missing))
        listing = ", ".join(f"({img!r}, {cat!r})" for img, cat in self.missing)
        super().__init__(f"{len(self.missing)} prediction entries missing: {listing}")


@dataclass(frozen=True)
class SkippedImage:
    image_id: str
    reason: str


@dataclass(frozen=True)
class NegativeReport:
    """Negative-label test outputs plus per-image diagnostics."""

    nmn: float
    pccn: float
    images: tuple[NegativeImageDiag, ...]
    skipped: tuple[SkippedImage, ...]


@dataclass(frozen=True)
class PairScore:
    """Distractor score of one (image, prompt) pair."""

    image_id: str
    category: str
    score: ImageScore


@dataclass(frozen=True)
class MosaicHalfDiag:
    """Two-half cross-check emitted at grid level 1."""

    pred_top: float
    pred_bottom: float
    truth_top: float
    closed_cntp: float
    closed_cntr: float
    twohalf: ImageScore


@dataclass(frozen=True)
class MosaicPairScore:
    """Distractor score of one mosaic under its positive prompt."""

    mosaic_id: str
    positive_image_id: str
    negative_image_id: str
    category: str
    score: ImageScore
    halves: MosaicHalfDiag | None


@dataclass(frozen=True)
class DistractorReport:
    """Distractor test outputs; dataset values are recomputable from pairs."""

    mode: str
    level: int
    aggregation: str
    cntp: float
    cntr: float
    cntf1: float
    game: float
    pairs: tuple[PairScore, ...] | tuple[MosaicPairScore, ...]


@dataclass(frozen=True)
class ClassicPair:
    image_id: str
    category: str
    predicted: float
    truth: int


@dataclass(frozen=True)
class ClassicReport:
    """Whole-image MAE/RMSE over every (image, present category) pair."""

    mae: float
    rmse: float
    pairs: tuple[ClassicPair, ...]


@dataclass(frozen=True)
class MosaicPairing:
    manifests: tuple[MosaicManifest, ...]
    skipped: tuple[SkippedImage, ...]


def run_negative_label_test(store: AnnotationStore, preds: PredictionStore) -> NegativeReport:
    """Probe every image with every absent category.

    Images where no category is absent are skipped (their statistic would be
    an empty mean) and listed in the report. Missing prediction entries abort
    the run after the full set of absent keys is known.
    """
    usable = []
    skipped = []
    missing = []
    for image_id in store.image_ids():
        ps = derive_prompt_sets(store, image_id)
        if not ps.negatives:
            reason = "every dataset category is present; no negative prompts"
            log.warning("skipping image %r: %s", image_id, reason)
            skipped.append(SkippedImage(image_id, reason))
            continue
        if ps.total_positive_count == 0:
            raise ValueError(f"image {image_id!r} has no annotated instances (total true count 0)")
        for category in sorted(ps.negatives | ps.positives):
            if (image_id, category) not in preds:
                missing.append((image_id, category))
        usable.append((image_id, ps))
    if missing:
        raise MissingPredictionsError(missing)

    nmn_rows = []
    pccn_rows = []
    contexts = []
    for image_id, ps in usable:
        record = store.records[image_id]
        negative_counts = {
            category: payload_count(preds.entries[(image_id, category)])
            for category in sorted(ps.negatives)
        }
        positive_entries = [
            (payload_count(preds.entries[(image_id, category)]), float(record.count(category)))
            for category in sorted(ps.positives)
        ]
        nmn_rows.append((list(negative_counts.values()), float(ps.total_positive_count)))
        pccn_rows.append((positive_entries, list(negative_counts.values())))
        contexts.append((image_id, ps.total_positive_count, negative_counts))

    nmn_value = metrics.nmn(nmn_rows)
    pccn_value, breakdown = metrics.pccn(pccn_rows)
    diags = tuple(
        NegativeImageDiag(
            image_id=image_id,
            total_true=total_true,
            negative_counts=negative_counts,
            d_pos=b.d_pos,
            d_neg=b.d_neg,
            pccn_hit=b.hit,
        )
        for (image_id, total_true, negative_counts), b in zip(contexts, breakdown)
    )
    return NegativeReport(nmn=nmn_value, pccn=pccn_value, images=diags, skipped=tuple(skipped))


def _scaled_dots(dots, src_width, src_height, dst_width, dst_height):
    fx = dst_width / src_width
    fy = dst_height / src_height
    # clamp: x * fx may overshoot the far border by one ulp when x == src_width
    return [
        (min(x * fx, float(dst_width)), min(y * fy, float(dst_height)))
        for x, y in dots
    ]


def _payload_grid(payload, expected_source: tuple[int, int], context: str) -> DensityGrid:
    """Resolve a payload to the density canvas it is evaluated on."""
    if isinstance(payload, InstancePointList):
        if (payload.source_width, payload.source_height) != expected_source:
            raise ValueError(
                f"{context}: points payload declares source "
                f"{payload.source_width}x{payload.source_height}, expected "
                f"{expected_source[0]}x{expected_source[1]}"
            )
        return points_to_density(payload)
    if isinstance(payload, DensityGrid):
        return payload
    raise TypeError(f"unsupported payload type {type(payload).__name__}")


def _map_jobs(fn: Callable, items: Sequence, jobs: int) -> list:
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _aggregate(keyed_scores: Sequence[tuple[str, ImageScore]], per_image: bool):
    """Reduce (group key, score) pairs to dataset precision/recall/F1/GAME."""
    if per_image:
        grouped: dict[str, list[ImageScore]] = {}
        for key, score in keyed_scores:
            grouped.setdefault(key, []).append(score)
        units = []
        for key in sorted(grouped):
            members = grouped[key]
            cntp, cntr, cntf1 = metrics.dataset_prf(members)
            game = metrics.game_dataset([s.game for s in members])
            units.append(ImageScore(cntp, cntr, cntf1, game, 0.0, 0.0, 0.0))
    else:
        units = [score for _, score in keyed_scores]
    cntp, cntr, cntf1 = metrics.dataset_prf(units)
    game = metrics.game_dataset([s.game for s in units])
    return cntp, cntr, cntf1, game


def run_distractor_direct(
    store: AnnotationStore,
    preds: PredictionStore,
    level: int,
    *,
    per_image: bool = False,
    jobs: int = 1,
) -> DistractorReport:
    """Score every (image, present category) pair at the given grid level.

    Ground-truth dots are mapped onto the payload's own canvas (a density
    grid is integrated as-is; instance points are rasterized first), so
    predictions and truth always share the same geometry.
    """
    wanted = []
    missing = []
    for image_id in store.image_ids():
        for category in sorted(store.records[image_id].positives):
            key = (image_id, category)
            (wanted if key in preds else missing).append(key)
    if missing:
        raise MissingPredictionsError(missing)
    if not wanted:
        raise ValueError("corpus has no (image, category) pairs to score")

    def score_pair(key: tuple[str, str]) -> PairScore:
        image_id, category = key
        record = store.records[image_id]
        grid = _payload_grid(
            preds.entries[key], (record.width, record.height), f"({image_id!r}, {category!r})"
        )
        partition = partition_grid(grid.height, grid.width, level)
        dots = _scaled_dots(record.dots[category], record.width, record.height, grid.width, grid.height)
        pred_counts = patch_counts_from_density(grid, partition)
        gt_counts = patch_counts_from_dots(dots, grid.height, grid.width, partition)
        return PairScore(image_id, category, metrics.image_prf(pred_counts, gt_counts))

    pairs = _map_jobs(score_pair, wanted, jobs)
    cntp, cntr, cntf1, game = _aggregate(
        [(p.image_id, p.score) for p in pairs], per_image
    )
    return DistractorReport(
        mode="direct",
        level=level,
        aggregation="image" if per_image else "pair",
        cntp=cntp,
        cntr=cntr,
        cntf1=cntf1,
        game=game,
        pairs=tuple(pairs),
    )


def pair_mosaics(store: AnnotationStore, seed: int) -> MosaicPairing:
    """Deterministically pair each (image, present category) with a partner
    image that does not contain that category.

    The partner is drawn uniformly with a seeded generator; identical seeds
    reproduce the list bit-for-bit. Pairs without any valid partner are
    skipped and listed.
    """
    image_ids = store.image_ids()
    if len(image_ids) < 2:
        raise ValueError("mosaic pairing needs at least two images")
    rng = random.Random(seed)
    manifests = []
    skipped = []
    for image_id in image_ids:
        record = store.records[image_id]
        for category in sorted(record.positives):
            candidates = [
                other
                for other in image_ids
                if other != image_id and category not in store.records[other].positives
            ]
            if not candidates:
                skipped.append(
                    SkippedImage(
                        image_id,
                        f"category {category!r} present in every other image",
                    )
                )
                continue
            partner = rng.choice(candidates)
            manifests.append(build_mosaic_manifest(record, category, store.records[partner]))
    return MosaicPairing(manifests=tuple(manifests), skipped=tuple(skipped))


def run_distractor_mosaic(
    manifests: Sequence[MosaicManifest],
    preds: PredictionStore,
    level: int,
    *,
    per_image: bool = False,
    jobs: int = 1,
) -> DistractorReport:
    """Score each mosaic under its positive prompt on the standard grid.

    Predictions are keyed by (mosaic id, positive category). At level 1 the
    report additionally carries the two-half split: half totals, the closed
    forms they induce, and the patch-based scores of the same two-patch
    instance, for cross-checking.
    """
    ordered = sorted(manifests, key=lambda m: m.mosaic_id)
    missing = [
        (m.mosaic_id, m.positive_category)
        for m in ordered
        if (m.mosaic_id, m.positive_category) not in preds
    ]
    if missing:
        raise MissingPredictionsError(missing)
    if not ordered:
        raise ValueError("no mosaics to score")

    def score_mosaic(manifest: MosaicManifest) -> MosaicPairScore:
        key = (manifest.mosaic_id, manifest.positive_category)
        grid = _payload_grid(
            preds.entries[key],
            (manifest.common_width, manifest.mosaic_height),
            manifest.mosaic_id,
        )
        partition = partition_grid(grid.height, grid.width, level)
        dots = _scaled_dots(
            manifest.positive_dots[manifest.positive_category],
            manifest.common_width,
            manifest.mosaic_height,
            grid.width,
            grid.height,
        )
        pred_counts = patch_counts_from_density(grid, partition)
        gt_counts = patch_counts_from_dots(dots, grid.height, grid.width, partition)
        score = metrics.image_prf(pred_counts, gt_counts)

        halves = None
        if level == 1:
            fy = grid.height / manifest.mosaic_height
            split = min(_round_half_up(manifest.split_row * fy), grid.height)
            pred_top = float(grid.values[:split].sum())
            pred_bottom = float(grid.values[split:].sum())
            truth_top = float(len(manifest.positive_dots[manifest.positive_category]))
            closed_cntp, closed_cntr = metrics.mosaic_closed_form(pred_top, truth_top, pred_bottom)
            twohalf = metrics.image_prf(
                PatchCounts(None, (pred_top, pred_bottom)),
                PatchCounts(None, (truth_top, 0.0)),
            )
            halves = MosaicHalfDiag(
                pred_top=pred_top,
                pred_bottom=pred_bottom,
                truth_top=truth_top,
                closed_cntp=closed_cntp,
                closed_cntr=closed_cntr,
                twohalf=twohalf,
            )
        return MosaicPairScore(
            mosaic_id=manifest.mosaic_id,
            positive_image_id=manifest.positive_image_id,
            negative_image_id=manifest.negative_image_id,
            category=manifest.positive_category,
            score=score,
            halves=halves,
        )

    pairs = _map_jobs(score_mosaic, ordered, jobs)
    cntp, cntr, cntf1, game = _aggregate(
        [(p.mosaic_id, p.score) for p in pairs], per_image
    )
    return DistractorReport(
        mode="mosaic",
        level=level,
        aggregation="image" if per_image else "pair",
        cntp=cntp,
        cntr=cntr,
        cntf1=cntf1,
        game=game,
        pairs=tuple(pairs),
    )


def run_classic(store: AnnotationStore, preds: PredictionStore) -> ClassicReport:
    """Whole-image absolute and squared errors over present categories."""
    wanted = []
    missing = []
    for image_id in store.image_ids():
        for category in sorted(store.records[image_id].positives):
            key = (image_id, category)
            (wanted if key in preds else missing).append(key)
    if missing:
        raise MissingPredictionsError(missing)
    if not wanted:
        raise ValueError("corpus has no (image, category) pairs to score")
    pairs = tuple(
        ClassicPair(
            image_id=image_id,
            category=category,
            predicted=payload_count(preds.entries[(image_id, category)]),
            truth=store.records[image_id].count(category),
        )
        for image_id, category in wanted
    )
    mae, rmse = metrics.classic_errors([(p.predicted, float(p.truth)) for p in pairs])
    return ClassicReport(mae=mae, rmse=rmse, pairs=pairs)
