"""Annotation and prediction corpora: loading, validation, prompt-set
derivation, and coverage checks.

Annotation file schema (JSON, UTF-8):
    {"categories": ["a", "b", ...],
     "images": [{"id": "...", "width": W, "height": H,
                 "dots": {"a": [[x, y], ...], ...}}, ...]}

Prediction manifest schema (JSON): a list of
    {"image": id, "category": name, "kind": "density"|"points", "path": rel}
where density payloads are CDM1 files and point payloads the points JSON,
both resolved relative to the manifest's directory.

Stores are immutable after loading and safe to share across workers.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

from .density import (
    DensityFormatError,
    DensityGrid,
    InstancePointList,
    read_cdm1,
    read_points,
)

PREDICTION_KINDS = ("density", "points")


class CorpusError(ValueError):
    """Raised when an annotation or prediction input violates its schema."""


@dataclass(frozen=True)
class AnnotationRecord:
    """Dot annotations of one image, keyed by category."""

    image_id: str
    width: int
    height: int
    dots: Mapping[str, tuple[tuple[float, float], ...]]

    def __post_init__(self):
        if not self.image_id or not self.image_id.strip():
            raise CorpusError("image id must be non-empty")
        if self.width < 1 or self.height < 1:
            raise CorpusError(f"image {self.image_id!r}: dimensions must be positive")
        normalized = {}
        for category, dots in self.dots.items():
            _check_category_name(category)
            pts = tuple((float(x), float(y)) for x, y in dots)
            if not pts:
                raise CorpusError(
                    f"image {self.image_id!r}: category {category!r} has an empty dot list"
                )
            for x, y in pts:
                if not (math.isfinite(x) and math.isfinite(y)):
                    raise CorpusError(f"image {self.image_id!r}: non-finite dot coordinate")
                if not (0 <= x <= self.width and 0 <= y <= self.height):
                    raise CorpusError(
                        f"image {self.image_id!r}: dot ({x}, {y}) outside "
                        f"{self.width}x{self.height} bounds"
                    )
            normalized[category] = pts
        object.__setattr__(self, "dots", normalized)

    def count(self, category: str) -> int:
        """Ground-truth count for a category: the length of its dot list."""
        return len(self.dots.get(category, ()))

    @property
    def positives(self) -> frozenset[str]:
        return frozenset(self.dots)

    @property
    def total_instances(self) -> int:
        return sum(len(d) for d in self.dots.values())


@dataclass(frozen=True)
class AnnotationStore:
    """All annotation records plus the dataset's category universe."""

    records: Mapping[str, AnnotationRecord]
    universe: frozenset[str]

    def __post_init__(self):
        for name in self.universe:
            _check_category_name(name)
        for record in self.records.values():
            extra = record.positives - self.universe
            if extra:
                raise CorpusError(
                    f"image {record.image_id!r} uses categories missing from the "
                    f"universe: {sorted(extra)}"
                )
        object.__setattr__(self, "records", dict(self.records))
        object.__setattr__(self, "universe", frozenset(self.universe))

    def image_ids(self) -> list[str]:
        return sorted(self.records)


@dataclass(frozen=True)
class PromptSets:
    """Positive/negative prompt split of the universe for one image."""

    positives: frozenset[str]
    negatives: frozenset[str]
    total_positive_count: int

    def __post_init__(self):
        if self.positives & self.negatives:
            raise CorpusError("positives and negatives overlap")
        if self.total_positive_count < 0:
            raise CorpusError("total positive count must be non-negative")


def _check_category_name(name) -> None:
    if not isinstance(name, str) or not name.strip():
        raise CorpusError(f"category name {name!r} is empty or not text")


def annotations_from_dict(payload) -> AnnotationStore:
    """Build a validated store from parsed annotation JSON."""
    if not isinstance(payload, dict):
        raise CorpusError("annotation file must be a JSON object")
    categories = payload.get("categories")
    images = payload.get("images")
    if not isinstance(categories, list) or not isinstance(images, list):
        raise CorpusError("annotation file needs 'categories' and 'images' lists")
    universe = []
    for name in categories:
        _check_category_name(name)
        if name in universe:
            raise CorpusError(f"duplicate category {name!r} in universe")
        universe.append(name)
    records: dict[str, AnnotationRecord] = {}
    for entry in images:
        if not isinstance(entry, dict):
            raise CorpusError("each image entry must be a JSON object")
        try:
            record = AnnotationRecord(
                image_id=str(entry["id"]),
                width=int(entry["width"]),
                height=int(entry["height"]),
                dots={cat: [tuple(p) for p in pts] for cat, pts in entry.get("dots", {}).items()},
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, CorpusError):
                raise
            raise CorpusError(f"malformed image entry: {exc}") from exc
        if record.image_id in records:
            raise CorpusError(f"duplicate image id {record.image_id!r}")
        records[record.image_id] = record
    return AnnotationStore(records=records, universe=frozenset(universe))


def load_annotations(path: str | Path) -> AnnotationStore:
    """Load and validate an annotation file."""
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CorpusError(f"{path}: invalid JSON: {exc}") from exc
    return annotations_from_dict(payload)


def annotations_to_json(store: AnnotationStore) -> str:
    """Canonical serialization: sorted categories, images, and dot keys.

    Loading the result and serializing again reproduces the exact bytes.
    """
    payload = {
        "categories": sorted(store.universe),
        "images": [
            {
                "id": image_id,
                "width": record.width,
                "height": record.height,
                "dots": {
                    cat: [[x, y] for x, y in record.dots[cat]] for cat in sorted(record.dots)
                },
            }
            for image_id, record in sorted(store.records.items())
        ],
    }
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def save_annotations(store: AnnotationStore, path: str | Path) -> None:
    Path(path).write_text(annotations_to_json(store), encoding="utf-8")


def derive_prompt_sets(store: AnnotationStore, image_id: str) -> PromptSets:
    """Split the universe into present and absent categories for one image."""
    record = store.records.get(image_id)
    if record is None:
        raise CorpusError(f"unknown image id {image_id!r}")
    positives = record.positives
    return PromptSets(
        positives=positives,
        negatives=store.universe - positives,
        total_positive_count=record.total_instances,
    )


# -- predictions -----------------------------------------------------------------


@dataclass(frozen=True)
class PredictionStore:
    """Model outputs keyed by (image_id, category)."""

    entries: Mapping[tuple[str, str], DensityGrid | InstancePointList]

    def __post_init__(self):
        object.__setattr__(self, "entries", dict(self.entries))

    def __contains__(self, key: tuple[str, str]) -> bool:
        return key in self.entries

    def keys(self) -> list[tuple[str, str]]:
        return sorted(self.entries)


def load_prediction_manifest(
    path: str | Path,
    store: AnnotationStore | None = None,
    *,
    known_ids=None,
) -> PredictionStore:
    """Load every payload named by a prediction manifest.

    Image ids are checked against the annotation store (or an explicit id
    set, e.g. mosaic ids); unknown categories are allowed here and surface
    in validate_corpus instead.
    """
    manifest_path = Path(path)
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CorpusError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(manifest, list):
        raise CorpusError(f"{path}: prediction manifest must be a JSON list")
    if known_ids is None and store is not None:
        known_ids = set(store.records)
    entries: dict[tuple[str, str], DensityGrid | InstancePointList] = {}
    for entry in manifest:
        if not isinstance(entry, dict):
            raise CorpusError(f"{path}: each manifest entry must be a JSON object")
        try:
            image = str(entry["image"])
            category = str(entry["category"])
            kind = str(entry["kind"])
            rel = str(entry["path"])
        except KeyError as exc:
            raise CorpusError(f"{path}: manifest entry missing key {exc}") from exc
        if kind not in PREDICTION_KINDS:
            raise CorpusError(f"{path}: unknown prediction kind {kind!r}")
        if known_ids is not None and image not in known_ids:
            raise CorpusError(f"{path}: prediction for unknown image {image!r}")
        key = (image, category)
        if key in entries:
            raise CorpusError(f"{path}: duplicate prediction entry for {key}")
        payload_path = manifest_path.parent / rel
        try:
            if kind == "density":
                entries[key] = read_cdm1(payload_path)
            else:
                entries[key] = read_points(payload_path)
        except DensityFormatError as exc:
            raise CorpusError(str(exc)) from exc
    return PredictionStore(entries=entries)


@dataclass(frozen=True)
class ValidationReport:
    """Coverage diagnosis of a prediction store against a protocol."""

    protocol: str
    missing: tuple[tuple[str, str], ...]
    unused: tuple[tuple[str, str], ...]
    unknown: tuple[tuple[str, str], ...]

    @property
    def can_run(self) -> bool:
        return not self.missing

    @property
    def is_empty(self) -> bool:
        return not (self.missing or self.unused or self.unknown)


def required_prediction_keys(store: AnnotationStore, protocol: str) -> set[tuple[str, str]]:
    """Prediction keys a protocol needs to run to completion.

    The negative-label protocol probes every absent category and also needs
    the positive predictions as the error baseline; images where no category
    is absent are skipped by the protocol and hence not required. The
    distractor protocol queries each present category.
    """
    if protocol not in ("negative", "distractor"):
        raise ValueError(f"unknown protocol {protocol!r}")
    required: set[tuple[str, str]] = set()
    for image_id in store.image_ids():
        ps = derive_prompt_sets(store, image_id)
        if protocol == "negative":
            if not ps.negatives:
                continue
            required.update((image_id, c) for c in ps.negatives | ps.positives)
        else:
            required.update((image_id, c) for c in ps.positives)
    return required


def validate_corpus(
    store: AnnotationStore,
    preds: PredictionStore,
    protocol: str,
) -> ValidationReport:
    """Diagnose prediction coverage; never raises for coverage problems."""
    required = required_prediction_keys(store, protocol)
    present = set(preds.entries)
    unknown = {
        (image, cat)
        for image, cat in present
        if image not in store.records or cat not in store.universe
    }
    missing = sorted(required - present)
    unused = sorted(present - required - unknown)
    return ValidationReport(
        protocol=protocol,
        missing=tuple(missing),
        unused=tuple(unused),
        unknown=tuple(sorted(unknown)),
    )
