"""Density-map geometry: grid partitioning, patch integration, instance
rasterization, and mosaic construction.

All operations are pure functions on immutable inputs. Coordinates are
(x, y) with x horizontal (column) and y vertical (row), origin top-left.
"""

from __future__ import annotations

import json
import math
import struct
from bisect import bisect_right
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Mapping

import numpy as np

if TYPE_CHECKING:
    from .corpus import AnnotationRecord

CANVAS_SIZE = 384
KERNEL_SIZE = 5
MAX_LEVEL = 6

CDM1_MAGIC = b"CDM1"


class DensityFormatError(ValueError):
    """Raised when a density or points payload file is malformed."""


def _round_half_up(value: float) -> int:
    # ties round toward +inf so results are reproducible across platforms
    return math.floor(value + 0.5)


@dataclass(frozen=True)
class DensityGrid:
    """Non-negative 2-D prediction map whose integral is the predicted count."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"density grid must be a non-empty 2-D array, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("density grid contains non-finite values")
        if (arr < 0).any():
            raise ValueError("density grid contains negative values")
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class InstancePointList:
    """Representative points of predicted instances, in source-image pixels."""

    points: tuple[tuple[float, float], ...]
    source_width: int
    source_height: int

    def __post_init__(self):
        if self.source_width < 1 or self.source_height < 1:
            raise ValueError("source dimensions must be positive")
        pts = tuple((float(x), float(y)) for x, y in self.points)
        for x, y in pts:
            if not (math.isfinite(x) and math.isfinite(y)):
                raise ValueError("point coordinates must be finite")
            if not (0 <= x <= self.source_width and 0 <= y <= self.source_height):
                raise ValueError(
                    f"point ({x}, {y}) outside {self.source_width}x{self.source_height} source"
                )
        object.__setattr__(self, "points", pts)


@dataclass(frozen=True)
class PatchRect:
    """Half-open pixel rectangle [row_start, row_end) x [col_start, col_end)."""

    row_start: int
    row_end: int
    col_start: int
    col_end: int


@dataclass(frozen=True)
class Partition:
    """Nested 4^level grid of half-open patches tiling a height x width image."""

    level: int
    height: int
    width: int
    row_bounds: tuple[int, ...]
    col_bounds: tuple[int, ...]
    rects: tuple[PatchRect, ...]

    @property
    def side(self) -> int:
        return 2 ** self.level


@dataclass(frozen=True)
class PatchCounts:
    """Per-patch counts in row-major patch order.

    level is None for ad-hoc partitions (e.g. the two-half mosaic split);
    otherwise the vector length must be 4^level.
    """

    level: int | None
    counts: tuple[float, ...]

    def __post_init__(self):
        vals = tuple(float(c) for c in self.counts)
        for c in vals:
            if not math.isfinite(c) or c < 0:
                raise ValueError(f"patch count {c} must be finite and non-negative")
        if self.level is not None and len(vals) != 4 ** self.level:
            raise ValueError(f"expected {4 ** self.level} patches at level {self.level}, got {len(vals)}")
        object.__setattr__(self, "counts", vals)

    @property
    def total(self) -> float:
        return float(np.sum(np.asarray(self.counts)))


def partition_grid(height: int, width: int, level: int) -> Partition:
    """Split a height x width extent into a 4^level grid of half-open patches.

    Boundaries sit at floor(k * dim / 2^level), which makes every level-L
    boundary also a level-(L+1) boundary, so patch grids nest across levels.
    """
    if height < 1 or width < 1:
        raise ValueError("image dimensions must be positive")
    if not 0 <= level <= MAX_LEVEL:
        raise ValueError(f"grid level must be in [0, {MAX_LEVEL}], got {level}")
    side = 2 ** level
    if side > height or side > width:
        raise ValueError(f"level {level} produces empty patches on a {height}x{width} image")
    row_bounds = tuple((k * height) // side for k in range(side + 1))
    col_bounds = tuple((k * width) // side for k in range(side + 1))
    rects = tuple(
        PatchRect(row_bounds[r], row_bounds[r + 1], col_bounds[c], col_bounds[c + 1])
        for r in range(side)
        for c in range(side)
    )
    return Partition(level, height, width, row_bounds, col_bounds, rects)


def patch_counts_from_density(grid: DensityGrid, partition: Partition) -> PatchCounts:
    """Integrate the density map inside each patch."""
    if (grid.height, grid.width) != (partition.height, partition.width):
        raise ValueError(
            f"partition built for {partition.height}x{partition.width}, "
            f"grid is {grid.height}x{grid.width}"
        )
    counts = tuple(
        float(grid.values[r.row_start:r.row_end, r.col_start:r.col_end].sum())
        for r in partition.rects
    )
    return PatchCounts(partition.level, counts)


def patch_counts_from_dots(
    dots: Iterable[tuple[float, float]],
    height: int,
    width: int,
    partition: Partition,
) -> PatchCounts:
    """Count dots per patch under the half-open convention.

    Dots sitting exactly on the far image border (x = width or y = height)
    clamp into the last column/row of patches.
    """
    if (height, width) != (partition.height, partition.width):
        raise ValueError("partition does not match the stated image dimensions")
    side = partition.side
    counts = [0.0] * len(partition.rects)
    for x, y in dots:
        if not (0 <= x <= width and 0 <= y <= height):
            raise ValueError(f"dot ({x}, {y}) outside {width}x{height} image")
        r = min(bisect_right(partition.row_bounds, y) - 1, side - 1)
        c = min(bisect_right(partition.col_bounds, x) - 1, side - 1)
        counts[r * side + c] += 1.0
    return PatchCounts(partition.level, tuple(counts))


def points_to_density(points: InstancePointList, canvas_size: int = CANVAS_SIZE) -> DensityGrid:
    """Rasterize instance points onto a fixed square canvas.

    Each point is rescaled to the canvas, rounded to the nearest pixel
    (ties toward +inf), and stamped with a KERNEL_SIZE x KERNEL_SIZE uniform
    kernel of unit mass. Kernels clipped by the canvas border keep unit mass
    by spreading it over the surviving footprint, so the grid total equals
    the number of points.
    """
    if canvas_size < KERNEL_SIZE:
        raise ValueError("canvas smaller than the rasterization kernel")
    grid = np.zeros((canvas_size, canvas_size), dtype=np.float64)
    half = KERNEL_SIZE // 2
    sx = canvas_size / points.source_width
    sy = canvas_size / points.source_height
    for x, y in points.points:
        px = min(_round_half_up(x * sx), canvas_size - 1)
        py = min(_round_half_up(y * sy), canvas_size - 1)
        r0, r1 = max(py - half, 0), min(py + half + 1, canvas_size)
        c0, c1 = max(px - half, 0), min(px + half + 1, canvas_size)
        grid[r0:r1, c0:c1] += 1.0 / ((r1 - r0) * (c1 - c0))
    return DensityGrid(grid)


def total_count(grid: DensityGrid) -> float:
    """Predicted count of a density map: the sum of all its values."""
    return float(np.sum(grid.values))


def payload_count(payload: DensityGrid | InstancePointList) -> float:
    """Predicted count of either payload kind.

    Instance payloads count one per point; rasterizing first would give the
    same number to within rounding because every kernel carries unit mass.
    """
    if isinstance(payload, DensityGrid):
        return total_count(payload)
    if isinstance(payload, InstancePointList):
        return float(len(payload.points))
    raise TypeError(f"unsupported payload type {type(payload).__name__}")


# -- mosaics --------------------------------------------------------------------


@dataclass(frozen=True)
class MosaicManifest:
    """Geometry and transformed dots of a vertically stacked image pair.

    The top half holds the scaled positive image (rows [0, split_row)), the
    bottom half the scaled negative image. Dot coordinates are stored in
    mosaic pixels; per-category dot counts match the source records.
    """

    positive_image_id: str
    negative_image_id: str
    positive_category: str
    common_width: int
    positive_scale: float
    negative_scale: float
    split_row: int
    mosaic_height: int
    positive_dots: Mapping[str, tuple[tuple[float, float], ...]]
    negative_dots: Mapping[str, tuple[tuple[float, float], ...]]

    def __post_init__(self):
        for dots in self.positive_dots.values():
            for _, y in dots:
                if not y < self.split_row:
                    raise ValueError("positive-half dot at or below the split row")
        for dots in self.negative_dots.values():
            for _, y in dots:
                if not self.split_row <= y <= self.mosaic_height:
                    raise ValueError("negative-half dot outside the bottom half")

    @property
    def mosaic_id(self) -> str:
        return f"{self.positive_image_id}+{self.negative_image_id}:{self.positive_category}"


def build_mosaic_manifest(
    pos: "AnnotationRecord",
    pos_category: str,
    neg: "AnnotationRecord",
) -> MosaicManifest:
    """Stack a positive record over a negative one at their common width.

    Both images are scaled (down only) to the smaller of the two widths,
    preserving aspect ratio; dots are scaled by the same factors and the
    bottom half is offset by the split row.
    """
    if pos_category not in pos.dots:
        raise ValueError(f"category {pos_category!r} has no dots in image {pos.image_id!r}")
    if pos_category in neg.dots:
        raise ValueError(f"category {pos_category!r} also present in negative image {neg.image_id!r}")
    common_width = min(pos.width, neg.width)
    pos_scale = common_width / pos.width
    neg_scale = common_width / neg.width
    split_row = _round_half_up(pos.height * pos_scale)
    mosaic_height = split_row + _round_half_up(neg.height * neg_scale)
    if split_row < 1 or mosaic_height <= split_row:
        raise ValueError(
            f"degenerate mosaic: one half scales to zero rows "
            f"({pos.image_id!r} over {neg.image_id!r} at width {common_width})"
        )

    # Scaled coordinates can overshoot the rounded seam or border by a
    # fraction of a pixel; clamp them back inside their half.
    top_limit = math.nextafter(float(split_row), 0.0)
    positive_dots = {
        cat: tuple(
            (min(x * pos_scale, float(common_width)), min(y * pos_scale, top_limit))
            for x, y in dots
        )
        for cat, dots in pos.dots.items()
    }
    negative_dots = {
        cat: tuple(
            (
                min(x * neg_scale, float(common_width)),
                min(split_row + y * neg_scale, float(mosaic_height)),
            )
            for x, y in dots
        )
        for cat, dots in neg.dots.items()
    }
    return MosaicManifest(
        positive_image_id=pos.image_id,
        negative_image_id=neg.image_id,
        positive_category=pos_category,
        common_width=common_width,
        positive_scale=pos_scale,
        negative_scale=neg_scale,
        split_row=split_row,
        mosaic_height=mosaic_height,
        positive_dots=positive_dots,
        negative_dots=negative_dots,
    )


def mosaic_manifest_to_dict(manifest: MosaicManifest) -> dict:
    return {
        "mosaic_id": manifest.mosaic_id,
        "positive_image_id": manifest.positive_image_id,
        "negative_image_id": manifest.negative_image_id,
        "positive_category": manifest.positive_category,
        "common_width": manifest.common_width,
        "positive_scale": manifest.positive_scale,
        "negative_scale": manifest.negative_scale,
        "split_row": manifest.split_row,
        "mosaic_height": manifest.mosaic_height,
        "positive_dots": {
            cat: [[x, y] for x, y in dots] for cat, dots in sorted(manifest.positive_dots.items())
        },
        "negative_dots": {
            cat: [[x, y] for x, y in dots] for cat, dots in sorted(manifest.negative_dots.items())
        },
    }


def mosaic_manifest_from_dict(payload: Mapping) -> MosaicManifest:
    try:
        return MosaicManifest(
            positive_image_id=str(payload["positive_image_id"]),
            negative_image_id=str(payload["negative_image_id"]),
            positive_category=str(payload["positive_category"]),
            common_width=int(payload["common_width"]),
            positive_scale=float(payload["positive_scale"]),
            negative_scale=float(payload["negative_scale"]),
            split_row=int(payload["split_row"]),
            mosaic_height=int(payload["mosaic_height"]),
            positive_dots={
                cat: tuple((float(x), float(y)) for x, y in dots)
                for cat, dots in payload["positive_dots"].items()
            },
            negative_dots={
                cat: tuple((float(x), float(y)) for x, y in dots)
                for cat, dots in payload["negative_dots"].items()
            },
        )
    except (KeyError, TypeError) as exc:
        raise DensityFormatError(f"malformed mosaic manifest entry: {exc}") from exc


# -- file formats ----------------------------------------------------------------


def write_cdm1(path: str | Path, grid: DensityGrid | np.ndarray) -> None:
    """Write a density map as CDM1: magic, u32 height, u32 width, f32 values.

    All integers and floats are little-endian; values are row-major.
    """
    if not isinstance(grid, DensityGrid):
        grid = DensityGrid(np.asarray(grid, dtype=np.float64))
    with open(path, "wb") as fh:
        fh.write(CDM1_MAGIC)
        fh.write(struct.pack("<II", grid.height, grid.width))
        fh.write(grid.values.astype("<f4").tobytes(order="C"))


def read_cdm1(path: str | Path) -> DensityGrid:
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != CDM1_MAGIC:
        raise DensityFormatError(f"{path}: not a CDM1 density file")
    height, width = struct.unpack("<II", data[4:12])
    if height < 1 or width < 1:
        raise DensityFormatError(f"{path}: density dimensions must be positive")
    expected = 12 + 4 * height * width
    if len(data) != expected:
        raise DensityFormatError(f"{path}: expected {expected} bytes, found {len(data)}")
    values = np.frombuffer(data, dtype="<f4", offset=12).reshape(height, width)
    try:
        return DensityGrid(values.astype(np.float64))
    except ValueError as exc:
        raise DensityFormatError(f"{path}: {exc}") from exc


def write_points(path: str | Path, points: InstancePointList) -> None:
    payload = {
        "source_width": points.source_width,
        "source_height": points.source_height,
        "points": [[x, y] for x, y in points.points],
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True) + "\n", encoding="utf-8")


def read_points(path: str | Path) -> InstancePointList:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DensityFormatError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise DensityFormatError(f"{path}: points file must be a JSON object")
    try:
        points = tuple((float(x), float(y)) for x, y in payload["points"])
        source_width = int(payload["source_width"])
        source_height = int(payload["source_height"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DensityFormatError(f"{path}: malformed points file: {exc}") from exc
    try:
        return InstancePointList(points, source_width, source_height)
    except ValueError as exc:
        raise DensityFormatError(f"{path}: {exc}") from exc
