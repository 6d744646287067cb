"""Writers for the harness's documented file formats.

The adapter talks to the harness only through files and its CLI, so the
formats are implemented here against their documentation:

- CDM1 density file: magic bytes "CDM1", u32 height, u32 width, then
  height*width float32 values, row-major, all little-endian.
- Points file: {"source_width": W, "source_height": H, "points": [[x,y],..]}.
- Prediction manifest: list of {"image", "category", "kind", "path"} with
  payload paths relative to the manifest location.
- Embedding file: {"dimension": D, "template": str, "vectors": {name: [..]}}.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

CDM1_MAGIC = b"CDM1"


class ExportError(ValueError):
    """Raised when model output cannot be converted to a harness format."""


def write_density_file(path: str | Path, values) -> None:
    """Write a non-negative 2-D array as a CDM1 density file."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ExportError(f"density array must be 2-D and non-empty, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ExportError("density array contains non-finite values")
    if (arr < 0).any():
        raise ExportError("density array contains negative values")
    height, width = arr.shape
    with open(path, "wb") as fh:
        fh.write(CDM1_MAGIC)
        fh.write(struct.pack("<II", height, width))
        fh.write(arr.astype("<f4").tobytes(order="C"))


def write_points_file(path: str | Path, points, source_width: int, source_height: int) -> None:
    if source_width < 1 or source_height < 1:
        raise ExportError("source dimensions must be positive")
    cleaned = []
    for x, y in points:
        x, y = float(x), float(y)
        if not (0 <= x <= source_width and 0 <= y <= source_height):
            raise ExportError(
                f"point ({x}, {y}) outside {source_width}x{source_height} source"
            )
        cleaned.append([x, y])
    payload = {
        "source_width": int(source_width),
        "source_height": int(source_height),
        "points": cleaned,
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True) + "\n", encoding="utf-8")


def write_prediction_manifest(path: str | Path, entries: list[dict]) -> None:
    """entries: {"image", "category", "kind", "path"} dicts, paths relative."""
    for entry in entries:
        missing = {"image", "category", "kind", "path"} - set(entry)
        if missing:
            raise ExportError(f"manifest entry missing keys {sorted(missing)}")
        if entry["kind"] not in ("density", "points"):
            raise ExportError(f"unknown payload kind {entry['kind']!r}")
    Path(path).write_text(json.dumps(entries, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_embedding_file(path: str | Path, vectors: dict[str, np.ndarray], template: str) -> None:
    dims = {np.asarray(v).shape for v in vectors.values()}
    if len(dims) != 1 or len(next(iter(dims))) != 1:
        raise ExportError(f"vectors must share one 1-D shape, got {sorted(dims)}")
    dimension = next(iter(dims))[0]
    payload = {
        "dimension": int(dimension),
        "template": template,
        "vectors": {name: [float(v) for v in vec] for name, vec in sorted(vectors.items())},
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")
