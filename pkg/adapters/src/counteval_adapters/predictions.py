"""Convert instance-centric or density model outputs into harness payloads.

A batch is described by a job file (JSON list); each job names the (image,
category) pair, the output kind, and a source file:

- kind "density": .npy with a non-negative 2-D array  -> CDM1 file
- kind "points":  JSON {"source_width", "source_height", "points"}
- kind "boxes":   JSON {"source_width", "source_height",
                        "boxes": [[x1, y1, x2, y2], ...]} -> box centers
- kind "masks":   .npy with shape (instances, H, W); a nonzero pixel belongs
                  to the instance -> per-instance centroids

Instance kinds become points files; the manifest entry kind is always one of
the harness's two payload kinds.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .formats import ExportError, write_density_file, write_points_file, write_prediction_manifest

JOB_KINDS = ("density", "points", "boxes", "masks")


def box_center(box) -> tuple[float, float]:
    """Center of an (x1, y1, x2, y2) box."""
    x1, y1, x2, y2 = (float(v) for v in box)
    if x2 < x1 or y2 < y1:
        raise ExportError(f"degenerate box {box}")
    return (x1 + x2) / 2, (y1 + y2) / 2


def mask_centroid(mask) -> tuple[float, float]:
    """Centroid (x, y) of a 2-D mask's nonzero pixels."""
    arr = np.asarray(mask)
    if arr.ndim != 2:
        raise ExportError(f"mask must be 2-D, got shape {arr.shape}")
    rows, cols = np.nonzero(arr)
    if rows.size == 0:
        raise ExportError("empty mask has no centroid")
    return float(cols.mean()), float(rows.mean())


def _load_instance_json(path: Path, key: str):
    payload = json.loads(path.read_text(encoding="utf-8"))
    try:
        return (
            int(payload["source_width"]),
            int(payload["source_height"]),
            payload[key],
        )
    except (KeyError, TypeError) as exc:
        raise ExportError(f"{path}: malformed instance file: {exc}") from exc


def export_predictions(job_file: str | Path, out_dir: str | Path, manifest_path: str | Path) -> list[dict]:
    """Run a conversion batch and write payloads plus the manifest.

    Returns the manifest entries. Payload paths are relative to the manifest
    so the tree can be moved as a unit.
    """
    job_path = Path(job_file)
    jobs = json.loads(job_path.read_text(encoding="utf-8"))
    if not isinstance(jobs, list):
        raise ExportError(f"{job_file}: job file must be a JSON list")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest_path = Path(manifest_path)
    entries = []
    seen = set()
    for n, job in enumerate(jobs):
        try:
            image, category, kind = job["image"], job["category"], job["kind"]
            source = job_path.parent / job["source"]
        except (KeyError, TypeError) as exc:
            raise ExportError(f"{job_file}: job {n} malformed: {exc}") from exc
        if kind not in JOB_KINDS:
            raise ExportError(f"{job_file}: job {n}: unknown kind {kind!r}")
        if (image, category) in seen:
            raise ExportError(f"{job_file}: duplicate job for ({image!r}, {category!r})")
        seen.add((image, category))

        if kind == "density":
            values = np.load(source)
            out_name = f"{n:05d}.cdm"
            write_density_file(out_dir / out_name, values)
            manifest_kind = "density"
        else:
            if kind == "points":
                width, height, raw = _load_instance_json(source, "points")
                points = [(float(x), float(y)) for x, y in raw]
            elif kind == "boxes":
                width, height, raw = _load_instance_json(source, "boxes")
                points = [box_center(box) for box in raw]
            else:  # masks
                stack = np.load(source)
                if stack.ndim != 3:
                    raise ExportError(f"{source}: mask stack must be (instances, H, W)")
                height, width = stack.shape[1], stack.shape[2]
                points = [mask_centroid(m) for m in stack]
            out_name = f"{n:05d}.points.json"
            write_points_file(out_dir / out_name, points, width, height)
            manifest_kind = "points"

        rel = (out_dir / out_name).relative_to(manifest_path.parent)
        entries.append(
            {"image": image, "category": category, "kind": manifest_kind, "path": str(rel)}
        )
    write_prediction_manifest(manifest_path, entries)
    return entries
