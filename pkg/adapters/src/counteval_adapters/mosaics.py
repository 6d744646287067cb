"""Render pixel images for mosaic manifests produced by the harness.

The harness's distractor mosaic run writes a pairing file with per-mosaic
geometry (common width, scales, split row). This module realizes that
geometry on actual image files so the stacked pictures can be fed to a
counting model: each half is bilinearly resized to its exact target shape
and the two are stacked vertically.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp", ".webp")


class RenderError(ValueError):
    """Raised when a mosaic cannot be rendered from the available images."""


def _find_image(image_dir: Path, image_id: str) -> Path:
    for ext in IMAGE_EXTENSIONS:
        candidate = image_dir / f"{image_id}{ext}"
        if candidate.exists():
            return candidate
    raise RenderError(f"no image file for id {image_id!r} under {image_dir}")


def _safe_name(mosaic_id: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in mosaic_id)


def render_mosaic(manifest: dict, image_dir: Path, out_path: Path) -> None:
    """Stack the scaled positive image over the scaled negative image.

    The positive half is resized to exactly (common_width, split_row) and the
    negative half to (common_width, mosaic_height - split_row), so the output
    dimensions match the manifest geometry bit-for-bit.
    """
    width = int(manifest["common_width"])
    split = int(manifest["split_row"])
    height = int(manifest["mosaic_height"])
    top = Image.open(_find_image(image_dir, manifest["positive_image_id"])).convert("RGB")
    bottom = Image.open(_find_image(image_dir, manifest["negative_image_id"])).convert("RGB")
    top = top.resize((width, split), Image.BILINEAR)
    bottom = bottom.resize((width, height - split), Image.BILINEAR)
    stacked = np.vstack([np.asarray(top), np.asarray(bottom)])
    Image.fromarray(stacked).save(out_path)


def render_mosaic_images(
    pairing_file: str | Path, image_dir: str | Path, out_dir: str | Path
) -> dict[str, str]:
    """Render every mosaic in a pairing file; returns mosaic id -> filename.

    The mapping is also written as index.json next to the rendered images.
    """
    payload = json.loads(Path(pairing_file).read_text(encoding="utf-8"))
    manifests = payload.get("manifests")
    if not isinstance(manifests, list):
        raise RenderError(f"{pairing_file}: no 'manifests' list")
    image_dir = Path(image_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    index = {}
    for manifest in manifests:
        name = _safe_name(manifest["mosaic_id"]) + ".png"
        render_mosaic(manifest, image_dir, out_dir / name)
        index[manifest["mosaic_id"]] = name
    (out_dir / "index.json").write_text(
        json.dumps(index, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    return index
