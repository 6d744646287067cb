"""Category text-embedding export.

Two encoders:

- "clip": the CLIP ViT-B/32 text tower via transformers. Needs the model
  weights locally or a reachable hub; loading failures raise EncoderError.
- "hashed": a deterministic character-n-gram feature hasher. No ML stack,
  identical bytes on every machine; meant for harness plumbing, tests, and
  air-gapped runs, not for semantic fidelity.

Both prepend the prompt template ("a photo of" by default) to each category
name before encoding, and both are deterministic: the same category always
yields the same vector bytes.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np

from .formats import ExportError, write_embedding_file

DEFAULT_TEMPLATE = "a photo of"
CLIP_MODEL = "openai/clip-vit-base-patch32"
HASHED_DIMENSION = 64


class EncoderError(RuntimeError):
    """The requested text encoder is unavailable or failed to load."""


def hashed_vector(text: str, dimension: int = HASHED_DIMENSION) -> np.ndarray:
    """Signed feature-hash of character bigrams and trigrams, L2-normalized."""
    if not text:
        raise ExportError("cannot embed empty text")
    vec = np.zeros(dimension, dtype=np.float64)
    padded = f"\x02{text}\x03"
    for size in (2, 3):
        for i in range(len(padded) - size + 1):
            digest = hashlib.sha256(padded[i : i + size].encode("utf-8")).digest()
            index = int.from_bytes(digest[:4], "little") % dimension
            vec[index] += 1.0 if digest[4] % 2 == 0 else -1.0
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:  # all signs cancelled; keep the vector usable
        vec[0] = 1.0
        norm = 1.0
    return vec / norm


def _clip_vectors(texts: list[str], model_name: str = CLIP_MODEL) -> np.ndarray:
    try:
        import torch
        from transformers import CLIPModel, CLIPTokenizer
    except ImportError as exc:
        raise EncoderError(f"transformers/torch not installed: {exc}") from exc
    try:
        tokenizer = CLIPTokenizer.from_pretrained(model_name)
        model = CLIPModel.from_pretrained(model_name)
    except Exception as exc:
        raise EncoderError(f"cannot load text encoder {model_name!r}: {exc}") from exc
    model.eval()
    with torch.no_grad():
        tokens = tokenizer(texts, padding=True, return_tensors="pt")
        features = model.get_text_features(**tokens)
    return features.cpu().numpy().astype(np.float64)


def encode_categories(
    categories: list[str],
    template: str = DEFAULT_TEMPLATE,
    encoder: str = "clip",
    dimension: int = HASHED_DIMENSION,
) -> dict[str, np.ndarray]:
    """One vector per distinct category, template prepended before encoding."""
    unique = sorted({c for c in categories})
    if not unique:
        raise ExportError("category list is empty")
    for name in unique:
        if not name or not name.strip():
            raise ExportError("category names must be non-empty")
    texts = [f"{template} {name}".strip() for name in unique]
    if encoder == "hashed":
        return {name: hashed_vector(text, dimension) for name, text in zip(unique, texts)}
    if encoder == "clip":
        matrix = _clip_vectors(texts)
        return {name: matrix[i] for i, name in enumerate(unique)}
    raise ExportError(f"unknown encoder {encoder!r}")


def export_text_embeddings(
    categories: list[str],
    out_path: str | Path,
    *,
    template: str = DEFAULT_TEMPLATE,
    encoder: str = "clip",
    dimension: int = HASHED_DIMENSION,
) -> dict[str, np.ndarray]:
    """Encode categories and write the harness embedding file."""
    vectors = encode_categories(categories, template=template, encoder=encoder, dimension=dimension)
    write_embedding_file(out_path, vectors, template=template)
    return vectors
