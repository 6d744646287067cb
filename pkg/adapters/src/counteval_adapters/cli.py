"""Adapter CLI: export embeddings and predictions, render mosaic images.

Everything written here is a harness input; run `counteval validate` on
exported prediction manifests to confirm coverage before evaluating.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .embeddings import DEFAULT_TEMPLATE, EncoderError, HASHED_DIMENSION, export_text_embeddings
from .formats import ExportError
from .mosaics import RenderError, render_mosaic_images
from .predictions import export_predictions


def _read_categories(args) -> list[str]:
    if args.categories_file:
        lines = Path(args.categories_file).read_text(encoding="utf-8").splitlines()
        return [line.strip() for line in lines if line.strip()]
    payload = json.loads(Path(args.corpus).read_text(encoding="utf-8"))
    categories = payload.get("categories")
    if not isinstance(categories, list):
        raise ExportError(f"{args.corpus}: no 'categories' list")
    return [str(c) for c in categories]


def cmd_export_embeddings(args) -> int:
    categories = _read_categories(args)
    vectors = export_text_embeddings(
        categories,
        args.out,
        template=args.template,
        encoder=args.encoder,
        dimension=args.dimension,
    )
    dimension = len(next(iter(vectors.values())))
    print(f"wrote {args.out}: {len(vectors)} vectors of dimension {dimension}")
    return 0


def cmd_export_predictions(args) -> int:
    entries = export_predictions(args.jobs, args.out_dir, args.manifest)
    print(f"wrote {args.manifest}: {len(entries)} payloads under {args.out_dir}")
    return 0


def cmd_render_mosaics(args) -> int:
    index = render_mosaic_images(args.mosaics, args.images, args.out_dir)
    print(f"rendered {len(index)} mosaics under {args.out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="counteval-adapter",
        description="Produce counteval input files from model outputs and encoders.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("export-embeddings", help="encode category names to an embedding file")
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--categories-file", type=Path, help="text file, one category per line")
    source.add_argument("--corpus", type=Path, help="annotation JSON; uses its category universe")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--template", default=DEFAULT_TEMPLATE)
    p.add_argument("--encoder", choices=["clip", "hashed"], default="clip")
    p.add_argument("--dimension", type=int, default=HASHED_DIMENSION, help="hashed encoder width")
    p.set_defaults(func=cmd_export_embeddings)

    p = sub.add_parser("export-predictions", help="convert model outputs to payload files")
    p.add_argument("--jobs", type=Path, required=True, help="conversion job JSON file")
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--manifest", type=Path, required=True)
    p.set_defaults(func=cmd_export_predictions)

    p = sub.add_parser("render-mosaics", help="paint stacked images for a mosaic pairing file")
    p.add_argument("--mosaics", type=Path, required=True, help="pairing JSON from the harness")
    p.add_argument("--images", type=Path, required=True, help="directory of source images")
    p.add_argument("--out-dir", type=Path, required=True)
    p.set_defaults(func=cmd_render_mosaics)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ExportError, RenderError, EncoderError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
