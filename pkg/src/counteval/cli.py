"""Batch command-line interface and deterministic report emission.

Subcommands: validate, negative, distractor, classic, semsim, convert-points,
all. Every JSON report embeds a schema version and the run configuration;
reruns with identical inputs produce byte-identical files (sorted keys,
canonical float formatting, fixed line endings).

Exit codes: 0 success, 2 validation/configuration failure, 3 I/O failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

from .corpus import (
    AnnotationStore,
    CorpusError,
    PredictionStore,
    load_annotations,
    load_prediction_manifest,
    validate_corpus,
)
from .density import (
    DensityFormatError,
    mosaic_manifest_to_dict,
    points_to_density,
    read_points,
    write_cdm1,
)
from .protocols import (
    ClassicReport,
    DistractorReport,
    MissingPredictionsError,
    MosaicPairScore,
    NegativeReport,
    pair_mosaics,
    run_classic,
    run_distractor_direct,
    run_distractor_mosaic,
    run_negative_label_test,
)
from .semsim import bin_statistics, collect_samples, load_embeddings, pearson

SCHEMA_VERSION = 1
ENV_OUTPUT_DIR = "COUNTEVAL_OUTPUT_DIR"

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_IO = 3

SUMMARY_METRICS = ("NMN", "PCCN", "CntP", "CntR", "CntF1", "GAME", "MAE", "RMSE")


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _config_dict(args, **extra) -> dict:
    config = {
        "corpus": str(args.corpus),
        "predictions": str(args.predictions),
    }
    config.update(extra)
    return config


def negative_report_to_dict(report: NegativeReport, config: dict) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "config": config,
        "nmn": report.nmn,
        "pccn": report.pccn,
        "images": [
            {
                "image": diag.image_id,
                "total_true": diag.total_true,
                "negative_counts": dict(diag.negative_counts),
                "d_pos": diag.d_pos,
                "d_neg": diag.d_neg,
                "pccn_hit": diag.pccn_hit,
            }
            for diag in report.images
        ],
        "skipped": [{"image": s.image_id, "reason": s.reason} for s in report.skipped],
    }


def distractor_report_to_dict(report: DistractorReport, config: dict) -> dict:
    pairs = []
    for pair in report.pairs:
        row = {
            "category": pair.category,
            "cntp": pair.score.cntp,
            "cntr": pair.score.cntr,
            "cntf1": pair.score.cntf1,
            "game": pair.score.game,
            "tp": pair.score.tp,
            "fp": pair.score.fp,
            "fn": pair.score.fn,
        }
        if isinstance(pair, MosaicPairScore):
            row["mosaic"] = pair.mosaic_id
            row["positive_image"] = pair.positive_image_id
            row["negative_image"] = pair.negative_image_id
            if pair.halves is not None:
                row["halves"] = {
                    "pred_top": pair.halves.pred_top,
                    "pred_bottom": pair.halves.pred_bottom,
                    "truth_top": pair.halves.truth_top,
                    "closed_cntp": pair.halves.closed_cntp,
                    "closed_cntr": pair.halves.closed_cntr,
                    "twohalf_cntp": pair.halves.twohalf.cntp,
                    "twohalf_cntr": pair.halves.twohalf.cntr,
                    "twohalf_cntf1": pair.halves.twohalf.cntf1,
                }
        else:
            row["image"] = pair.image_id
        pairs.append(row)
    return {
        "schema_version": SCHEMA_VERSION,
        "config": config,
        "mode": report.mode,
        "level": report.level,
        "aggregation": report.aggregation,
        "cntp": report.cntp,
        "cntr": report.cntr,
        "cntf1": report.cntf1,
        "game": report.game,
        "pairs": pairs,
    }


def classic_report_to_dict(report: ClassicReport, config: dict) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "config": config,
        "mae": report.mae,
        "rmse": report.rmse,
        "pairs": [
            {
                "image": pair.image_id,
                "category": pair.category,
                "predicted": pair.predicted,
                "truth": pair.truth,
            }
            for pair in report.pairs
        ],
    }


def emit_markdown_table(rows: list[dict], level: int = 1) -> str:
    """Render summary rows as a fixed-order markdown table, two decimals."""
    if not rows:
        raise ValueError("need at least one summary row")
    headers = ["Model", "NMN", "PCCN", "CntP", "CntR", "CntF1", f"GAME({level})", "MAE", "RMSE"]
    lines = [
        "| " + " | ".join(headers) + " |",
        "|" + "|".join("---" for _ in headers) + "|",
    ]
    for row in rows:
        cells = [str(row["model"])]
        for key in SUMMARY_METRICS:
            value = row.get(key)
            cells.append("" if value is None else f"{value:.2f}")
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def write_summary_csv(path: Path, rows: list[dict], level: int = 1) -> None:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["model", "NMN", "PCCN", "CntP", "CntR", "CntF1", f"GAME({level})", "MAE", "RMSE"])
    for row in rows:
        writer.writerow(
            [row["model"]]
            + [("" if row.get(key) is None else repr(float(row[key]))) for key in SUMMARY_METRICS]
        )
    path.write_text(buffer.getvalue(), encoding="utf-8")


def _output_dir(args) -> Path:
    override = os.environ.get(ENV_OUTPUT_DIR)
    out = Path(override) if override else Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_inputs(args, *, protocol_ids=None) -> tuple[AnnotationStore, PredictionStore]:
    store = load_annotations(args.corpus)
    preds = load_prediction_manifest(args.predictions, store, known_ids=protocol_ids)
    return store, preds


# -- subcommands -----------------------------------------------------------------


def cmd_validate(args) -> int:
    store = load_annotations(args.corpus)
    preds = load_prediction_manifest(args.predictions, store=None)
    protocols = ["negative", "distractor"] if args.protocol == "both" else [args.protocol]
    result = {"schema_version": SCHEMA_VERSION, "config": _config_dict(args), "protocols": {}}
    can_run = True
    for protocol in protocols:
        report = validate_corpus(store, preds, protocol)
        can_run = can_run and report.can_run
        result["protocols"][protocol] = {
            "missing": [list(k) for k in report.missing],
            "unused": [list(k) for k in report.unused],
            "unknown": [list(k) for k in report.unknown],
            "can_run": report.can_run,
        }
    out = _output_dir(args)
    _write_json(out / "validation.json", result)
    for protocol in protocols:
        block = result["protocols"][protocol]
        status = "ok" if block["can_run"] else f"{len(block['missing'])} missing"
        print(f"validate[{protocol}]: {status}")
        for image, category in block["missing"]:
            print(f"  missing: ({image!r}, {category!r})")
    return EXIT_OK if can_run else EXIT_VALIDATION


def _negative(args, store, preds) -> dict:
    report = run_negative_label_test(store, preds)
    payload = negative_report_to_dict(report, _config_dict(args))
    _write_json(_output_dir(args) / "negative.json", payload)
    return payload


def cmd_negative(args) -> int:
    store, preds = _load_inputs(args)
    payload = _negative(args, store, preds)
    print(f"NMN {payload['nmn']:.4f}  PCCN {payload['pccn']:.2f}")
    return EXIT_OK


def _distractor(args, store, preds=None, manifest_path=None) -> dict:
    manifest_path = manifest_path if manifest_path is not None else args.predictions
    config = _config_dict(
        args, mode=args.mode, level=args.level, aggregation="image" if args.per_image else "pair"
    )
    out = _output_dir(args)
    if args.mode == "direct":
        if preds is None:
            preds = load_prediction_manifest(manifest_path, store)
        report = run_distractor_direct(
            store, preds, args.level, per_image=args.per_image, jobs=args.jobs
        )
    else:
        config["seed"] = args.seed
        config["predictions"] = str(manifest_path)
        pairing = pair_mosaics(store, args.seed)
        _write_json(
            out / f"mosaics_seed{args.seed}.json",
            {
                "schema_version": SCHEMA_VERSION,
                "seed": args.seed,
                "manifests": [mosaic_manifest_to_dict(m) for m in pairing.manifests],
                "skipped": [{"image": s.image_id, "reason": s.reason} for s in pairing.skipped],
            },
        )
        mosaic_ids = {m.mosaic_id for m in pairing.manifests}
        preds = load_prediction_manifest(manifest_path, known_ids=mosaic_ids)
        report = run_distractor_mosaic(
            pairing.manifests, preds, args.level, per_image=args.per_image, jobs=args.jobs
        )
    payload = distractor_report_to_dict(report, config)
    _write_json(out / f"distractor_L{args.level}.json", payload)
    return payload


def cmd_distractor(args) -> int:
    store = load_annotations(args.corpus)
    payload = _distractor(args, store)
    print(
        f"CntP {payload['cntp']:.4f}  CntR {payload['cntr']:.4f}  "
        f"CntF1 {payload['cntf1']:.4f}  GAME({args.level}) {payload['game']:.4f}"
    )
    return EXIT_OK


def _classic(args, store, preds) -> dict:
    report = run_classic(store, preds)
    payload = classic_report_to_dict(report, _config_dict(args))
    _write_json(_output_dir(args) / "classic.json", payload)
    return payload


def cmd_classic(args) -> int:
    store, preds = _load_inputs(args)
    payload = _classic(args, store, preds)
    print(f"MAE {payload['mae']:.4f}  RMSE {payload['rmse']:.4f}")
    return EXIT_OK


def _semsim(args, store, preds) -> dict:
    table = load_embeddings(args.embeddings)
    samples = collect_samples(store, preds, table)
    bin_range = tuple(args.bin_range) if args.bin_range else None
    bins = bin_statistics(samples, bin_range=bin_range)
    correlation = pearson(
        [s.similarity for s in samples], [s.normalized_error for s in samples]
    ) if len(samples) >= 2 else None
    config = _config_dict(args, embeddings=str(args.embeddings))
    if bin_range:
        config["bin_range"] = list(bin_range)
    payload = {
        "schema_version": SCHEMA_VERSION,
        "config": config,
        "pearson": correlation,
        "pearson_defined": correlation is not None,
        "degenerate_range": bins.degenerate_range,
        "bin_edges": list(bins.edges),
        "bins": [
            {
                "lo": b.lo,
                "hi": b.hi,
                "count": b.count,
                "mean": b.mean,
                "median": b.median,
                "q1": b.q1,
                "q3": b.q3,
            }
            for b in bins.bins
        ],
        "samples": [
            {
                "image": s.image_id,
                "negative_category": s.negative_category,
                "similarity": s.similarity,
                "normalized_error": s.normalized_error,
                "reference_category": s.reference_category,
            }
            for s in samples
        ],
    }
    out = _output_dir(args)
    _write_json(out / "semsim.json", payload)
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["bin_lo", "bin_hi", "count", "mean", "median", "q1", "q3"])
    for b in bins.bins:
        writer.writerow(
            [repr(float(b.lo)), repr(float(b.hi)), b.count]
            + [("" if v is None else repr(float(v))) for v in (b.mean, b.median, b.q1, b.q3)]
        )
    (out / "semsim_bins.csv").write_text(buffer.getvalue(), encoding="utf-8")
    return payload


def cmd_semsim(args) -> int:
    store, preds = _load_inputs(args)
    payload = _semsim(args, store, preds)
    shown = "undefined" if payload["pearson"] is None else f"{payload['pearson']:.4f}"
    print(f"pearson {shown}  samples {len(payload['samples'])}")
    return EXIT_OK


def cmd_convert_points(args) -> int:
    points = read_points(args.points_file)
    write_cdm1(args.out_file, points_to_density(points))
    print(f"wrote {args.out_file}")
    return EXIT_OK


def cmd_all(args) -> int:
    if args.mode == "mosaic" and not args.mosaic_predictions:
        raise ValueError("--mode mosaic needs --mosaic-predictions (mosaic-keyed manifest)")
    store = load_annotations(args.corpus)
    preds = load_prediction_manifest(args.predictions, store)
    label = args.label or Path(args.predictions).stem

    negative = _negative(args, store, preds)
    if args.mode == "direct":
        distractor = _distractor(args, store, preds)
    else:
        distractor = _distractor(args, store, manifest_path=args.mosaic_predictions)
    classic = _classic(args, store, preds)
    row = {
        "model": label,
        "NMN": negative["nmn"],
        "PCCN": negative["pccn"],
        "CntP": distractor["cntp"],
        "CntR": distractor["cntr"],
        "CntF1": distractor["cntf1"],
        "GAME": distractor["game"],
        "MAE": classic["mae"],
        "RMSE": classic["rmse"],
    }
    if args.embeddings:
        _semsim(args, store, preds)
    out = _output_dir(args)
    write_summary_csv(out / "summary.csv", [row], level=args.level)
    (out / "summary.md").write_text(emit_markdown_table([row], level=args.level), encoding="utf-8")
    print(emit_markdown_table([row], level=args.level), end="")
    return EXIT_OK


# -- argument parsing --------------------------------------------------------------


def _add_io_args(parser, *, predictions=True, output=True):
    parser.add_argument("--corpus", required=True, type=Path, help="annotation JSON file")
    if predictions:
        parser.add_argument(
            "--predictions", required=True, type=Path, help="prediction manifest JSON file"
        )
    if output:
        parser.add_argument(
            "-o",
            "--output",
            type=Path,
            default=Path("reports"),
            help=f"report directory (overridden by ${ENV_OUTPUT_DIR})",
        )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="counteval",
        description="Evaluation harness for text-guided class-agnostic counting predictions.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check prediction coverage against a protocol")
    _add_io_args(p)
    p.add_argument("--protocol", choices=["negative", "distractor", "both"], default="both")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("negative", help="run the negative-label test")
    _add_io_args(p)
    p.set_defaults(func=cmd_negative)

    p = sub.add_parser("distractor", help="run the distractor test")
    _add_io_args(p)
    p.add_argument("--mode", choices=["direct", "mosaic"], default="direct")
    p.add_argument("--level", type=int, default=1, help="grid level L in [0, 6] (default 1)")
    p.add_argument("--seed", type=int, default=0, help="mosaic pairing seed")
    p.add_argument("--per-image", action="store_true", help="average per image, not per pair")
    p.add_argument("--jobs", type=int, default=1, help="worker threads for pair scoring")
    p.set_defaults(func=cmd_distractor)

    p = sub.add_parser("classic", help="whole-image MAE and RMSE")
    _add_io_args(p)
    p.set_defaults(func=cmd_classic)

    p = sub.add_parser("semsim", help="semantic-similarity error analysis")
    _add_io_args(p)
    p.add_argument("--embeddings", required=True, type=Path, help="category embedding JSON file")
    p.add_argument(
        "--bin-range",
        nargs=2,
        type=float,
        metavar=("LO", "HI"),
        help="fixed similarity bin range instead of the observed one",
    )
    p.set_defaults(func=cmd_semsim)

    p = sub.add_parser("convert-points", help="rasterize a points file to a CDM1 density file")
    p.add_argument("points_file", type=Path)
    p.add_argument("out_file", type=Path)
    p.set_defaults(func=cmd_convert_points)

    p = sub.add_parser("all", help="run every applicable protocol and write a summary")
    _add_io_args(p)
    p.add_argument("--mode", choices=["direct", "mosaic"], default="direct")
    p.add_argument(
        "--mosaic-predictions",
        type=Path,
        help="mosaic-keyed prediction manifest (required with --mode mosaic)",
    )
    p.add_argument("--level", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--per-image", action="store_true")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--embeddings", type=Path, help="optional embedding file; enables semsim")
    p.add_argument("--label", help="model label for the summary row (default: manifest stem)")
    p.add_argument(
        "--bin-range", nargs=2, type=float, metavar=("LO", "HI"), help="semsim bin range"
    )
    p.set_defaults(func=cmd_all)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "level", None) is not None and not 0 <= args.level <= 6:
        parser.error("--level must be in [0, 6]")
    for attr in ("corpus", "predictions", "mosaic_predictions", "embeddings", "points_file"):
        path = getattr(args, attr, None)
        if path is not None and not Path(path).exists():
            print(f"error: {attr.replace('_', ' ')} file {path} does not exist", file=sys.stderr)
            return EXIT_VALIDATION
    try:
        return args.func(args)
    except MissingPredictionsError as exc:
        print("error: prediction coverage incomplete", file=sys.stderr)
        for image, category in exc.missing:
            print(f"  missing: ({image!r}, {category!r})", file=sys.stderr)
        return EXIT_VALIDATION
    except (CorpusError, DensityFormatError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
