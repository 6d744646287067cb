"""Secondary acceptance: adapter outputs round-trip through the harness.

Criterion 10: random arrays exported to CDM1 keep their totals (within f32
quantization) when the harness reloads them, and every exported manifest
passes `counteval validate`.
Criterion 11: a 45-category embedding export has 45 equal-dimension vectors
and feeds a harness semsim run without error.
"""

import json
from contextlib import contextmanager

import numpy as np

import pytest
pytest.importorskip("counteval_adapters")

from counteval_adapters.embeddings import export_text_embeddings
from counteval_adapters.formats import write_density_file
from counteval_adapters.predictions import export_predictions

from adapter_util import harness, write_json


@contextmanager
def criterion(number, name):
    try:
        yield
    except BaseException:
        print(f"ACCEPTANCE {number}: {name} ... FAIL")
        raise
    print(f"ACCEPTANCE {number}: {name} ... PASS")


def test_criterion_10_density_round_trip(tmp_path):
    with criterion(10, "CDM1 exports reload through the harness within 1e-3"):
        rng = np.random.default_rng(77)
        arrays = {}
        jobs = []
        src_dir = tmp_path / "model_out"
        src_dir.mkdir()
        images = []
        for k in range(100):
            image_id = f"img{k:03d}"
            h, w = int(rng.integers(10, 60)), int(rng.integers(10, 60))
            arr = rng.random((h, w)) * rng.choice([0.1, 1.0, 10.0])
            arrays[image_id] = arr
            np.save(src_dir / f"{k}.npy", arr)
            jobs.append(
                {
                    "image": image_id,
                    "category": "thing",
                    "kind": "density",
                    "source": f"model_out/{k}.npy",
                }
            )
            images.append(
                {"id": image_id, "width": 100, "height": 100, "dots": {"thing": [[1, 1]]}}
            )
        job_file = write_json(tmp_path / "jobs.json", jobs)
        manifest = tmp_path / "predictions.json"
        export_predictions(job_file, tmp_path / "payloads", manifest)

        corpus = write_json(
            tmp_path / "annotations.json", {"categories": ["thing"], "images": images}
        )

        check = harness(
            "validate",
            "--corpus", str(corpus),
            "--predictions", str(manifest),
            "--protocol", "distractor",
            "-o", str(tmp_path / "val"),
        )
        assert check.returncode == 0, check.stderr

        run = harness(
            "classic",
            "--corpus", str(corpus),
            "--predictions", str(manifest),
            "-o", str(tmp_path / "out"),
        )
        assert run.returncode == 0, run.stderr
        report = json.loads((tmp_path / "out" / "classic.json").read_text())
        assert len(report["pairs"]) == 100
        for pair in report["pairs"]:
            original = float(arrays[pair["image"]].sum())
            assert abs(pair["predicted"] - original) <= 1e-3


def test_criterion_10_points_exports_pass_validate(tmp_path):
    with criterion(10, "points exports pass harness validate"):
        src_dir = tmp_path / "model_out"
        src_dir.mkdir()
        write_json(
            src_dir / "boxes.json",
            {"source_width": 100, "source_height": 80, "boxes": [[10, 10, 30, 30], [40, 40, 60, 50]]},
        )
        jobs = [
            {"image": "i0", "category": "thing", "kind": "boxes", "source": "model_out/boxes.json"}
        ]
        job_file = write_json(tmp_path / "jobs.json", jobs)
        manifest = tmp_path / "predictions.json"
        export_predictions(job_file, tmp_path / "payloads", manifest)
        corpus = write_json(
            tmp_path / "annotations.json",
            {
                "categories": ["thing"],
                "images": [{"id": "i0", "width": 100, "height": 80, "dots": {"thing": [[5, 5], [6, 6]]}}],
            },
        )
        check = harness(
            "validate",
            "--corpus", str(corpus),
            "--predictions", str(manifest),
            "--protocol", "distractor",
            "-o", str(tmp_path / "val"),
        )
        assert check.returncode == 0, check.stderr


def test_criterion_11_embedding_export_feeds_semsim(tmp_path):
    with criterion(11, "45-category embedding export feeds a semsim run"):
        categories = [f"object kind {k:02d}" for k in range(45)]
        emb_path = tmp_path / "embeddings.json"
        vectors = export_text_embeddings(categories, emb_path, encoder="hashed")
        assert len(vectors) == 45
        dims = {v.shape for v in vectors.values()}
        assert len(dims) == 1

        payload = json.loads(emb_path.read_text())
        assert len(payload["vectors"]) == 45
        assert all(len(v) == payload["dimension"] for v in payload["vectors"].values())

        # corpus over the same universe; zero predictions for absent prompts
        rng = np.random.default_rng(9)
        images = []
        manifest_entries = []
        payload_dir = tmp_path / "payloads"
        payload_dir.mkdir()
        n = 0
        for i in range(3):
            present = [categories[(2 * i) % 45], categories[(2 * i + 1) % 45]]
            dots = {c: [[float(rng.integers(1, 19)), float(rng.integers(1, 19))]] for c in present}
            images.append({"id": f"m{i}", "width": 20, "height": 20, "dots": dots})
            for category in categories:
                if category in present:
                    continue
                rel = f"payloads/z{n:04d}.cdm"
                n += 1
                write_density_file(tmp_path / rel, np.zeros((8, 8)))
                manifest_entries.append(
                    {"image": f"m{i}", "category": category, "kind": "density", "path": rel}
                )
        corpus = write_json(
            tmp_path / "annotations.json", {"categories": categories, "images": images}
        )
        manifest = write_json(tmp_path / "predictions.json", manifest_entries)

        run = harness(
            "semsim",
            "--corpus", str(corpus),
            "--predictions", str(manifest),
            "--embeddings", str(emb_path),
            "-o", str(tmp_path / "out"),
        )
        assert run.returncode == 0, run.stderr
        report = json.loads((tmp_path / "out" / "semsim.json").read_text())
        assert len(report["samples"]) == 3 * 43
