import json
import struct

import numpy as np
import pytest

pytest.importorskip("counteval_adapters")

from counteval_adapters.formats import (
    ExportError,
    write_density_file,
    write_points_file,
    write_prediction_manifest,
)
from counteval_adapters.predictions import box_center, export_predictions, mask_centroid

from adapter_util import write_json


def parse_cdm1(path):
    raw = path.read_bytes()
    assert raw[:4] == b"CDM1"
    height, width = struct.unpack("<II", raw[4:12])
    values = np.frombuffer(raw, dtype="<f4", offset=12).reshape(height, width)
    return values


class TestGeometryHelpers:
    def test_box_center(self):
        assert box_center((10, 10, 30, 30)) == (20.0, 20.0)

    def test_degenerate_box(self):
        with pytest.raises(ExportError):
            box_center((30, 10, 10, 30))

    def test_mask_centroid_single_pixel(self):
        mask = np.zeros((20, 20))
        mask[7, 3] = 1
        assert mask_centroid(mask) == (3.0, 7.0)

    def test_mask_centroid_block(self):
        mask = np.zeros((20, 20))
        mask[4:8, 2:6] = 1
        assert mask_centroid(mask) == (3.5, 5.5)

    def test_empty_mask(self):
        with pytest.raises(ExportError, match="empty mask"):
            mask_centroid(np.zeros((5, 5)))


class TestFormatWriters:
    def test_density_file_layout(self, tmp_path):
        path = tmp_path / "zero.cdm"
        write_density_file(path, np.zeros((3, 5)))
        values = parse_cdm1(path)
        assert values.shape == (3, 5)
        assert values.sum() == 0.0

    def test_density_total_survives_f32(self, tmp_path):
        rng = np.random.default_rng(4)
        arr = rng.random((50, 60))
        arr *= 42.0 / arr.sum()
        path = tmp_path / "m.cdm"
        write_density_file(path, arr)
        assert abs(float(parse_cdm1(path).sum()) - 42.0) <= 1e-3

    def test_negative_density_rejected(self, tmp_path):
        with pytest.raises(ExportError, match="negative"):
            write_density_file(tmp_path / "bad.cdm", np.array([[0.0, -1.0]]))

    def test_wrong_rank_rejected(self, tmp_path):
        with pytest.raises(ExportError, match="2-D"):
            write_density_file(tmp_path / "bad.cdm", np.zeros(4))

    def test_points_bounds_checked(self, tmp_path):
        with pytest.raises(ExportError, match="outside"):
            write_points_file(tmp_path / "p.json", [(101.0, 5.0)], 100, 100)

    def test_manifest_rejects_bad_kind(self, tmp_path):
        with pytest.raises(ExportError, match="unknown payload kind"):
            write_prediction_manifest(
                tmp_path / "m.json",
                [{"image": "i", "category": "c", "kind": "boxes", "path": "x"}],
            )


class TestExportPredictions:
    def test_mixed_batch(self, tmp_path):
        src = tmp_path / "model_out"
        src.mkdir()
        np.save(src / "density.npy", np.full((10, 10), 0.05))
        write_json(
            src / "boxes.json",
            {"source_width": 100, "source_height": 100, "boxes": [[10, 10, 30, 30]]},
        )
        write_json(
            src / "points.json",
            {"source_width": 50, "source_height": 50, "points": [[1, 2], [3, 4]]},
        )
        masks = np.zeros((2, 40, 40))
        masks[0, 10, 10] = 1
        masks[1, 20:22, 30:32] = 1
        np.save(src / "masks.npy", masks)
        jobs = write_json(
            tmp_path / "jobs.json",
            [
                {"image": "i0", "category": "a", "kind": "density", "source": "model_out/density.npy"},
                {"image": "i0", "category": "b", "kind": "boxes", "source": "model_out/boxes.json"},
                {"image": "i1", "category": "a", "kind": "points", "source": "model_out/points.json"},
                {"image": "i1", "category": "b", "kind": "masks", "source": "model_out/masks.npy"},
            ],
        )
        manifest_path = tmp_path / "predictions.json"
        entries = export_predictions(jobs, tmp_path / "payloads", manifest_path)
        assert [e["kind"] for e in entries] == ["density", "points", "points", "points"]

        manifest = json.loads(manifest_path.read_text())
        assert len(manifest) == 4
        boxes_entry = next(e for e in manifest if e["category"] == "b" and e["image"] == "i0")
        boxes_payload = json.loads((tmp_path / boxes_entry["path"]).read_text())
        assert boxes_payload["points"] == [[20.0, 20.0]]

        masks_entry = next(e for e in manifest if e["category"] == "b" and e["image"] == "i1")
        masks_payload = json.loads((tmp_path / masks_entry["path"]).read_text())
        assert masks_payload["source_width"] == 40
        assert masks_payload["points"] == [[10.0, 10.0], [30.5, 20.5]]

    def test_duplicate_jobs_rejected(self, tmp_path):
        src = tmp_path / "m"
        src.mkdir()
        np.save(src / "d.npy", np.zeros((4, 4)))
        job = {"image": "i", "category": "c", "kind": "density", "source": "m/d.npy"}
        jobs = write_json(tmp_path / "jobs.json", [job, job])
        with pytest.raises(ExportError, match="duplicate job"):
            export_predictions(jobs, tmp_path / "out", tmp_path / "preds.json")

    def test_unknown_kind_rejected(self, tmp_path):
        jobs = write_json(
            tmp_path / "jobs.json",
            [{"image": "i", "category": "c", "kind": "heatmap", "source": "x"}],
        )
        with pytest.raises(ExportError, match="unknown kind"):
            export_predictions(jobs, tmp_path / "out", tmp_path / "preds.json")

    def test_negative_model_output_rejected(self, tmp_path):
        src = tmp_path / "m"
        src.mkdir()
        np.save(src / "d.npy", np.array([[-0.5]]))
        jobs = write_json(
            tmp_path / "jobs.json",
            [{"image": "i", "category": "c", "kind": "density", "source": "m/d.npy"}],
        )
        with pytest.raises(ExportError, match="negative"):
            export_predictions(jobs, tmp_path / "out", tmp_path / "preds.json")
