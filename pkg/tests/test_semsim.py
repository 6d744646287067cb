import json
import math

import numpy as np
import pytest

from counteval.corpus import AnnotationRecord, AnnotationStore, PredictionStore
from counteval.density import DensityGrid
from counteval.protocols import MissingPredictionsError
from counteval.semsim import (
    EmbeddingTable,
    SemSimSample,
    bin_statistics,
    collect_samples,
    cosine_similarity,
    load_embeddings,
    max_positive_similarity,
    pearson,
)


def sample(sim, err, image="i", neg="n", ref="p"):
    return SemSimSample(
        image_id=image,
        negative_category=neg,
        similarity=sim,
        normalized_error=err,
        reference_category=ref,
    )


class TestCosineSimilarity:
    def test_identity(self):
        assert cosine_similarity([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == 1.0

    def test_orthogonal(self):
        assert cosine_similarity([1.0, 0.0], [0.0, 1.0]) == 0.0

    def test_worked_example(self):
        assert cosine_similarity([1.0, 1.0], [1.0, 0.0]) == pytest.approx(1 / math.sqrt(2))

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="dimension mismatch"):
            cosine_similarity([1.0, 2.0], [1.0, 2.0, 3.0])

    def test_zero_vector(self):
        with pytest.raises(ValueError, match="zero vector"):
            cosine_similarity([0.0, 0.0], [1.0, 0.0])

    def test_clamped_into_range(self):
        rng = np.random.default_rng(13)
        for _ in range(200):
            u = rng.normal(size=8)
            v = rng.normal(size=8)
            assert -1.0 <= cosine_similarity(u, v) <= 1.0


def table_from(vectors):
    dim = len(next(iter(vectors.values())))
    return EmbeddingTable(dimension=dim, vectors=vectors)


class TestMaxPositiveSimilarity:
    def test_single_positive(self):
        table = table_from({"n": [1.0, 0.0], "p": [1.0, 1.0]})
        sim, cat = max_positive_similarity("n", {"p"}, table)
        assert cat == "p"
        assert sim == pytest.approx(1 / math.sqrt(2))

    def test_picks_the_larger(self):
        table = table_from({"n": [1.0, 0.0], "far": [0.0, 1.0], "near": [1.0, 0.2]})
        sim, cat = max_positive_similarity("n", {"far", "near"}, table)
        assert cat == "near"
        assert sim > 0.9

    def test_identical_embedding_gives_one(self):
        table = table_from({"n": [2.0, 1.0], "twin": [2.0, 1.0], "other": [0.0, 1.0]})
        sim, cat = max_positive_similarity("n", {"twin", "other"}, table)
        assert (sim, cat) == (1.0, "twin")

    def test_tie_breaks_lexicographically(self):
        table = table_from({"n": [1.0, 0.0], "b": [2.0, 0.0], "a": [3.0, 0.0]})
        _, cat = max_positive_similarity("n", {"b", "a"}, table)
        assert cat == "a"

    def test_scale_invariance(self):
        rng = np.random.default_rng(19)
        base = {f"c{k}": rng.normal(size=5) for k in range(4)}
        table = table_from(base)
        scaled = table_from({k: np.asarray(v) * (1.0 + 9.0 * rng.random()) for k, v in base.items()})
        positives = {"c1", "c2", "c3"}
        _, cat_a = max_positive_similarity("c0", positives, table)
        _, cat_b = max_positive_similarity("c0", positives, scaled)
        assert cat_a == cat_b

    def test_missing_category(self):
        table = table_from({"n": [1.0, 0.0]})
        with pytest.raises(ValueError, match="missing from the embedding table"):
            max_positive_similarity("n", {"ghost"}, table)

    def test_empty_positives(self):
        table = table_from({"n": [1.0, 0.0]})
        with pytest.raises(ValueError, match="non-empty"):
            max_positive_similarity("n", frozenset(), table)


def two_image_store():
    return AnnotationStore(
        records={
            "u": AnnotationRecord("u", 20, 20, {"a": [(1.0, 1.0)] * 10}),
            "v": AnnotationRecord("v", 20, 20, {"b": [(1.0, 1.0)] * 4}),
        },
        universe=frozenset({"a", "b", "c", "d"}),
    )


def negative_predictions(store, value):
    entries = {}
    for image_id, record in store.records.items():
        for category in store.universe - record.positives:
            grid = np.zeros((8, 8))
            grid[0, 0] = value
            entries[(image_id, category)] = DensityGrid(grid)
    return PredictionStore(entries)


FOUR_CATEGORY_TABLE = EmbeddingTable(
    dimension=3,
    vectors={
        "a": [1.0, 0.0, 0.0],
        "b": [0.0, 1.0, 0.0],
        "c": [0.9, 0.1, 0.0],
        "d": [0.0, 0.9, 0.4],
    },
)


class TestCollectSamples:
    def test_zero_predictor(self):
        store = two_image_store()
        samples = collect_samples(store, negative_predictions(store, 0.0), FOUR_CATEGORY_TABLE)
        assert all(s.normalized_error == 0.0 for s in samples)

    def test_normalization_by_reference_count(self):
        store = two_image_store()
        samples = collect_samples(store, negative_predictions(store, 5.0), FOUR_CATEGORY_TABLE)
        by_key = {(s.image_id, s.negative_category): s for s in samples}
        # image u has 10 dots of its only positive, so errors normalize by 10
        assert by_key[("u", "c")].normalized_error == pytest.approx(0.5)
        assert by_key[("u", "c")].reference_category == "a"
        # image v has 4 dots of "b"
        assert by_key[("v", "d")].normalized_error == pytest.approx(1.25)

    def test_cardinality(self):
        store = two_image_store()
        samples = collect_samples(store, negative_predictions(store, 1.0), FOUR_CATEGORY_TABLE)
        assert len(samples) == 3 + 3  # each image misses three universe categories

    def test_missing_predictions_fail_fast(self):
        store = two_image_store()
        preds = negative_predictions(store, 1.0)
        entries = dict(preds.entries)
        del entries[("u", "b")]
        with pytest.raises(MissingPredictionsError):
            collect_samples(store, PredictionStore(entries), FOUR_CATEGORY_TABLE)


class TestPearson:
    def test_perfect_linearity(self):
        assert pearson([1.0, 2.0, 3.0], [3.0, 5.0, 7.0]) == 1.0

    def test_perfect_anticorrelation(self):
        assert pearson([1.0, 2.0, 3.0], [-1.0, -2.0, -3.0]) == -1.0

    def test_worked_example(self):
        assert pearson([1.0, 2.0, 3.0], [1.0, 3.0, 2.0]) == 0.5

    def test_zero_variance_is_undefined(self):
        assert pearson([1.0, 1.0, 1.0], [1.0, 2.0, 3.0]) is None
        assert pearson([1.0, 2.0, 3.0], [5.0, 5.0, 5.0]) is None

    def test_self_correlation(self):
        rng = np.random.default_rng(3)
        xs = rng.random(50)
        assert pearson(xs, xs) == pytest.approx(1.0, abs=1e-12)

    def test_errors(self):
        with pytest.raises(ValueError):
            pearson([1.0], [1.0])
        with pytest.raises(ValueError):
            pearson([1.0, 2.0], [1.0, 2.0, 3.0])


class TestBinStatistics:
    def test_degenerate_range(self):
        report = bin_statistics([sample(0.4, e) for e in (1.0, 2.0)])
        assert report.degenerate_range
        assert len(report.bins) == 1
        assert report.bins[0].count == 2

    def test_even_spread_two_per_bin(self):
        sims = np.linspace(0.0, 1.0, 10)
        report = bin_statistics([sample(float(s), 1.0) for s in sims])
        assert [b.count for b in report.bins] == [2, 2, 2, 2, 2]
        assert report.edges[0] == 0.0 and report.edges[-1] == 1.0

    def test_quartiles_linear_interpolation(self):
        report = bin_statistics([sample(0.5, e) for e in (1.0, 2.0, 3.0, 4.0)] + [sample(0.0, 0.0)])
        top = report.bins[-1]
        assert top.count == 4
        assert top.q1 == pytest.approx(1.75)
        assert top.median == pytest.approx(2.5)
        assert top.q3 == pytest.approx(3.25)
        assert top.mean == pytest.approx(2.5)

    def test_counts_always_sum_to_sample_count(self):
        rng = np.random.default_rng(445)
        for _ in range(300):
            n = int(rng.integers(1, 40))
            sims = rng.choice([rng.random(), rng.random()], size=n) if n > 1 else rng.random(1)
            samples = [sample(float(s), float(rng.random() * 3)) for s in np.atleast_1d(sims)]
            report = bin_statistics(samples)
            assert sum(b.count for b in report.bins) == n

    def test_empty_bins_have_no_statistics(self):
        report = bin_statistics([sample(0.0, 1.0), sample(1.0, 2.0)])
        middle = report.bins[2]
        assert middle.count == 0
        assert middle.mean is None and middle.median is None

    def test_fixed_range(self):
        report = bin_statistics([sample(0.45, 1.0)], bin_range=(0.0, 1.0))
        assert report.edges[0] == 0.0 and report.edges[-1] == 1.0
        assert report.bins[2].count == 1

    def test_fixed_range_clamps_outliers(self):
        report = bin_statistics([sample(-0.5, 1.0), sample(2.0, 1.0)], bin_range=(0.0, 1.0))
        assert report.bins[0].count == 1
        assert report.bins[-1].count == 1

    def test_empty_samples_rejected(self):
        with pytest.raises(ValueError):
            bin_statistics([])


class TestEmbeddingTable:
    def test_dimension_enforced(self):
        with pytest.raises(ValueError, match="dimension"):
            EmbeddingTable(dimension=3, vectors={"a": [1.0, 2.0]})

    def test_zero_vector_rejected(self):
        with pytest.raises(ValueError, match="zero embedding"):
            EmbeddingTable(dimension=2, vectors={"a": [0.0, 0.0]})

    def test_load_from_file(self, tmp_path):
        path = tmp_path / "emb.json"
        path.write_text(
            json.dumps(
                {"dimension": 2, "template": "a photo of", "vectors": {"a": [1.0, 0.0]}}
            )
        )
        table = load_embeddings(path)
        assert table.dimension == 2
        assert table.template == "a photo of"
        assert table.vectors["a"].tolist() == [1.0, 0.0]

    def test_load_rejects_missing_keys(self, tmp_path):
        path = tmp_path / "emb.json"
        path.write_text("{}")
        with pytest.raises(ValueError, match="needs 'dimension'"):
            load_embeddings(path)
