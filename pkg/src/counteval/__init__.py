"""Evaluation harness for open-world text-guided counting models.

The package scores model prediction files against dot-annotated ground truth:
negative-label cross-probing (NMN, PCCN), distractor tests with patch-based
counting precision/recall/F1 and GAME, classic MAE/RMSE, and a semantic-
similarity error analysis.
"""

from .corpus import (
    AnnotationRecord,
    AnnotationStore,
    CorpusError,
    PredictionStore,
    PromptSets,
    derive_prompt_sets,
    load_annotations,
    load_prediction_manifest,
    validate_corpus,
)
from .density import (
    DensityGrid,
    InstancePointList,
    MosaicManifest,
    Partition,
    PatchCounts,
    build_mosaic_manifest,
    partition_grid,
    patch_counts_from_density,
    patch_counts_from_dots,
    payload_count,
    points_to_density,
    read_cdm1,
    read_points,
    total_count,
    write_cdm1,
    write_points,
)
from .metrics import (
    ConfusionTriple,
    ImageScore,
    NegativeImageDiag,
    classic_errors,
    dataset_prf,
    game_dataset,
    image_prf,
    mosaic_closed_form,
    nmn,
    patch_confusion,
    pccn,
)
from .protocols import (
    ClassicReport,
    DistractorReport,
    MissingPredictionsError,
    MosaicPairing,
    NegativeReport,
    pair_mosaics,
    run_classic,
    run_distractor_direct,
    run_distractor_mosaic,
    run_negative_label_test,
)
from .semsim import (
    BinReport,
    EmbeddingTable,
    SemSimSample,
    bin_statistics,
    collect_samples,
    cosine_similarity,
    load_embeddings,
    max_positive_similarity,
    pearson,
)

__version__ = "0.1.0"
