"""Adapters bridging model outputs and encoders to counteval's file formats."""

from .embeddings import EncoderError, encode_categories, export_text_embeddings, hashed_vector
from .formats import (
    ExportError,
    write_density_file,
    write_embedding_file,
    write_points_file,
    write_prediction_manifest,
)
from .mosaics import RenderError, render_mosaic, render_mosaic_images
from .predictions import box_center, export_predictions, mask_centroid

__version__ = "0.1.0"
