from .extract import ExtractionFailure, FeatureVector, extract, extract_roi
from .firstorder import first_order_features
from .matrices import DIRECTIONS_2D, DIRECTIONS_3D, TextureMatrix, build_texture_matrix
from .registry import FAMILIES, FEATURE_IDS, N_FEATURES
from .texture import UndefinedFeatureWarning, aggregate_features

__all__ = [
    "DIRECTIONS_2D",
    "DIRECTIONS_3D",
    "ExtractionFailure",
    "FAMILIES",
    "FEATURE_IDS",
    "FeatureVector",
    "N_FEATURES",
    "TextureMatrix",
    "UndefinedFeatureWarning",
    "aggregate_features",
    "build_texture_matrix",
    "extract",
    "extract_roi",
    "first_order_features",
]
