"""F-StrIPE: structure-informed positional encoding for linear attention."""
from .attention import (AttentionConfig, AttentionInputs, assemble_pe_qk, exact_rpe_attention, exact_rpe_logits,
                        feature_map, fstripe_attention, init_attention_params, kernel_attention, linear_attention,
                        softmax_attention)
from .errors import DivergenceError, InvalidDataError, NumericError, ParseError
from .features import (FourierParams, PositionalFeatures, closed_form_pd, positional_product, rff_features,
                       sample_gaussian, sff_features, sinusoid_matrix)
from .grid import StructuralGrid, grid_from_labels, linear_grid, load_labels, structural_grid
from .metrics import chroma_similarity, evaluate, grooving_similarity, note_density_distance, onsets, ssmd

__version__ = "0.1.0"

__all__ = [
    "AttentionConfig", "AttentionInputs", "assemble_pe_qk", "exact_rpe_attention", "exact_rpe_logits",
    "feature_map", "fstripe_attention", "init_attention_params", "kernel_attention", "linear_attention",
    "softmax_attention", "DivergenceError", "InvalidDataError", "NumericError", "ParseError", "FourierParams",
    "PositionalFeatures", "closed_form_pd", "positional_product", "rff_features", "sample_gaussian",
    "sff_features", "sinusoid_matrix", "StructuralGrid", "grid_from_labels", "linear_grid", "load_labels",
    "structural_grid", "chroma_similarity", "evaluate", "grooving_similarity", "note_density_distance", "onsets",
    "ssmd",
]
