"""Scanner harmonization and disease-oriented embedding of brain MR volumes."""
from .checkpoint import load_checkpoint, save_checkpoint
from .embedding import DiseaseEmbedder, EmbedParams, EmbedTrainConfig
from .phantom import STOCK_PROFILES, render_case
from .preprocess import NormalizationConfig, downsample_half, normalize_intensity
from .pss import PseudoScannerStandardizer, PssParams, PssTrainConfig, apply_pss
from .volume import CaseRecord, Volume, ingest_volume, write_volume

__version__ = "0.1.0"

__all__ = [
    "CaseRecord",
    "DiseaseEmbedder",
    "EmbedParams",
    "EmbedTrainConfig",
    "NormalizationConfig",
    "PseudoScannerStandardizer",
    "PssParams",
    "PssTrainConfig",
    "STOCK_PROFILES",
    "Volume",
    "apply_pss",
    "downsample_half",
    "load_checkpoint",
    "normalize_intensity",
    "ingest_volume",
    "render_case",
    "save_checkpoint",
    "write_volume",
]
