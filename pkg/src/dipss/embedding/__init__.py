from .estimator import DiseaseEmbedder
from .inference import EmbedResult, Embedding, decode, embed_all, encode, encode_many
from .losses import (
    ExemplarSet,
    cae_loss,
    metric_loss,
    metric_probability,
    probabilities_from_distances,
    reconstruction_loss,
    squared_distances,
)
from .network import CAE3d, embedding_size
from .store import load_store, save_store, store_matrix
from .training import EmbedParams, EmbedTrainConfig, metric_class, train_embedding, train_embedding_arrays

__all__ = [
    "CAE3d",
    "DiseaseEmbedder",
    "EmbedParams",
    "EmbedResult",
    "EmbedTrainConfig",
    "Embedding",
    "ExemplarSet",
    "cae_loss",
    "decode",
    "embed_all",
    "embedding_size",
    "encode",
    "encode_many",
    "load_store",
    "metric_class",
    "metric_loss",
    "metric_probability",
    "probabilities_from_distances",
    "reconstruction_loss",
    "save_store",
    "squared_distances",
    "store_matrix",
    "train_embedding",
    "train_embedding_arrays",
]
