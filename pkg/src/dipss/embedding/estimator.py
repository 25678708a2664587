"""sklearn-style wrapper around the embedding network."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ..exceptions import MissingClass
from ..validation import check_labels, check_volumes
from ..volume import Label
from .inference import decode, encode_many
from .network import DEFAULT_CHANNELS
from .training import EmbedParams, EmbedTrainConfig, metric_class, train_embedding_arrays


class DiseaseEmbedder(TransformerMixin, BaseEstimator):
    """Disease-oriented volume embedding.

    ``fit(X, y)``: ``y`` holds metric classes (0 healthy, 1 disease) or
    category labels (``CN``, ``AD``, ``SYNTH_HEALTHY``, ...). Cases whose
    label maps to no class (``PD``) are ignored. ``transform`` returns an
    ``(n, embedding_dim)`` array, ``inverse_transform`` decodes back to
    volumes in display units.
    """

    def __init__(self, alpha=1 / 3, learning_rate=1e-3, batch_size=8, epochs=30,
                 channels=DEFAULT_CHANNELS, intensity_scale=255.0, random_state=0):
        self.alpha = alpha
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.channels = channels
        self.intensity_scale = intensity_scale
        self.random_state = random_state

    def train_config(self) -> EmbedTrainConfig:
        return EmbedTrainConfig(alpha=self.alpha, learning_rate=self.learning_rate, batch_size=self.batch_size,
                                epochs=self.epochs, seed=int(self.random_state or 0),
                                channels=tuple(self.channels), intensity_scale=self.intensity_scale)

    @staticmethod
    def _classes(y):
        out = []
        for v in y:
            if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
                if v not in (0, 1):
                    raise MissingClass(f"metric class must be 0 or 1, got {v}")
                out.append(int(v))
            else:
                c = metric_class(Label(v.value if hasattr(v, "value") else str(v)))
                out.append(-1 if c is None else c)
        return np.array(out, dtype=int)

    def fit(self, X, y, case_ids=None):
        vols = check_volumes(X)
        classes = self._classes(check_labels(y, len(vols)))
        keep = classes >= 0
        arrays = np.stack([v.voxels for v, k in zip(vols, keep) if k])
        ids = None if case_ids is None else [c for c, k in zip(case_ids, keep) if k]
        self.params_ = train_embedding_arrays(arrays, classes[keep], self.train_config(), ids)
        self.loss_log_ = self.params_.loss_log
        self.embedding_dim_ = self.params_.embedding_dim
        return self

    @classmethod
    def from_params(cls, params: EmbedParams, **kwargs) -> "DiseaseEmbedder":
        cfg = dict(params.metadata.get("config", {}))
        init = {k: cfg[k] for k in ("alpha", "learning_rate", "batch_size", "epochs") if k in cfg}
        init.update(channels=params.channels, intensity_scale=params.intensity_scale,
                    random_state=cfg.get("seed", 0))
        init.update(kwargs)
        est = cls(**init)
        est.params_ = params
        est.loss_log_ = params.loss_log
        est.embedding_dim_ = params.embedding_dim
        return est

    def transform(self, X):
        check_is_fitted(self, "params_")
        return encode_many(check_volumes(X), self.params_)

    def inverse_transform(self, Z):
        check_is_fitted(self, "params_")
        Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
        return np.stack([decode(z, self.params_).voxels for z in Z])
