"""Reconstruction and exemplar metric objectives of the embedding network.

numpy inputs give float64 results; torch inputs give differentiable tensors.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from ..exceptions import ClassOutOfRange, DimensionMismatch, ShapeIncompatible
from ..volume import Volume

DEFAULT_ALPHA = 1.0 / 3.0


@dataclass(frozen=True)
class ExemplarSet:
    """One exemplar embedding per class, rows ordered by ``class_ids``."""

    vectors: object
    class_ids: tuple = (0, 1)

    def __post_init__(self):
        ids = tuple(int(c) for c in self.class_ids)
        object.__setattr__(self, "class_ids", ids)
        if len(ids) < 2:
            raise ValueError("need exemplars for at least two classes")
        if len(set(ids)) != len(ids):
            raise ValueError(f"exemplar classes must be distinct, got {ids}")
        if not isinstance(self.vectors, torch.Tensor):
            object.__setattr__(self, "vectors", np.asarray(self.vectors, dtype=np.float64))
        if self.vectors.ndim != 2 or self.vectors.shape[0] != len(ids):
            raise DimensionMismatch(f"expected ({len(ids)}, d) exemplar matrix, got {tuple(self.vectors.shape)}")

    @property
    def c(self) -> int:
        return len(self.class_ids)


def _voxels(v):
    if isinstance(v, Volume):
        return np.asarray(v.voxels, dtype=np.float64)
    if isinstance(v, torch.Tensor):
        return v
    return np.asarray(v, dtype=np.float64)


def reconstruction_loss(v, v_hat):
    """Root mean squared voxel difference (normalized by voxel count)."""
    a, b = _voxels(v), _voxels(v_hat)
    if tuple(a.shape) != tuple(b.shape):
        raise ShapeIncompatible(f"shapes {tuple(a.shape)} and {tuple(b.shape)} differ")
    if isinstance(a, torch.Tensor):
        return torch.sqrt(((a - b) ** 2).mean())
    return float(np.sqrt(np.mean((a - b) ** 2)))


def squared_distances(e, exemplars: ExemplarSet):
    """Squared Euclidean distances from ``e`` (d,) or (n, d) to each exemplar."""
    ex = exemplars.vectors
    if isinstance(e, torch.Tensor):
        if e.shape[-1] != ex.shape[1]:
            raise DimensionMismatch(f"embedding length {e.shape[-1]} != exemplar length {ex.shape[1]}")
        return ((e.unsqueeze(-2) - ex) ** 2).sum(-1)
    e = np.asarray(e, dtype=np.float64)
    if e.shape[-1] != ex.shape[1]:
        raise DimensionMismatch(f"embedding length {e.shape[-1]} != exemplar length {ex.shape[1]}")
    return ((e[..., None, :] - ex) ** 2).sum(-1)


def probabilities_from_distances(d2):
    """Softmax of negative squared distances along the last axis, shifted by the
    smallest distance so the largest exponent is exactly 0."""
    if isinstance(d2, torch.Tensor):
        return torch.softmax(-d2, dim=-1)
    d2 = np.asarray(d2, dtype=np.float64)
    z = np.exp(-(d2 - d2.min(axis=-1, keepdims=True)))
    return z / z.sum(axis=-1, keepdims=True)


def metric_probability(e, exemplars: ExemplarSet):
    return probabilities_from_distances(squared_distances(e, exemplars))


def _class_index(true_class, exemplars: ExemplarSet) -> int:
    c = int(true_class)
    if c not in exemplars.class_ids:
        raise ClassOutOfRange(f"class {c} not among exemplar classes {exemplars.class_ids}")
    return exemplars.class_ids.index(c)


def metric_loss_from_distances(d2, index):
    """-log softmax(-d2)[index], evaluated as logsumexp(-d2) + d2[index]."""
    if isinstance(d2, torch.Tensor):
        return torch.logsumexp(-d2, dim=-1) + d2[..., index]
    d2 = np.asarray(d2, dtype=np.float64)
    m = d2.min(axis=-1)
    lse = -m + np.log(np.exp(-(d2 - m[..., None])).sum(axis=-1))
    return lse + d2[..., index]


def metric_loss(e, true_class, exemplars: ExemplarSet):
    """Cross-entropy of the exemplar softmax against the one-hot true class."""
    idx = _class_index(true_class, exemplars)
    out = metric_loss_from_distances(squared_distances(e, exemplars), idx)
    if isinstance(out, torch.Tensor):
        return out
    return float(out) if np.ndim(out) == 0 else out


def cae_loss(l_rmse, l_dist, cfg=None, *, alpha=None):
    """``l_rmse + alpha * l_dist``; ``alpha`` from ``cfg`` unless given."""
    if alpha is None:
        alpha = cfg.alpha if cfg is not None else DEFAULT_ALPHA
    return l_rmse + alpha * l_dist
