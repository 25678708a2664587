"""Encoding, decoding and bulk embedding with trained parameters."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import torch

from ..exceptions import ShapeIncompatible
from ..volume import CaseRecord, Volume
from .network import CAE3d
from .training import EmbedParams

logger = logging.getLogger(__name__)



@dataclass(eq=False)
class Embedding:
    vector: np.ndarray
    record: CaseRecord

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=np.float64)
        if self.vector.ndim != 1 or not np.all(np.isfinite(self.vector)):
            raise ValueError("embedding must be a finite 1D vector")

    @property
    def case_id(self) -> str:
        return self.record.case_id

    @property
    def fold(self):
        return self.record.fold

    @property
    def category(self) -> str:
        return self.record.category

    def __eq__(self, other):
        return (isinstance(other, Embedding) and self.record == other.record
                and np.array_equal(self.vector, other.vector))

    __hash__ = None


def _net(params) -> CAE3d:
    return params if isinstance(params, CAE3d) else params.network()


def encode_many(volumes, params: EmbedParams, net: CAE3d | None = None) -> np.ndarray:
    """(n, embedding_dim) float64 codes for a sequence of volumes/arrays."""
    net = net or params.network()
    arrays = [np.asarray(v.voxels if isinstance(v, Volume) else v, dtype=np.float32) for v in volumes]
    for a in arrays:
        if a.shape != net.input_dims:
            raise ShapeIncompatible(f"volume dims {a.shape} != configured {net.input_dims}")
    if not arrays:
        return np.zeros((0, net.embedding_dim))
    out = []
    scale = np.float32(params.intensity_scale)
    # one case per forward pass: batched convolutions may round differently,
    # and a case's code must not depend on its neighbours
    with torch.no_grad():
        for a in arrays:
            x = torch.from_numpy(a[None] / scale)
            out.append(net.encode(x).numpy().astype(np.float64))
    return np.concatenate(out)


def encode(v, params: EmbedParams) -> np.ndarray:
    """Embedding vector of one volume."""
    return encode_many([v], params)[0]


def decode(e, params: EmbedParams) -> Volume:
    """Volume in display units reconstructed from an embedding."""
    vec = e.vector if isinstance(e, Embedding) else np.asarray(e, dtype=np.float64)
    net = params.network()
    if vec.shape != (net.embedding_dim,):
        raise ShapeIncompatible(f"embedding shape {vec.shape} != ({net.embedding_dim},)")
    with torch.no_grad():
        out = net.decode(torch.from_numpy(vec.astype(np.float32))[None])[0].numpy()
    return Volume(out * np.float32(params.intensity_scale))


@dataclass
class EmbedResult:
    embeddings: list
    skipped: list = field(default_factory=list)  # (case_id, reason)


def embed_all(cases, params: EmbedParams) -> EmbedResult:
    """Embed ``(Volume, CaseRecord)`` pairs; cases with the wrong dims are
    skipped and listed in the result instead of aborting the batch."""
    net = params.network()
    keep, skipped = [], []
    for v, rec in cases:
        if v.dims != net.input_dims:
            msg = f"dims {v.dims} != {net.input_dims}"
            logger.warning("skipping %s: %s", rec.case_id, msg)
            skipped.append((rec.case_id, msg))
        else:
            keep.append((v, rec))
    vecs = encode_many([v for v, _ in keep], params, net)
    return EmbedResult([Embedding(vec, rec) for vec, (_, rec) in zip(vecs, keep)], skipped)
