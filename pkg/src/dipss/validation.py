"""Input validation helpers shared by the estimators.

Estimators accept either a sequence of :class:`~dipss.volume.Volume` or a
4D array ``(n_cases, d0, d1, d2)`` and hand back the same container type.
"""
from __future__ import annotations

import enum

import numpy as np

from .exceptions import DimensionMismatch, ShapeIncompatible
from .volume import Volume


def check_volumes(X, dims=None, allow_empty=False) -> list:
    if isinstance(X, Volume):
        raise TypeError("expected a collection of volumes, got a single Volume")
    if isinstance(X, np.ndarray):
        if X.ndim != 4:
            raise DimensionMismatch(f"expected a 4D array (n, d0, d1, d2), got shape {X.shape}")
        vols = [Volume(x) for x in X]
    else:
        vols = []
        for item in X:
            vols.append(item if isinstance(item, Volume) else Volume(np.asarray(item)))
    if not vols and not allow_empty:
        raise ValueError("no volumes given")
    if dims is not None:
        for v in vols:
            if v.dims != tuple(dims):
                raise ShapeIncompatible(f"volume dims {v.dims} != expected {tuple(dims)}")
    return vols


def restore_container(X, volumes):
    if isinstance(X, np.ndarray):
        return np.stack([v.voxels for v in volumes], axis=0)
    return list(volumes)


def check_labels(y, n) -> np.ndarray:
    if isinstance(y, (list, tuple)):
        # numpy would stringify enum members as "Label.X"
        y = [v.value if isinstance(v, enum.Enum) else v for v in y]
    y = np.asarray(y)
    if y.ndim != 1 or len(y) != n:
        raise DimensionMismatch(f"labels must be 1D of length {n}, got shape {y.shape}")
    return y
