"""Intensity normalization and half-resolution downsampling."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import DegenerateInput, NoConvergence, OddDimension
from .validation import check_volumes, restore_container
from .volume import Volume


@dataclass(frozen=True)
class NormalizationConfig:
    target_mean: float = 18.0
    margin: float = 1.0
    max_iterations: int = 50
    gamma_bounds: tuple = (0.1, 10.0)

    def __post_init__(self):
        lo, hi = self.gamma_bounds
        if not self.margin > 0:
            raise ValueError("margin must be > 0")
        if not 0 < lo < hi:
            raise ValueError("gamma bounds must satisfy 0 < low < high")


def _gamma_mean(values: np.ndarray, gamma: float) -> float:
    return float(np.mean(255.0 * (values / 255.0) ** gamma))


def normalize_intensity(v: Volume, cfg: NormalizationConfig = NormalizationConfig()):
    """Gamma-correct nonzero voxels until their mean is within the margin.

    Returns ``(volume, gamma)``. The mean of ``255 (x/255)^g`` is monotone
    decreasing in ``g``, so bisection on ``log g`` inside ``gamma_bounds``
    converges; it stops once the mean is within ``margin / 1000`` of the
    target or the iteration budget is spent. A volume already inside the
    margin is returned unchanged with gamma 1.
    """
    x = np.asarray(v.voxels, dtype=np.float64)
    nz = x != 0
    if not nz.any():
        raise DegenerateInput("volume has no nonzero voxels")
    values = x[nz]
    if values.min() < 0:
        raise DegenerateInput("negative intensities; expected display units in [0, 255]")
    mu, eps = cfg.target_mean, cfg.margin

    if abs(_gamma_mean(values, 1.0) - mu) <= eps:
        return v, 1.0

    lo, hi = (math.log(g) for g in cfg.gamma_bounds)
    if _gamma_mean(values, math.exp(lo)) < mu - eps or _gamma_mean(values, math.exp(hi)) > mu + eps:
        raise NoConvergence(
            f"target mean {mu}±{eps} unreachable for gamma in {cfg.gamma_bounds}"
        )
    gamma, mean = 1.0, _gamma_mean(values, 1.0)
    for _ in range(cfg.max_iterations):
        mid = 0.5 * (lo + hi)
        gamma = math.exp(mid)
        mean = _gamma_mean(values, gamma)
        if abs(mean - mu) <= eps * 1e-3:
            break
        if mean > mu:
            lo = mid
        else:
            hi = mid
    if abs(mean - mu) > eps:
        raise NoConvergence(f"mean {mean:.3f} outside {mu}±{eps} after {cfg.max_iterations} steps")

    out = x.copy()
    out[nz] = 255.0 * (values / 255.0) ** gamma
    return v.with_voxels(out), gamma


def nonzero_mean(v: Volume) -> float:
    x = v.voxels
    nz = x != 0
    return float(x[nz].mean()) if nz.any() else 0.0


def downsample_half(v: Volume) -> Volume:
    """2x2x2 block means; the mask (if any) by majority vote, ties -> True."""
    d0, d1, d2 = v.dims
    if d0 % 2 or d1 % 2 or d2 % 2:
        raise OddDimension(f"dims {v.dims} are not all even")
    blocks = np.asarray(v.voxels, dtype=np.float64).reshape(d0 // 2, 2, d1 // 2, 2, d2 // 2, 2)
    out = blocks.mean(axis=(1, 3, 5))
    mask = None
    if v.mask is not None:
        counts = v.mask.reshape(d0 // 2, 2, d1 // 2, 2, d2 // 2, 2).sum(axis=(1, 3, 5))
        mask = counts >= 4
    return Volume(out, mask=mask, axis_order=v.axis_order)


class IntensityNormalizer(TransformerMixin, BaseEstimator):
    """Stateless transformer wrapping :func:`normalize_intensity`.

    After ``transform`` the applied gammas are available as ``gammas_``.
    """

    def __init__(self, target_mean=18.0, margin=1.0, max_iterations=50, gamma_bounds=(0.1, 10.0)):
        self.target_mean = target_mean
        self.margin = margin
        self.max_iterations = max_iterations
        self.gamma_bounds = gamma_bounds

    def _config(self):
        return NormalizationConfig(self.target_mean, self.margin, self.max_iterations,
                                   tuple(self.gamma_bounds))

    def fit(self, X, y=None):
        self._config()
        check_volumes(X)
        return self

    def transform(self, X):
        cfg = self._config()
        vols = check_volumes(X)
        out, gammas = [], []
        for v in vols:
            nv, g = normalize_intensity(v, cfg)
            out.append(nv)
            gammas.append(g)
        self.gammas_ = np.asarray(gammas)
        return restore_container(X, out)


class HalfDownsampler(TransformerMixin, BaseEstimator):
    def fit(self, X, y=None):
        check_volumes(X)
        return self

    def transform(self, X):
        return restore_container(X, [downsample_half(v) for v in check_volumes(X)])
