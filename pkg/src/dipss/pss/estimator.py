"""Slice-wise deployment of the trained harmonizer and its estimator wrapper."""
from __future__ import annotations

import numpy as np
import torch
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ..exceptions import MissingClass, ShapeIncompatible
from ..validation import check_labels, check_volumes, restore_container
from ..volume import Volume
from .networks import GENERATOR_STRIDE, from_unit, to_unit
from .training import PssParams, PssTrainConfig, train_pss

_CHUNK = 64


def apply_pss(v: Volume, params, axis: str = "coronal", mask_background: bool = False,
              value_range: float | None = None) -> Volume:
    """Pass every slice of ``v`` along ``axis`` through G_X and reassemble.

    ``params`` is a :class:`PssParams` or any module/callable mapping
    ``(N, 1, H, W)`` tensors in [-1, 1] to the same shape. Output is clamped
    to [0, 255]; with ``mask_background`` voxels outside the input brain
    mask are restored to their input values.
    """
    if isinstance(params, PssParams):
        gen = params.generator("gen_YtoX")
        vr = params.metadata["architecture"].get("value_range", 255.0)
    else:
        gen = params
        vr = 255.0
    if value_range is not None:
        vr = value_range
    ax = v.axis_index(axis)
    moved = np.moveaxis(np.array(v.voxels, dtype=np.float32), ax, 0)
    h, w = moved.shape[1:]
    if h % GENERATOR_STRIDE or w % GENERATOR_STRIDE:
        raise ShapeIncompatible(f"{axis} slices {h}x{w} not divisible by {GENERATOR_STRIDE}")
    out = np.empty_like(moved)
    with torch.no_grad():
        for start in range(0, len(moved), _CHUNK):
            chunk = torch.from_numpy(moved[start:start + _CHUNK]).unsqueeze(1)
            res = from_unit(gen(to_unit(chunk, vr)), vr)
            out[start:start + _CHUNK] = res[:, 0].numpy()
    out = np.clip(np.moveaxis(out, 0, ax), 0.0, 255.0)
    if mask_background:
        out = np.where(v.brain_mask(), out, v.voxels)
    return Volume(out, mask=v.mask, axis_order=v.axis_order)


def volume_slices(volumes, axis="coronal") -> np.ndarray:
    """All slices of ``volumes`` along ``axis`` stacked into (n, H, W)."""
    out = []
    for v in volumes:
        out.append(np.moveaxis(v.voxels, v.axis_index(axis), 0))
    return np.concatenate(out, axis=0)


class PseudoScannerStandardizer(TransformerMixin, BaseEstimator):
    """Harmonize volumes toward a reference scanner.

    ``fit(X, y)`` takes volumes with domain labels ``y``: 0 marks the
    reference scanner (domain X), 1 the conversion source (domain Y). Slices
    along ``axis`` from each group form the two unpaired training pools.
    ``transform`` runs every slice of each volume through the Y->X generator.

    Parameters mirror :class:`~dipss.pss.training.PssTrainConfig`; see there
    for defaults. ``mask_background`` keeps voxels outside each input's brain
    mask unchanged (skull-stripped inputs stay zero outside the brain).
    """

    def __init__(self, lambda_cycle=10.0, lambda_identity=0.5, n_iterations=2000, batch_size=4,
                 learning_rate=2e-4, base_channels=64, n_residual_blocks=6, disc_channels=64,
                 pool_size=50, value_range=None, input_skip=True, axis="coronal", mask_background=True,
                 random_state=0):
        self.lambda_cycle = lambda_cycle
        self.lambda_identity = lambda_identity
        self.n_iterations = n_iterations
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.base_channels = base_channels
        self.n_residual_blocks = n_residual_blocks
        self.disc_channels = disc_channels
        self.pool_size = pool_size
        self.value_range = value_range
        self.input_skip = input_skip
        self.axis = axis
        self.mask_background = mask_background
        self.random_state = random_state

    def train_config(self) -> PssTrainConfig:
        return PssTrainConfig(
            lambda_cycle=self.lambda_cycle,
            lambda_identity=self.lambda_identity,
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            n_iterations=self.n_iterations,
            n_residual_blocks=self.n_residual_blocks,
            base_channels=self.base_channels,
            disc_channels=self.disc_channels,
            pool_size=self.pool_size,
            value_range=self.value_range,
            input_skip=self.input_skip,
            seed=int(self.random_state or 0),
        )

    def fit(self, X, y):
        vols = check_volumes(X)
        y = check_labels(y, len(vols))
        ref = [v for v, d in zip(vols, y) if d == 0]
        src = [v for v, d in zip(vols, y) if d == 1]
        if not ref or not src:
            raise MissingClass("need volumes from both the reference (0) and source (1) domains")
        return self.fit_slices(volume_slices(ref, self.axis), volume_slices(src, self.axis))

    def fit_slices(self, reference_slices, source_slices, progress=None):
        self.params_ = train_pss(reference_slices, source_slices, self.train_config(), progress)
        self.loss_log_ = self.params_.loss_log
        self.slice_shape_ = tuple(self.params_.metadata["architecture"]["slice_shape"])
        return self

    @classmethod
    def from_params(cls, params: PssParams, **kwargs) -> "PseudoScannerStandardizer":
        cfg = params.metadata.get("config", {})
        keys = ("lambda_cycle", "lambda_identity", "n_iterations", "batch_size", "learning_rate",
                "base_channels", "n_residual_blocks", "disc_channels", "pool_size", "value_range",
                "input_skip")
        init = {k: cfg[k] for k in keys if k in cfg}
        init["random_state"] = cfg.get("seed", 0)
        init.update(kwargs)
        est = cls(**init)
        est.params_ = params
        est.loss_log_ = params.loss_log
        est.slice_shape_ = tuple(params.metadata["architecture"]["slice_shape"])
        return est

    def transform(self, X):
        check_is_fitted(self, "params_")
        gen = self.params_.generator("gen_YtoX")
        vr = self.params_.metadata["architecture"].get("value_range", 255.0)
        out = [apply_pss(v, gen, self.axis, self.mask_background, vr) for v in check_volumes(X)]
        return restore_container(X, out)
