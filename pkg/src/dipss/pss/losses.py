"""Objective terms of the translation model.

Every function accepts numpy arrays / sequences (returns a Python float) or
torch tensors (returns a differentiable scalar tensor), so the same code
serves the training loop and the direct arithmetic checks.
"""
from __future__ import annotations

import numpy as np
import torch

from ..exceptions import EmptyBatch, ShapeIncompatible


def _as_values(x):
    if isinstance(x, torch.Tensor):
        return x
    return np.asarray(x, dtype=np.float64)


def _size(x):
    return x.numel() if isinstance(x, torch.Tensor) else x.size


def _finish(v):
    return v if isinstance(v, torch.Tensor) else float(v)


def adversarial_loss(real_scores, fake_scores):
    """Least-squares discriminator objective: mean (D(real) - 1)^2 + mean D(fake)^2."""
    r, f = _as_values(real_scores), _as_values(fake_scores)
    if _size(r) == 0:
        raise EmptyBatch("no real scores")
    if _size(f) == 0:
        raise EmptyBatch("no fake scores")
    return _finish(((r - 1.0) ** 2).mean() + (f ** 2).mean())


def generator_adversarial_loss(fake_scores):
    """The generator's side of the least-squares game: mean (D(G(.)) - 1)^2."""
    f = _as_values(fake_scores)
    if _size(f) == 0:
        raise EmptyBatch("no fake scores")
    return _finish(((f - 1.0) ** 2).mean())


def _l1(a, b):
    a, b = _as_values(a), _as_values(b)
    if tuple(a.shape) != tuple(b.shape):
        raise ShapeIncompatible(f"shapes {tuple(a.shape)} and {tuple(b.shape)} differ")
    return abs(a - b).mean()


def cycle_loss(x, x_cycled, y, y_cycled):
    return _finish(_l1(x_cycled, x) + _l1(y_cycled, y))


def identity_loss(x, gx_of_x, y, gy_of_y):
    """L1 penalty for each generator acting on its own target domain."""
    return _finish(_l1(gx_of_x, x) + _l1(gy_of_y, y))


def total_pss_loss(l_gan_y, l_gan_x, l_cycle, l_identity, cfg=None, *, lambda_cycle=None,
                   lambda_identity=None):
    """``l_gan_y + l_gan_x + lambda_cycle * l_cycle + lambda_identity * l_identity``."""
    lc = lambda_cycle if lambda_cycle is not None else (cfg.lambda_cycle if cfg is not None else 10.0)
    li = lambda_identity if lambda_identity is not None else (cfg.lambda_identity if cfg is not None else 0.5)
    return l_gan_y + l_gan_x + lc * l_cycle + li * l_identity
