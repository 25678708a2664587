"""Slice generator and discriminator for the unpaired translation model."""
from __future__ import annotations

import logging

import torch
from torch import nn

from ..exceptions import ShapeIncompatible

logger = logging.getLogger(__name__)

GENERATOR_STRIDE = 4
DISCRIMINATOR_STRIDE = 8
REFERENCE_SLICE = (160, 160)
REFERENCE_FC_FEATURES = 400
_SKIP_CLAMP = 1.0 - 1e-4


class ResidualBlock(nn.Module):
    def __init__(self, channels):
        super().__init__()
        self.block = nn.Sequential(
            nn.ReflectionPad2d(1),
            nn.Conv2d(channels, channels, 3),
            nn.InstanceNorm2d(channels),
            nn.ReLU(inplace=True),
            nn.ReflectionPad2d(1),
            nn.Conv2d(channels, channels, 3),
            nn.InstanceNorm2d(channels),
        )

    def forward(self, x):
        return x + self.block(x)


class Generator(nn.Module):
    """ResNet-style translator: 7x7 stem, two stride-2 downs, residual
    blocks, two transposed-conv ups, 7x7 head with tanh.

    With ``input_skip`` the head output is added to ``atanh(x)`` before the
    tanh, so the network learns a correction on top of the identity map.

    Maps (N, 1, H, W) tensors in [-1, 1] to the same shape; H and W must be
    divisible by 4.
    """

    def __init__(self, base_channels=64, n_residual_blocks=6, input_skip=True):
        super().__init__()
        self.input_skip = input_skip
        c = base_channels
        layers = [
            nn.ReflectionPad2d(3),
            nn.Conv2d(1, c, 7),
            nn.InstanceNorm2d(c),
            nn.ReLU(inplace=True),
        ]
        for _ in range(2):
            layers += [nn.Conv2d(c, 2 * c, 3, stride=2, padding=1), nn.InstanceNorm2d(2 * c), nn.ReLU(inplace=True)]
            c *= 2
        layers += [ResidualBlock(c) for _ in range(n_residual_blocks)]
        for _ in range(2):
            layers += [
                nn.ConvTranspose2d(c, c // 2, 3, stride=2, padding=1, output_padding=1),
                nn.InstanceNorm2d(c // 2),
                nn.ReLU(inplace=True),
            ]
            c //= 2
        layers += [nn.ReflectionPad2d(3), nn.Conv2d(c, 1, 7)]
        self.model = nn.Sequential(*layers)

    def forward(self, x):
        h, w = x.shape[-2:]
        if h % GENERATOR_STRIDE or w % GENERATOR_STRIDE:
            raise ShapeIncompatible(f"slice {h}x{w} not divisible by {GENERATOR_STRIDE}")
        out = self.model(x)
        if self.input_skip:
            # pre-activation skip: a zero head leaves the input unchanged
            out = out + torch.atanh(x.clamp(-_SKIP_CLAMP, _SKIP_CLAMP))
        return torch.tanh(out)


class Discriminator(nn.Module):
    """convA (LeakyReLU) -> 2x convB (InstanceNorm + LeakyReLU) -> convC ->
    flatten -> one fully connected output.

    Three stride-2 stages shrink the slice 8x, and convC emits one channel,
    so a 160x160 slice yields the 400-feature head; other sizes get a head
    sized (H/8)(W/8).
    """

    def __init__(self, input_shape=REFERENCE_SLICE, base_channels=64):
        super().__init__()
        h, w = (int(s) for s in input_shape)
        if h % DISCRIMINATOR_STRIDE or w % DISCRIMINATOR_STRIDE:
            raise ShapeIncompatible(f"discriminator input {h}x{w} not divisible by {DISCRIMINATOR_STRIDE}")
        self.input_shape = (h, w)
        c = base_channels
        self.features = nn.Sequential(
            nn.Conv2d(1, c, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(c, 2 * c, 4, stride=2, padding=1),
            nn.InstanceNorm2d(2 * c),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(2 * c, 4 * c, 4, stride=2, padding=1),
            nn.InstanceNorm2d(4 * c),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(4 * c, 1, 3, stride=1, padding=1),
        )
        self.n_fc = (h // DISCRIMINATOR_STRIDE) * (w // DISCRIMINATOR_STRIDE)
        if self.n_fc != REFERENCE_FC_FEATURES:
            logger.info("discriminator head re-dimensioned to %d->1 for %dx%d input", self.n_fc, h, w)
        self.fc = nn.Linear(self.n_fc, 1)

    def forward(self, x):
        if tuple(x.shape[-2:]) != self.input_shape:
            raise ShapeIncompatible(f"slice {tuple(x.shape[-2:])} != configured {self.input_shape}")
        return self.fc(self.features(x).flatten(1)).squeeze(1)


def generator_forward(slice_, generator: Generator, value_range=255.0):
    """Translate one 2D slice given in display units; returns display units."""
    x = torch.as_tensor(slice_, dtype=torch.float32)
    if x.ndim != 2:
        raise ShapeIncompatible(f"expected a 2D slice, got shape {tuple(x.shape)}")
    with torch.no_grad():
        y = generator(to_unit(x, value_range)[None, None])[0, 0]
    return from_unit(y, value_range).numpy()


def discriminator_forward(slice_, discriminator: Discriminator, value_range=255.0) -> float:
    x = torch.as_tensor(slice_, dtype=torch.float32)
    if x.ndim != 2:
        raise ShapeIncompatible(f"expected a 2D slice, got shape {tuple(x.shape)}")
    with torch.no_grad():
        return float(discriminator(to_unit(x, value_range)[None, None])[0])


def to_unit(x, value_range=255.0):
    """[0, value_range] -> [-1, 1]."""
    return x / (value_range / 2.0) - 1.0


def from_unit(y, value_range=255.0):
    return (y + 1.0) * (value_range / 2.0)
