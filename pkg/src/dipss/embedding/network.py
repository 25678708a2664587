"""3D convolutional autoencoder whose bottleneck is the embedding."""
from __future__ import annotations

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from ..exceptions import ShapeIncompatible

DEFAULT_CHANNELS = (8, 16, 32, 32)


def bottleneck_dims(input_dims, n_stages):
    f = 2 ** n_stages
    if any(d % f for d in input_dims):
        raise ShapeIncompatible(f"input dims {tuple(input_dims)} not divisible by {f} ({n_stages} pooling stages)")
    return tuple(d // f for d in input_dims)


def embedding_size(input_dims, channels=DEFAULT_CHANNELS) -> int:
    return int(np.prod(bottleneck_dims(input_dims, len(channels))))


class Encoder(nn.Module):
    """Per stage: 3x3x3 conv + ReLU + 2x2x2 average pooling; then a 1-channel
    3x3x3 projection whose flattened output is the embedding."""

    def __init__(self, channels=DEFAULT_CHANNELS):
        super().__init__()
        self.convs = nn.ModuleList()
        c_in = 1
        for c in channels:
            self.convs.append(nn.Conv3d(c_in, c, 3, padding=1))
            c_in = c
        self.project = nn.Conv3d(c_in, 1, 3, padding=1)

    def forward(self, x):
        for conv in self.convs:
            x = F.avg_pool3d(F.relu(conv(x)), 2)
        return self.project(x).flatten(1)


class Decoder(nn.Module):
    """Mirror of :class:`Encoder` with trilinear upsampling between stages."""

    def __init__(self, bottleneck, channels=DEFAULT_CHANNELS):
        super().__init__()
        self.bottleneck = tuple(bottleneck)
        self.expand = nn.Conv3d(1, channels[-1], 3, padding=1)
        outs = list(reversed(channels[:-1])) + [1]
        self.convs = nn.ModuleList()
        c_in = channels[-1]
        for c in outs:
            self.convs.append(nn.Conv3d(c_in, c, 3, padding=1))
            c_in = c

    def forward(self, z):
        x = F.relu(self.expand(z.reshape(-1, 1, *self.bottleneck)))
        last = len(self.convs) - 1
        for i, conv in enumerate(self.convs):
            x = conv(F.interpolate(x, scale_factor=2, mode="trilinear", align_corners=False))
            if i < last:
                x = F.relu(x)
        return x[:, 0]


class CAE3d(nn.Module):
    def __init__(self, input_dims, channels=DEFAULT_CHANNELS):
        super().__init__()
        self.input_dims = tuple(int(d) for d in input_dims)
        self.channels = tuple(int(c) for c in channels)
        if not self.channels:
            raise ValueError("need at least one pooling stage")
        self.bottleneck = bottleneck_dims(self.input_dims, len(self.channels))
        self.embedding_dim = int(np.prod(self.bottleneck))
        self.encoder = Encoder(self.channels)
        self.decoder = Decoder(self.bottleneck, self.channels)

    def check_input(self, x):
        if tuple(x.shape[-3:]) != self.input_dims:
            raise ShapeIncompatible(f"volume dims {tuple(x.shape[-3:])} != configured {self.input_dims}")

    def encode(self, x):
        """(N, d0, d1, d2) -> (N, embedding_dim)."""
        self.check_input(x)
        return self.encoder(x.unsqueeze(1))

    def decode(self, z):
        if z.shape[-1] != self.embedding_dim:
            raise ShapeIncompatible(f"embedding length {z.shape[-1]} != {self.embedding_dim}")
        return self.decoder(z)

    def forward(self, x):
        z = self.encode(x)
        return z, self.decode(z)
