"""Unconditional convolutional patch discriminator and hinge losses."""

from __future__ import annotations

import torch
import torch.nn as nn

from .dataio import HEIGHT
from .nnblocks import ResBlock, init_weights

N_STAGES = 4
DOWNSAMPLE = 2**N_STAGES


class Discriminator(nn.Module):
    """Four stride-2 residual stages; one score per cell of the resulting 2 x W/16 map."""

    def __init__(self, base_channels: int = 32):
        super().__init__()
        self.stem = nn.Conv2d(1, base_channels, 3, padding=1)
        stages = []
        c = base_channels
        for i in range(N_STAGES):
            c_out = base_channels * 2**i
            stages.append(ResBlock(c, c_out, stride=2))
            c = c_out
        self.stages = nn.Sequential(*stages)
        self.score = nn.Conv2d(c, 1, 1)
        init_weights(self)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        if images.dim() == 3:
            images = images.unsqueeze(0)
        if images.shape[-2] != HEIGHT:
            raise ValueError(f"discriminator input height must be {HEIGHT}, got {images.shape[-2]}")
        w = (images.shape[-1] // DOWNSAMPLE) * DOWNSAMPLE
        if w == 0:
            raise ValueError(f"image width {images.shape[-1]} is below {DOWNSAMPLE}")
        x = self.stages(self.stem(images[..., :w]))
        return self.score(x).flatten(1)


def discriminate(images: torch.Tensor, model: Discriminator) -> torch.Tensor:
    return model(images)


def d_hinge_loss(real_scores: torch.Tensor | None, fake_scores: torch.Tensor | None) -> torch.Tensor:
    """mean(relu(1 - real)) + mean(relu(1 + fake)); a missing side contributes nothing."""
    terms = []
    if real_scores is not None and real_scores.numel():
        terms.append(torch.relu(1.0 - real_scores).mean())
    if fake_scores is not None and fake_scores.numel():
        terms.append(torch.relu(1.0 + fake_scores).mean())
    if not terms:
        raise ValueError("d_hinge_loss needs real or fake scores")
    return sum(terms)


def g_hinge_loss(fake_scores: torch.Tensor) -> torch.Tensor:
    return -fake_scores.mean()
