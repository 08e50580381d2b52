"""Writer identifier: style encoder for the generator and writer classifier."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .dataio import HEIGHT, StyleSet
from .nnblocks import BlockConfig, ResBlock, ViTEncoder, init_weights

PATCH = (4, 8)


@dataclass
class StyleEmbedding:
    tokens: torch.Tensor  # (1, S, d)
    pooled: torch.Tensor  # (1, d)


class WriterIdentifier(nn.Module):
    """ViT over 4x8 patches (or a small CNN when ``use_vit`` is off) plus a linear writer head."""

    def __init__(self, cfg: BlockConfig, n_writers: int, use_vit: bool = True):
        super().__init__()
        self.cfg = cfg
        self.use_vit = use_vit
        d = cfg.d_model
        if use_vit:
            self.patch_embed = nn.Conv2d(1, d, kernel_size=PATCH, stride=PATCH)
            self.encoder = ViTEncoder(cfg, use_cpe=True)
        else:
            # same 8 x W/8 token grid as the patch embedding
            self.backbone = nn.Sequential(
                nn.Conv2d(1, 32, 3, stride=2, padding=1),
                nn.SiLU(),
                ResBlock(32, 64, stride=2),
                ResBlock(64, d, stride=(1, 2)),
            )
            self.norm = nn.LayerNorm(d)
        self.head = nn.Linear(d, n_writers)
        init_weights(self)

    @property
    def n_writers(self) -> int:
        return self.head.out_features

    def encode(self, images: torch.Tensor) -> torch.Tensor:
        """Per-image token sequences for a same-width batch ``(P, 1, 32, W)`` -> ``(P, S_img, d)``."""
        if images.shape[-2] != HEIGHT:
            raise ValueError(f"style image height must be {HEIGHT}, got {images.shape[-2]}")
        if self.use_vit:
            fmap = self.patch_embed(images)
        else:
            fmap = self.backbone(images)
        _, _, h, w = fmap.shape
        tokens = fmap.flatten(2).transpose(1, 2)
        if self.use_vit:
            return self.encoder(tokens, (h, w))
        return self.norm(tokens)

    def embed(self, images: list[torch.Tensor]) -> StyleEmbedding:
        blocks = []
        for img in images:
            img = img if img.dim() == 4 else img.unsqueeze(0)
            blocks.append(self.encode(img).reshape(1, -1, self.cfg.d_model))
        tokens = torch.cat(blocks, dim=1)
        return StyleEmbedding(tokens=tokens, pooled=tokens.mean(dim=1))

    def classify(self, emb: StyleEmbedding) -> torch.Tensor:
        return self.head(emb.pooled)

    def forward(self, images: list[torch.Tensor]) -> torch.Tensor:
        return self.classify(self.embed(images))


def embed_style(style: StyleSet, model: WriterIdentifier) -> StyleEmbedding:
    return model.embed(style.images)


def classify_writer(emb: StyleEmbedding, model: WriterIdentifier) -> torch.Tensor:
    return model.classify(emb)


def writer_loss(logits: torch.Tensor, true_writer) -> torch.Tensor:
    """Mean negative log-softmax probability of the true writer; logits ``(B, n)`` or ``(n,)``."""
    if logits.dim() == 1:
        logits = logits.unsqueeze(0)
    target = torch.as_tensor(true_writer, device=logits.device).reshape(-1).long()
    n = logits.shape[-1]
    if bool(((target < 0) | (target >= n)).any()):
        raise IndexError(f"writer index out of range for {n} writers: {target.tolist()}")
    return F.cross_entropy(logits, target)
