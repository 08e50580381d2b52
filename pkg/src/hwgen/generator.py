"""Generator: content/style fusion, multi-scale refinement, convolutional image decoder."""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .dataio import CHAR_WIDTH, HEIGHT, StyleSet
from .glyphs import GLYPH_SIZE, ContentSequence, GlyphTable, render_text
from .nnblocks import CPE, BlockConfig, DecoderBlock, EncoderBlock, init_weights
from .writerid import StyleEmbedding, WriterIdentifier

WIRINGS = ("conventional", "paper-literal")
MAX_SCALES = 4  # coarse grid height 2**n_scales must not exceed the 32-pixel image


@dataclass(frozen=True)
class GenConfig:
    block: BlockConfig = field(default_factory=BlockConfig)
    wiring: str = "conventional"
    n_scales: int = 2
    use_cpe: bool = True
    decoder_channels: tuple[int, ...] = (64, 32, 16)

    def __post_init__(self):
        if self.wiring not in WIRINGS:
            raise ValueError(f"wiring must be one of {WIRINGS}, got {self.wiring!r}")
        if not 1 <= self.n_scales <= MAX_SCALES:
            raise ValueError(f"n_scales must be in 1..{MAX_SCALES}, got {self.n_scales}")
        if not self.decoder_channels:
            raise ValueError("decoder_channels must not be empty")


@dataclass
class GeneratedBatch:
    images: list[torch.Tensor]  # each (1, 32, 16 * L)
    texts: list[str]
    writer_id: int


def final_grid(n_scales: int, length: int) -> tuple[int, int]:
    f = 2 ** (n_scales - 1)
    return 2 * f, 2 * length * f


def resample_tokens(x: torch.Tensor, length: int) -> torch.Tensor:
    """Linearly resample ``(B, S, d)`` tokens along the sequence axis to ``length``."""
    if x.shape[1] == length:
        return x
    return F.interpolate(x.transpose(1, 2), size=length, mode="linear", align_corners=False).transpose(1, 2)


class ConvDecoder(nn.Module):
    """(upsample, 3x3 conv, SiLU) stages from the (2^k, L*2^k) grid to a 32 x 16L image."""

    def __init__(self, d_model: int, n_scales: int, channels: tuple[int, ...]):
        super().__init__()
        n_square = 4 - n_scales  # x2 in both directions
        self.factors = [(2, 2)] * n_square + [(2, 1)]
        layers = []
        c_in = d_model
        for i, _ in enumerate(self.factors):
            c_out = channels[min(i, len(channels) - 1)]
            layers.append(nn.Conv2d(c_in, c_out, 3, padding=1))
            c_in = c_out
        self.stages = nn.ModuleList(layers)
        self.to_image = nn.Conv2d(c_in, 1, 3, padding=1)

    def forward(self, fmap):
        for factor, conv in zip(self.factors, self.stages):
            fmap = F.silu(conv(F.interpolate(fmap, scale_factor=factor, mode="nearest")))
        return torch.tanh(self.to_image(fmap))


class Generator(nn.Module):
    def __init__(self, cfg: GenConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.block.d_model
        self.content_proj = nn.Linear(GLYPH_SIZE * GLYPH_SIZE, d)
        self.fusion = nn.ModuleList(DecoderBlock(cfg.block) for _ in range(max(cfg.block.n_layers, 1)))
        self.fusion_norm = nn.LayerNorm(d)
        self.expand = nn.Linear(d, 4 * d)
        self.mix = nn.ModuleList(nn.Linear(d, d) for _ in range(cfg.n_scales - 1))
        self.cpe = nn.ModuleList(CPE(d) for _ in range(cfg.n_scales)) if cfg.use_cpe else None
        self.scales = nn.ModuleList(
            nn.ModuleList(EncoderBlock(cfg.block) for _ in range(cfg.block.n_layers)) for _ in range(cfg.n_scales)
        )
        self.decoder = ConvDecoder(d, cfg.n_scales, cfg.decoder_channels)
        init_weights(self)

    def embed_content(self, content: ContentSequence) -> torch.Tensor:
        p = self.content_proj.weight
        tokens = torch.as_tensor(content.tokens, dtype=p.dtype, device=p.device)
        pos = torch.as_tensor(content.positions, dtype=p.dtype, device=p.device)
        if pos.shape[-1] != self.cfg.block.d_model:
            raise ValueError(f"positional encoding width {pos.shape[-1]} != d_model {self.cfg.block.d_model}")
        return (self.content_proj(tokens) + pos).unsqueeze(0)

    def fuse(self, content: torch.Tensor, style: torch.Tensor) -> torch.Tensor:
        """Cross-attend content ``(1, L, d)`` and style ``(1, S, d)`` tokens; returns ``(1, L, d)``.

        conventional: queries = content, keys = values = style.
        paper-literal: queries = style, keys = content, values = style resampled to L;
        the S outputs are resampled back to L tokens.
        """
        if content.shape[-1] != style.shape[-1]:
            raise ValueError(f"content d_model {content.shape[-1]} != style d_model {style.shape[-1]}")
        L = content.shape[1]
        if self.cfg.wiring == "conventional":
            x = content
            for blk in self.fusion:
                x = blk(x, style, style)
        else:
            x = style
            values = resample_tokens(style, L)
            for blk in self.fusion:
                x = blk(x, content, values)
            x = resample_tokens(x, L)
        return self.fusion_norm(x)

    def refine(self, tokens: torch.Tensor) -> torch.Tensor:
        """Multi-scale refinement; returns a feature map ``(1, d, 2^k, L * 2^k)``."""
        B, L, d = tokens.shape
        # each character token becomes a 2x2 block of the coarse (2, 2L) grid
        cells = self.expand(tokens).view(B, L, 2, 2, d)
        fmap = cells.permute(0, 4, 2, 1, 3).reshape(B, d, 2, 2 * L)
        for s in range(self.cfg.n_scales):
            if s > 0:
                fmap = F.interpolate(fmap, scale_factor=2, mode="nearest")
                fmap = self.mix[s - 1](fmap.permute(0, 2, 3, 1)).permute(0, 3, 1, 2)
            h, w = fmap.shape[-2:]
            x = fmap.flatten(2).transpose(1, 2)
            if self.cpe is not None:
                x = self.cpe[s](x, (h, w))
            for blk in self.scales[s]:
                x = blk(x)
            fmap = x.transpose(1, 2).reshape(B, d, h, w)
        return fmap

    def forward(self, style_tokens: torch.Tensor, content: ContentSequence) -> torch.Tensor:
        """Render one text; returns ``(1, 1, 32, 16 * L)``."""
        fused = self.fuse(self.embed_content(content), style_tokens)
        return self.decoder(self.refine(fused))


def generate(
    style: StyleSet,
    texts: list[str],
    gen: Generator,
    writer: WriterIdentifier,
    table: GlyphTable,
    style_emb: StyleEmbedding | None = None,
) -> GeneratedBatch:
    if style_emb is None:
        style_emb = writer.embed(style.images)
    d = gen.cfg.block.d_model
    out = []
    for text in texts:
        img = gen(style_emb.tokens, render_text(table, text, d))
        out.append(img[0])
    return GeneratedBatch(images=out, texts=list(texts), writer_id=style.writer_id)


def expected_width(length: int) -> int:
    return CHAR_WIDTH * length


def expected_shape(length: int) -> tuple[int, int]:
    return HEIGHT, CHAR_WIDTH * length
