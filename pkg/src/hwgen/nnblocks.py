"""Shared transformer/conv building blocks and a finite-difference gradient checker.

Token tensors are ``(B, N, d)``. Blocks that need the 2-D layout of their tokens
(CPE) take the grid shape ``(h, w)`` explicitly, with row-major token order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F


@dataclass(frozen=True)
class BlockConfig:
    d_model: int = 128
    n_heads: int = 4
    d_ff: int = 256
    n_layers: int = 2
    dropout: float = 0.0

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.n_layers < 0 or self.d_ff < 1:
            raise ValueError("n_layers must be >= 0 and d_ff >= 1")


def init_weights(module: nn.Module) -> None:
    """Uniform fan-in init (variance 1/fan_in) for linear/conv weights, zero biases."""
    for m in module.modules():
        if isinstance(m, (nn.Linear, nn.Conv2d)):
            fan_in = m.weight[0].numel()
            bound = math.sqrt(3.0 / fan_in)
            nn.init.uniform_(m.weight, -bound, bound)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.LayerNorm):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)


class MultiHeadAttention(nn.Module):
    def __init__(self, d_model: int, n_heads: int, dropout: float = 0.0):
        super().__init__()
        if d_model % n_heads:
            raise ValueError(f"d_model={d_model} not divisible by n_heads={n_heads}")
        self.d_model = d_model
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.q_proj = nn.Linear(d_model, d_model)
        self.k_proj = nn.Linear(d_model, d_model)
        self.v_proj = nn.Linear(d_model, d_model)
        self.out_proj = nn.Linear(d_model, d_model)
        self.dropout = nn.Dropout(dropout)

    def _split(self, x):
        B, L, _ = x.shape
        return x.view(B, L, self.n_heads, self.d_head).transpose(1, 2)

    def forward(self, query, key, value, return_weights: bool = False):
        if query.shape[-1] != self.d_model or key.shape[-1] != self.d_model or value.shape[-1] != self.d_model:
            raise ValueError("query/key/value feature size must equal d_model")
        if key.shape[1] != value.shape[1]:
            raise ValueError(f"key length {key.shape[1]} != value length {value.shape[1]}")
        q = self._split(self.q_proj(query))
        k = self._split(self.k_proj(key))
        v = self._split(self.v_proj(value))
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.d_head)
        weights = scores.softmax(dim=-1)
        out = self.dropout(weights) @ v
        out = out.transpose(1, 2).reshape(query.shape[0], query.shape[1], self.d_model)
        out = self.out_proj(out)
        return (out, weights) if return_weights else out


class FeedForward(nn.Module):
    def __init__(self, d_model: int, d_ff: int, dropout: float = 0.0):
        super().__init__()
        self.fc1 = nn.Linear(d_model, d_ff)
        self.fc2 = nn.Linear(d_ff, d_model)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x):
        return self.fc2(self.dropout(F.gelu(self.fc1(x))))


class EncoderBlock(nn.Module):
    """Pre-norm transformer encoder layer."""

    def __init__(self, cfg: BlockConfig):
        super().__init__()
        self.norm1 = nn.LayerNorm(cfg.d_model)
        self.attn = MultiHeadAttention(cfg.d_model, cfg.n_heads, cfg.dropout)
        self.norm2 = nn.LayerNorm(cfg.d_model)
        self.ffn = FeedForward(cfg.d_model, cfg.d_ff, cfg.dropout)
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(self, x):
        h = self.norm1(x)
        x = x + self.dropout(self.attn(h, h, h))
        return x + self.dropout(self.ffn(self.norm2(x)))


class DecoderBlock(nn.Module):
    """Pre-norm decoder layer whose cross-attention roles are chosen by the caller.

    ``forward(tgt, key_src, value_src)`` runs self-attention over ``tgt``, then
    cross-attention with queries from ``tgt``, keys from ``key_src`` and values
    from ``value_src`` (which defaults to ``key_src``), then the feed-forward.
    """

    def __init__(self, cfg: BlockConfig):
        super().__init__()
        self.norm_self = nn.LayerNorm(cfg.d_model)
        self.self_attn = MultiHeadAttention(cfg.d_model, cfg.n_heads, cfg.dropout)
        self.norm_cross = nn.LayerNorm(cfg.d_model)
        self.norm_mem = nn.LayerNorm(cfg.d_model)
        self.cross_attn = MultiHeadAttention(cfg.d_model, cfg.n_heads, cfg.dropout)
        self.norm_ff = nn.LayerNorm(cfg.d_model)
        self.ffn = FeedForward(cfg.d_model, cfg.d_ff, cfg.dropout)
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(self, tgt, key_src, value_src=None):
        if tgt.shape[-1] != key_src.shape[-1]:
            raise ValueError("tgt and memory must share d_model")
        value_src = key_src if value_src is None else value_src
        h = self.norm_self(tgt)
        x = tgt + self.dropout(self.self_attn(h, h, h))
        q = self.norm_cross(x)
        k = self.norm_mem(key_src)
        v = k if value_src is key_src else self.norm_mem(value_src)
        x = x + self.dropout(self.cross_attn(q, k, v))
        return x + self.dropout(self.ffn(self.norm_ff(x)))


class CPE(nn.Module):
    """Conditional positional encoding: residual 3x3 depthwise conv over the token grid."""

    def __init__(self, d_model: int, kernel_size: int = 3):
        super().__init__()
        self.proj = nn.Conv2d(d_model, d_model, kernel_size, padding=kernel_size // 2, groups=d_model)

    def forward(self, x, grid_shape):
        if grid_shape is None:
            raise ValueError("CPE needs the token grid shape")
        h, w = grid_shape
        B, N, d = x.shape
        if h * w != N:
            raise ValueError(f"grid {h}x{w} does not hold {N} tokens")
        fmap = x.transpose(1, 2).reshape(B, d, h, w)
        fmap = fmap + self.proj(fmap)
        return fmap.reshape(B, d, N).transpose(1, 2)


class ViTEncoder(nn.Module):
    """CPE followed by a stack of encoder blocks, as used by the recogniser and writer encoder."""

    def __init__(self, cfg: BlockConfig, use_cpe: bool = True):
        super().__init__()
        self.cpe = CPE(cfg.d_model) if use_cpe else None
        self.blocks = nn.ModuleList(EncoderBlock(cfg) for _ in range(cfg.n_layers))
        self.norm = nn.LayerNorm(cfg.d_model)

    def forward(self, x, grid_shape):
        if self.cpe is not None:
            x = self.cpe(x, grid_shape)
        for blk in self.blocks:
            x = blk(x)
        return self.norm(x)


class ResBlock(nn.Module):
    """Two 3x3 convs with a (possibly strided, projected) shortcut."""

    def __init__(self, c_in: int, c_out: int, stride=1):
        super().__init__()
        self.conv1 = nn.Conv2d(c_in, c_out, 3, stride=stride, padding=1)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        needs_proj = c_in != c_out or stride not in (1, (1, 1))
        self.shortcut = nn.Conv2d(c_in, c_out, 1, stride=stride) if needs_proj else nn.Identity()

    def forward(self, x):
        h = self.conv2(F.silu(self.conv1(x)))
        return F.silu(h + self.shortcut(x))


def finite_diff_check(f, point: torch.Tensor, eps: float = 1e-4, indices=None) -> float:
    """Max relative error between autograd and central-difference gradients of ``f``.

    ``f`` maps a tensor shaped like ``point`` to a scalar (reduce with ``sum`` first).
    ``indices`` optionally restricts the check to a subset of flattened coordinates.
    The relative error uses the denominator max(|analytic|, |numeric|, 1e-8).
    """
    x = point.detach().clone().requires_grad_(True)
    out = f(x)
    if out.requires_grad:
        (analytic,) = torch.autograd.grad(out, x, allow_unused=True)
        if analytic is None:
            analytic = torch.zeros_like(x)
    else:
        analytic = torch.zeros_like(x)
    analytic = analytic.detach().reshape(-1)

    base = point.detach().clone().reshape(-1)
    coords = range(base.numel()) if indices is None else indices
    worst = 0.0
    with torch.no_grad():
        for i in coords:
            i = int(i)
            orig = base[i].item()
            base[i] = orig + eps
            f_plus = float(f(base.view_as(point)))
            base[i] = orig - eps
            f_minus = float(f(base.view_as(point)))
            base[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = float(analytic[i])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
