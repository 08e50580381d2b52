"""Recognizer: trimmed residual conv stem + CPE/ViT (or BiLSTM) with an alignment-free loss."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .dataio import HEIGHT
from .glyphs import tokenize
from .nnblocks import BlockConfig, ResBlock, ViTEncoder, init_weights

BLANK = 0
H_STRIDE = 4
_NEG = -1e30  # finite stand-in for log(0) so logsumexp gradients stay finite


def symbols_of(text: str) -> list[str]:
    """Visual-character symbols of ``text`` (base plus any unmerged combining marks)."""
    return ["".join(map(chr, g)) for g in tokenize(text)]


@dataclass(frozen=True)
class Charset:
    symbols: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.symbols)) != len(self.symbols):
            raise ValueError("charset symbols must be unique")
        if "" in self.symbols:
            raise ValueError("the empty string is reserved")

    @classmethod
    def from_texts(cls, texts) -> "Charset":
        return cls(tuple(sorted({sym for t in texts for sym in symbols_of(t)})))

    @property
    def n_classes(self) -> int:
        return len(self.symbols) + 1

    def encode(self, text: str) -> list[int]:
        index = {s: i + 1 for i, s in enumerate(self.symbols)}
        out = []
        for sym in symbols_of(text):
            if sym not in index:
                raise KeyError(f"character {sym!r} not in charset")
            out.append(index[sym])
        return out

    def decode(self, labels) -> str:
        return "".join(self.symbols[i - 1] for i in labels)


class Recognizer(nn.Module):
    """Logits ``(B, T, |charset| + 1)`` with T = floor(W / 4); index 0 is the blank."""

    def __init__(self, cfg: BlockConfig, charset: Charset, use_vit: bool = True, widths=(32, 64)):
        super().__init__()
        self.cfg = cfg
        self.charset = charset
        self.use_vit = use_vit
        c1, c2 = widths
        self.stem = nn.Conv2d(1, c1, 3, stride=2, padding=1)  # 16 x W/2
        self.stage1 = nn.Sequential(ResBlock(c1, c1, stride=2), ResBlock(c1, c1))  # 8 x W/4
        self.stage2 = nn.Sequential(ResBlock(c1, c2, stride=(2, 1)), ResBlock(c2, c2))  # 4 x W/4
        self.to_tokens = nn.Linear(4 * c2, cfg.d_model)
        if use_vit:
            self.encoder = ViTEncoder(cfg, use_cpe=True)
        else:
            self.rnn = nn.LSTM(cfg.d_model, cfg.d_model // 2, num_layers=max(cfg.n_layers, 1), bidirectional=True, batch_first=True)
        self.head = nn.Linear(cfg.d_model, charset.n_classes)
        init_weights(self)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        if images.dim() == 3:
            images = images.unsqueeze(0)
        if images.shape[-2] != HEIGHT:
            raise ValueError(f"recognizer input height must be {HEIGHT}, got {images.shape[-2]}")
        w = (images.shape[-1] // H_STRIDE) * H_STRIDE
        if w == 0:
            raise ValueError(f"image width {images.shape[-1]} is below {H_STRIDE}")
        fmap = self.stage2(self.stage1(F.silu(self.stem(images[..., :w]))))
        B, C, H, T = fmap.shape
        # one token per column: the 4 vertical cells stacked
        tokens = self.to_tokens(fmap.permute(0, 3, 2, 1).reshape(B, T, H * C))
        if self.use_vit:
            tokens = self.encoder(tokens, (1, T))
        else:
            tokens, _ = self.rnn(tokens)
        return self.head(tokens)


def recognize(image: torch.Tensor, model: Recognizer) -> torch.Tensor:
    return model(image)[0]


def ctc_min_length(labels) -> int:
    repeats = sum(1 for a, b in zip(labels, labels[1:]) if a == b)
    return len(labels) + repeats


def ctc_nll(log_probs: torch.Tensor, labels: list[int]) -> torch.Tensor:
    """-log sum over alignments of prod_t p(pi_t) for one sequence; ``log_probs`` is ``(T, C)``."""
    T = log_probs.shape[0]
    if ctc_min_length(labels) > T:
        raise ValueError(f"transcript needs at least {ctc_min_length(labels)} timesteps, have {T}")
    ext = [BLANK]
    for lab in labels:
        ext += [lab, BLANK]
    S = len(ext)
    ext_t = torch.tensor(ext, device=log_probs.device)
    # skip transitions s-2 -> s allowed onto a non-blank label differing from ext[s-2]
    skip = torch.zeros(S, dtype=torch.bool, device=log_probs.device)
    for s in range(2, S):
        skip[s] = ext[s] != BLANK and ext[s] != ext[s - 2]
    neg = torch.full((S,), _NEG, dtype=log_probs.dtype, device=log_probs.device)
    emit = log_probs[:, ext_t]  # (T, S)
    alpha = neg.clone()
    alpha[0] = emit[0, 0]
    if S > 1:
        alpha[1] = emit[0, 1]
    pad = torch.full((2,), _NEG, dtype=log_probs.dtype, device=log_probs.device)
    for t in range(1, T):
        prev = torch.cat([pad, alpha])
        stay, step, jump = prev[2:], prev[1:-1], prev[:-2]
        jump = torch.where(skip, jump, neg)
        alpha = torch.logsumexp(torch.stack([stay, step, jump]), dim=0) + emit[t]
    tail = alpha[-2:] if S > 1 else alpha[-1:]
    return -torch.logsumexp(tail, dim=0)


def recognition_loss(logits: torch.Tensor, transcript: str, charset: Charset) -> torch.Tensor:
    """Alignment-free (CTC) negative log-likelihood of ``transcript`` given ``(T, C)`` logits."""
    labels = charset.encode(transcript)
    return ctc_nll(logits.log_softmax(dim=-1), labels)


def greedy_decode(logits: torch.Tensor, charset: Charset) -> str:
    best = logits.argmax(dim=-1).tolist()
    labels, prev = [], None
    for k in best:
        if k != prev and k != BLANK:
            labels.append(k)
        prev = k
    return charset.decode(labels)
