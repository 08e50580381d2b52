"""FID, KID, edit-distance rates and the four-way vocabulary/style evaluation."""

from __future__ import annotations

import logging
import unicodedata
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .dataio import EVAL_WIDTH, HEIGHT, POOL_NAMES, pad_or_truncate_eval

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FeatureSet:
    features: np.ndarray  # (N, d)
    extractor_id: str = "unknown"

    def __len__(self) -> int:
        return self.features.shape[0]


def _as_features(x) -> np.ndarray:
    arr = np.asarray(x.features if isinstance(x, FeatureSet) else x, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"features must be a 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("features contain non-finite values")
    return arr


def _sqrtm_psd(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh((m + m.T) / 2)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def fid(a, b) -> float:
    """Frechet distance between Gaussians fitted to two feature sets (unbiased covariances)."""
    a, b = _as_features(a), _as_features(b)
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise ValueError("FID needs at least two samples per set")
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"feature dims differ: {a.shape[1]} vs {b.shape[1]}")
    mu_a, mu_b = a.mean(0), b.mean(0)
    cov_a = np.atleast_2d(np.cov(a, rowvar=False))
    cov_b = np.atleast_2d(np.cov(b, rowvar=False))
    root_a = _sqrtm_psd(cov_a)
    inner = root_a @ cov_b @ root_a
    eig = np.linalg.eigvalsh((inner + inner.T) / 2)
    tr_covmean = np.sqrt(np.clip(eig, 0.0, None)).sum()
    diff = mu_a - mu_b
    value = diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * tr_covmean
    return float(max(value, 0.0))


def polynomial_kernel(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return (x @ y.T / x.shape[1] + 1.0) ** 3


def mmd2_unbiased(x: np.ndarray, y: np.ndarray) -> float:
    m, n = x.shape[0], y.shape[0]
    kxx, kyy, kxy = polynomial_kernel(x, x), polynomial_kernel(y, y), polynomial_kernel(x, y)
    term_x = (kxx.sum() - np.trace(kxx)) / (m * (m - 1))
    term_y = (kyy.sum() - np.trace(kyy)) / (n * (n - 1))
    return float(term_x + term_y - 2.0 * kxy.sum() / (m * n))


def kid_estimates(a, b, subset_size: int = 100, n_subsets: int = 10, seed: int = 0) -> np.ndarray:
    """Per-subset unbiased MMD^2 estimates.

    When ``a`` and ``b`` are the same set, the two subsets of each draw are disjoint.
    """
    same = a is b
    a, b = _as_features(a), _as_features(b)
    same = same or (a.shape == b.shape and np.array_equal(a, b))
    if subset_size < 2:
        raise ValueError("subset_size must be >= 2")
    limit = a.shape[0] // 2 if same else min(a.shape[0], b.shape[0])
    if subset_size > limit:
        raise ValueError(f"subset_size {subset_size} exceeds available samples ({limit})")
    rng = np.random.default_rng(seed)
    out = np.empty(n_subsets)
    for k in range(n_subsets):
        if same:
            idx = rng.choice(a.shape[0], 2 * subset_size, replace=False)
            ia, ib = idx[:subset_size], idx[subset_size:]
        else:
            ia = rng.choice(a.shape[0], subset_size, replace=False)
            ib = rng.choice(b.shape[0], subset_size, replace=False)
        out[k] = mmd2_unbiased(a[ia], b[ib])
    return out


def kid(a, b, subset_size: int = 100, n_subsets: int = 10, seed: int = 0) -> float:
    return float(kid_estimates(a, b, subset_size, n_subsets, seed).mean())


@dataclass(frozen=True)
class EditCounts:
    substitutions: int
    insertions: int
    deletions: int
    ref_len: int

    @property
    def cost(self) -> int:
        return self.substitutions + self.insertions + self.deletions

    @property
    def rate(self) -> float:
        if self.ref_len == 0:
            raise ValueError("error rate undefined for an empty reference")
        return self.cost / self.ref_len


def edit_distance(pred, ref) -> EditCounts:
    """Unit-cost Levenshtein alignment of ``pred`` against ``ref``.

    Insertions are extra symbols in ``pred``; deletions are ``ref`` symbols missing
    from it. Backtrace prefers substitution/match, then deletion, then insertion.
    """
    pred, ref = list(pred), list(ref)
    n, m = len(pred), len(ref)
    dp = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n + 1):
        dp[i][0] = i
    for j in range(m + 1):
        dp[0][j] = j
    for i in range(1, n + 1):
        row, prev = dp[i], dp[i - 1]
        for j in range(1, m + 1):
            row[j] = min(
                prev[j - 1] + (pred[i - 1] != ref[j - 1]),
                row[j - 1] + 1,  # deletion
                prev[j] + 1,  # insertion
            )
    s = ins = dels = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and dp[i][j] == dp[i - 1][j - 1] + (pred[i - 1] != ref[j - 1]):
            s += pred[i - 1] != ref[j - 1]
            i, j = i - 1, j - 1
        elif j > 0 and dp[i][j] == dp[i][j - 1] + 1:
            dels += 1
            j -= 1
        else:
            ins += 1
            i -= 1
    return EditCounts(int(s), ins, dels, m)


def _chars(text: str) -> list[str]:
    return list(unicodedata.normalize("NFC", text))


def _words(text: str) -> list[str]:
    return unicodedata.normalize("NFC", text).split()


def _check_refs(pairs):
    pairs = list(pairs)
    if not pairs:
        raise ValueError("no (prediction, reference) pairs")
    for _, ref in pairs:
        if not ref:
            raise ValueError("empty reference")
    return pairs


def cer(pairs) -> float:
    pairs = _check_refs(pairs)
    counts = [edit_distance(_chars(p), _chars(r)) for p, r in pairs]
    return 100.0 * sum(c.cost for c in counts) / sum(c.ref_len for c in counts)


def wer(pairs) -> float:
    pairs = _check_refs(pairs)
    counts = [edit_distance(_words(p), _words(r)) for p, r in pairs]
    total = sum(c.ref_len for c in counts)
    if total == 0:
        raise ValueError("references contain no words")
    return 100.0 * sum(c.cost for c in counts) / total


def ned(pairs) -> float:
    """Mean normalised edit distance (lower is closer), as a percentage."""
    pairs = _check_refs(pairs)
    vals = []
    for p, r in pairs:
        pc, rc = _chars(p), _chars(r)
        vals.append(edit_distance(pc, rc).cost / max(len(pc), len(rc)))
    return 100.0 * float(np.mean(vals))


class RandomConvFeatures(nn.Module):
    """Untrained 4-stage conv net with global average pooling; weights fixed by ``seed``."""

    def __init__(self, seed: int = 0, dim: int = 256):
        super().__init__()
        widths = [1, 32, 64, 128, dim]
        self.convs = nn.ModuleList(nn.Conv2d(widths[i], widths[i + 1], 3, stride=2, padding=1) for i in range(4))
        gen = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for conv in self.convs:
                fan_in = conv.weight[0].numel()
                bound = (6.0 / fan_in) ** 0.5
                conv.weight.copy_(torch.rand(conv.weight.shape, generator=gen, dtype=torch.float64) * 2 * bound - bound)
                conv.bias.copy_(torch.rand(conv.bias.shape, generator=gen, dtype=torch.float64) * 0.2 - 0.1)
        self.double()
        self.requires_grad_(False)

    def forward(self, x):
        for conv in self.convs:
            x = F.relu(conv(x))
        return x.mean(dim=(2, 3))


_EXTRACTORS: dict[int, RandomConvFeatures] = {}


def default_feature_extractor(images, seed: int = 0, batch_size: int = 256) -> FeatureSet:
    """256-d features for ``(N, 1, 32, 128)`` images (or a list of ``(1, 32, 128)`` images)."""
    if isinstance(images, (list, tuple)):
        images = torch.stack([torch.as_tensor(im) for im in images])
    images = torch.as_tensor(images, dtype=torch.float64)
    if images.dim() != 4 or tuple(images.shape[1:]) != (1, HEIGHT, EVAL_WIDTH):
        raise ValueError(f"expected images of shape (N, 1, {HEIGHT}, {EVAL_WIDTH}), got {tuple(images.shape)}")
    if seed not in _EXTRACTORS:
        _EXTRACTORS[seed] = RandomConvFeatures(seed)
    net = _EXTRACTORS[seed]
    with torch.no_grad():
        feats = torch.cat([net(images[i : i + batch_size]) for i in range(0, images.shape[0], batch_size)])
    return FeatureSet(feats.numpy(), extractor_id=f"random-conv-256/seed={seed}")


def features_for(images, seed: int = 0) -> FeatureSet:
    """Pad/truncate arbitrary-width ``(1, 32, W)`` images to 32x128 and extract features."""
    return default_feature_extractor([pad_or_truncate_eval(torch.as_tensor(im, dtype=torch.float64)) for im in images], seed)


def eval_four_way(pools: dict, synthesize, load_real, n_per_pool: int, seed: int = 0) -> dict[str, float | None]:
    """FID per IV/OOV x seen/unseen pool, in the order IV-S, IV-U, OOV-S, OOV-U.

    ``synthesize(samples)`` returns one generated image per sample (conditioned on
    that sample's writer and word); ``load_real(sample)`` returns the real image.
    Pools with fewer than two samples are reported as ``None``.
    """
    if n_per_pool < 1:
        raise ValueError("n_per_pool must be >= 1")
    table: dict[str, float | None] = {}
    for name in POOL_NAMES:
        pool = pools.get(name, [])
        if len(pool) < 2 or n_per_pool < 2:
            log.warning("pool %s too small for FID; cell left empty", name)
            table[name] = None
            continue
        wanted = [pool[i % len(pool)] for i in range(n_per_pool)]
        fake = features_for(synthesize(wanted), seed)
        real = features_for([load_real(s) for s in pool], seed)
        table[name] = fid(real, fake)
    return table
