"""Manifests, image preprocessing, style-set sampling and evaluation splits."""

from __future__ import annotations

import json
import logging
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from . import images
from .glyphs import text_length

log = logging.getLogger(__name__)

HEIGHT = 32
CHAR_WIDTH = 16
EVAL_WIDTH = 128
POOL_NAMES = ("IV-S", "IV-U", "OOV-S", "OOV-U")


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class Sample:
    image_path: str
    transcript: str
    writer_id: int


@dataclass
class StyleSet:
    writer_id: int
    images: list[torch.Tensor]  # each (1, 32, W)

    def __post_init__(self):
        if not self.images:
            raise ValueError("a style set needs at least one image")
        for img in self.images:
            if img.shape[-2] != HEIGHT:
                raise ValueError(f"style image height must be {HEIGHT}, got {img.shape[-2]}")

    @property
    def size(self) -> int:
        return len(self.images)


@dataclass
class SplitSpec:
    train_writers: set[int]
    test_writers: set[int]
    train_vocab: set[str] = field(default_factory=set)

    def __post_init__(self):
        overlap = self.train_writers & self.test_writers
        if overlap:
            raise ValueError(f"writers in both train and test: {sorted(overlap)}")
        self.train_vocab = {unicodedata.normalize("NFC", w) for w in self.train_vocab}


def load_manifest(path) -> tuple[list[Sample], list[str]]:
    """Read a JSON-lines manifest with keys ``image``, ``text``, ``writer``.

    Writer tags get dense ids in order of first appearance. Relative image paths
    are resolved against the manifest's directory. Images are not opened here.
    """
    path = Path(path)
    root = path.parent
    registry: dict[str, int] = {}
    samples: list[Sample] = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            for key in ("image", "text", "writer"):
                if key not in rec:
                    raise ManifestError(f"{path}:{lineno}: missing field {key!r}")
            text = unicodedata.normalize("NFC", str(rec["text"]))
            if not text:
                raise ManifestError(f"{path}:{lineno}: empty transcript")
            tag = str(rec["writer"])
            wid = registry.setdefault(tag, len(registry))
            img = Path(rec["image"])
            samples.append(Sample(str(img if img.is_absolute() else root / img), text, wid))
    if not samples:
        raise ManifestError(f"{path}: manifest is empty")
    return samples, list(registry)


def write_manifest(path, records) -> None:
    """Write ``(image, text, writer)`` records as JSON lines."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for image, text, writer in records:
            fh.write(json.dumps({"image": str(image), "text": text, "writer": writer}, ensure_ascii=False))
            fh.write("\n")


def preprocess_image(raw, transcript_len: int, dtype=torch.float32) -> torch.Tensor:
    """Resize a [0, 255] grayscale image to 32 x 16L and map it to [-1, 1] (white = +1).

    Bilinear with half-pixel centres: source = (dst + 0.5) * scale - 0.5.
    """
    raw = torch.as_tensor(np.asarray(raw, dtype=np.float64))
    if raw.ndim != 2 or raw.shape[0] == 0 or raw.shape[1] == 0:
        raise ValueError(f"expected a non-empty 2-D image, got shape {tuple(raw.shape)}")
    if transcript_len < 1:
        raise ValueError("transcript length must be >= 1")
    x = (raw / 127.5 - 1.0)[None, None]
    target = (HEIGHT, CHAR_WIDTH * transcript_len)
    if tuple(x.shape[-2:]) != target:
        x = F.interpolate(x, size=target, mode="bilinear", align_corners=False)
    return x[0].clamp(-1.0, 1.0).to(dtype)


def pad_or_truncate_eval(img: torch.Tensor, width: int = EVAL_WIDTH) -> torch.Tensor:
    if img.shape[-2] != HEIGHT:
        raise ValueError(f"image height must be {HEIGHT}, got {img.shape[-2]}")
    w = img.shape[-1]
    if w > width:
        return img[..., :width]
    if w < width:
        return F.pad(img, (0, width - w), value=1.0)
    return img


class Dataset:
    """Samples plus a lazily filled cache of preprocessed images."""

    def __init__(self, samples: list[Sample], writers: list[str], dtype=torch.float32):
        self.samples = samples
        self.writers = writers
        self.dtype = dtype
        self._cache: dict[int, torch.Tensor] = {}
        self.by_writer: dict[int, list[int]] = {}
        for i, s in enumerate(samples):
            self.by_writer.setdefault(s.writer_id, []).append(i)

    @classmethod
    def from_manifest(cls, path, dtype=torch.float32) -> "Dataset":
        samples, writers = load_manifest(path)
        return cls(samples, writers, dtype=dtype)

    def __len__(self) -> int:
        return len(self.samples)

    def image(self, index: int) -> torch.Tensor:
        if index not in self._cache:
            s = self.samples[index]
            self._cache[index] = preprocess_image(images.read_image(s.image_path), text_length(s.transcript), self.dtype)
        return self._cache[index]

    @property
    def vocabulary(self) -> list[str]:
        return sorted({s.transcript for s in self.samples})


def select_style_indices(samples, writer_id: int, P: int, rng_seed) -> list[int]:
    """Indices of ``P`` samples of one writer; without replacement when the writer has enough."""
    pool = [i for i, s in enumerate(samples) if s.writer_id == writer_id]
    if not pool:
        raise KeyError(f"unknown writer id {writer_id}")
    if P < 1:
        raise ValueError("P must be >= 1")
    rng = np.random.default_rng(rng_seed)
    picks = rng.choice(len(pool), size=P, replace=len(pool) < P)
    return [pool[int(k)] for k in picks]


def sample_style_set(dataset: Dataset, writer_id: int, P: int, rng_seed) -> StyleSet:
    idx = select_style_indices(dataset.samples, writer_id, P, rng_seed)
    return StyleSet(writer_id, [dataset.image(i) for i in idx])


def build_eval_grid(split: SplitSpec, samples) -> dict[str, list[Sample]]:
    """Partition eval samples by (word in training vocabulary) x (writer seen in training)."""
    pools: dict[str, list[Sample]] = {name: [] for name in POOL_NAMES}
    for s in samples:
        iv = unicodedata.normalize("NFC", s.transcript) in split.train_vocab
        seen = s.writer_id in split.train_writers
        pools[("IV" if iv else "OOV") + ("-S" if seen else "-U")].append(s)
    for name, pool in pools.items():
        if not pool:
            log.warning("evaluation pool %s is empty", name)
    return pools


def load_split(path, writers: list[str]) -> SplitSpec:
    """Read a split file with ``[train_writers]``, ``[test_writers]`` and ``[train_vocab]`` sections.

    Writer entries are writer tags as they appear in the manifest.
    """
    registry = {tag: i for i, tag in enumerate(writers)}
    sections: dict[str, list[str]] = {"train_writers": [], "test_writers": [], "train_vocab": []}
    current = None
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if line.startswith("[") and line.endswith("]"):
                current = line[1:-1]
                if current not in sections:
                    raise ManifestError(f"{path}:{lineno}: unknown section {current!r}")
                continue
            if current is None:
                raise ManifestError(f"{path}:{lineno}: entry before any section header")
            sections[current].append(line.strip() if current != "train_vocab" else line)

    def ids(tags):
        out = set()
        for t in tags:
            if t not in registry:
                raise ManifestError(f"{path}: writer {t!r} not in manifest")
            out.add(registry[t])
        return out

    return SplitSpec(ids(sections["train_writers"]), ids(sections["test_writers"]), set(sections["train_vocab"]))


def write_split(path, split: SplitSpec, writers: list[str]) -> None:
    lines = ["[train_writers]", *(writers[i] for i in sorted(split.train_writers))]
    lines += ["[test_writers]", *(writers[i] for i in sorted(split.test_writers))]
    lines += ["[train_vocab]", *sorted(split.train_vocab)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def make_split(samples, n_writers: int, test_fraction: float, seed: int) -> SplitSpec:
    rng = np.random.default_rng(seed)
    order = rng.permutation(n_writers)
    n_test = int(round(n_writers * test_fraction))
    test = {int(w) for w in order[:n_test]}
    train = {int(w) for w in order[n_test:]}
    vocab = {s.transcript for s in samples if s.writer_id in train}
    return SplitSpec(train, test, vocab)
