"""Synthetic handwriting-like corpus: Unifont glyphs pushed through per-writer distortions.

Each writer style is a fixed recipe (vertical stretch, slant, stroke weight,
baseline wobble, ink tone). Images come out at the training geometry, 32 x 16L.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import images
from .dataio import CHAR_WIDTH, HEIGHT, SplitSpec, write_manifest, write_split
from .glyphs import GlyphTable, render_token, tokenize

SMOKE_WORDS = ("cat", "dog", "sun", "map", "tree", "bird", "lamp", "fish", "road", "hill")


@dataclass(frozen=True)
class WriterStyle:
    name: str
    stretch: float = 2.0  # vertical scale of the 16-row glyph
    slant: float = 0.0  # horizontal pixels per row, positive leans right
    bold: int = 0  # horizontal dilation radius
    wobble: float = 0.0  # baseline amplitude in pixels
    ink: int = 0  # pixel value of strokes (0 = black)


SMOKE_STYLES = (
    WriterStyle("bold-slant", stretch=1.9, slant=0.3, bold=1, wobble=0.0, ink=0),
    WriterStyle("thin-wavy", stretch=1.4, slant=-0.1, bold=0, wobble=2.5, ink=70),
)


def render_word(table: GlyphTable, word: str, style: WriterStyle) -> np.ndarray:
    """Render ``word`` as a uint8 image of shape (32, 16 * L); paper white is 255."""
    groups = tokenize(word)
    width = CHAR_WIDTH * len(groups)
    ink = np.zeros((HEIGHT, width), dtype=bool)
    rows = np.arange(HEIGHT)
    for k, g in enumerate(groups):
        glyph = render_token(table, g).astype(bool)
        offset = style.wobble * np.sin(1.3 * k + 0.7)
        # sample the glyph at stretched, centred, wobbled row coordinates
        src = (rows - HEIGHT / 2 - offset) / style.stretch + 8.0
        src_i = np.floor(src).astype(int)
        valid = (src_i >= 0) & (src_i < 16)
        cell = np.zeros((HEIGHT, CHAR_WIDTH), dtype=bool)
        cell[valid] = glyph[src_i[valid]]
        ink[:, k * CHAR_WIDTH : (k + 1) * CHAR_WIDTH] |= cell
    if style.slant:
        sheared = np.zeros_like(ink)
        for r in range(HEIGHT):
            shift = int(round(style.slant * (HEIGHT / 2 - r)))
            if shift > 0:
                sheared[r, shift:] = ink[r, :-shift]
            elif shift < 0:
                sheared[r, :shift] = ink[r, -shift:]
            else:
                sheared[r] = ink[r]
        ink = sheared
    for _ in range(style.bold):
        grown = ink.copy()
        grown[:, 1:] |= ink[:, :-1]
        grown[1:, :] |= ink[:-1, :]
        ink = grown
    out = np.full((HEIGHT, width), 255, dtype=np.uint8)
    out[ink] = style.ink
    return out


def write_corpus(
    out_dir,
    table: GlyphTable,
    words=SMOKE_WORDS,
    styles=SMOKE_STYLES,
    test_styles=(),
) -> tuple[Path, Path]:
    """Write PGM images, ``manifest.jsonl`` and ``split.txt``; returns (manifest, split) paths.

    ``styles`` become training writers; ``test_styles`` are held out.
    """
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    records = []
    for style in (*styles, *test_styles):
        for i, word in enumerate(words):
            rel = Path("images") / f"{style.name}_{i:03d}.pgm"
            images.write_pgm(out_dir / rel, render_word(table, word, style))
            records.append((rel.as_posix(), word, style.name))
    manifest = out_dir / "manifest.jsonl"
    write_manifest(manifest, records)
    writers = [s.name for s in (*styles, *test_styles)]
    split = SplitSpec(set(range(len(styles))), set(range(len(styles), len(writers))), set(words))
    split_path = out_dir / "split.txt"
    write_split(split_path, split, writers)
    return manifest, split_path
