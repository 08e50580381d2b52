"""Unifont .hex parsing and text-to-glyph content encoding.

Each line of a ``.hex`` font is ``CODEPOINT:PAYLOAD`` where the payload is 32
hex digits (8x16 glyph, one byte per row) or 64 hex digits (16x16 glyph, two
bytes per row). The most significant bit of each row is the leftmost pixel.
"""

from __future__ import annotations

import re
import unicodedata
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

GLYPH_SIZE = 16

_HEX_LINE = re.compile(r"^([0-9A-Fa-f]{4,6}):([0-9A-Fa-f]{32}|[0-9A-Fa-f]{64})$")


class FontError(ValueError):
    """Raised for malformed or inconsistent font files."""


class MissingGlyphError(KeyError):
    def __init__(self, codepoint: int):
        super().__init__(codepoint)
        self.codepoint = codepoint

    def __str__(self) -> str:
        return f"no glyph for U+{self.codepoint:04X}"


@dataclass(frozen=True)
class GlyphTable:
    entries: dict[int, np.ndarray]
    source_path: str = ""

    def __contains__(self, cp: int) -> bool:
        return cp in self.entries

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class ContentSequence:
    tokens: np.ndarray  # (L, 256) uint8 in {0, 1}
    positions: np.ndarray  # (L, d_model) float64
    text: str

    @property
    def length(self) -> int:
        return self.tokens.shape[0]


def bundled_font_path() -> Path:
    """Path of the Unifont subset shipped with the package (Latin, combining marks, Vietnamese)."""
    return Path(str(resources.files("hwgen") / "data" / "unifont_subset.hex"))


def decode_hex_payload(payload: str) -> np.ndarray:
    """Decode a 32- or 64-digit payload into a 16x16 {0,1} bitmap.

    8-wide glyphs are centred with four blank columns on each side.
    """
    raw = bytes.fromhex(payload)
    bitmap = np.zeros((GLYPH_SIZE, GLYPH_SIZE), dtype=np.uint8)
    if len(raw) == 16:
        rows = np.frombuffer(raw, dtype=np.uint8)
        bits = np.unpackbits(rows[:, None], axis=1)  # (16, 8), MSB first
        bitmap[:, 4:12] = bits
    elif len(raw) == 32:
        rows = np.frombuffer(raw, dtype=np.uint8).reshape(16, 2)
        bitmap[:] = np.unpackbits(rows, axis=1)
    else:
        raise FontError(f"payload must be 32 or 64 hex digits, got {len(payload)}")
    return bitmap


def encode_hex_payload(bitmap: np.ndarray) -> str:
    """Inverse of :func:`decode_hex_payload`.

    Bitmaps whose outer four columns are blank on both sides are written in the
    narrow 32-digit form, so centred 8-wide glyphs round-trip to their original line.
    """
    bitmap = np.asarray(bitmap, dtype=np.uint8)
    if bitmap.shape != (GLYPH_SIZE, GLYPH_SIZE):
        raise FontError(f"bitmap must be 16x16, got {bitmap.shape}")
    if not bitmap[:, :4].any() and not bitmap[:, 12:].any():
        return np.packbits(bitmap[:, 4:12], axis=1).tobytes().hex().upper()
    return np.packbits(bitmap, axis=1).tobytes().hex().upper()


def parse_hex_lines(lines, source_path: str = "") -> GlyphTable:
    entries: dict[int, np.ndarray] = {}
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        m = _HEX_LINE.match(line)
        if m is None:
            raise FontError(f"{source_path or '<hex>'}:{lineno}: malformed hex line {line[:40]!r}")
        cp = int(m.group(1), 16)
        if cp in entries:
            raise FontError(f"{source_path or '<hex>'}:{lineno}: duplicate codepoint U+{cp:04X}")
        bitmap = decode_hex_payload(m.group(2))
        bitmap.setflags(write=False)
        entries[cp] = bitmap
    if not entries:
        raise FontError(f"{source_path or '<hex>'}: font file is empty")
    return GlyphTable(entries=entries, source_path=source_path)


def load_hex_font(path) -> GlyphTable:
    path = Path(path)
    with path.open("r", encoding="ascii") as fh:
        return parse_hex_lines(fh, source_path=str(path))


def dump_hex_lines(table: GlyphTable) -> list[str]:
    return [f"{cp:04X}:{encode_hex_payload(bm)}" for cp, bm in sorted(table.entries.items())]


def render_char(table: GlyphTable, cp: int) -> np.ndarray:
    try:
        return table.entries[cp]
    except KeyError:
        raise MissingGlyphError(cp) from None


def _is_mark(ch: str) -> bool:
    return unicodedata.category(ch).startswith("M")


def tokenize(text: str) -> list[list[int]]:
    """Split NFC-normalised ``text`` into visual-character tokens.

    Each token is a list of codepoints: a base followed by any combining marks
    that survived normalisation (i.e. have no precomposed form).
    """
    tokens: list[list[int]] = []
    for ch in unicodedata.normalize("NFC", text):
        if _is_mark(ch) and tokens:
            tokens[-1].append(ord(ch))
        else:
            tokens.append([ord(ch)])
    return tokens


def render_token(table: GlyphTable, codepoints: list[int]) -> np.ndarray:
    bitmap = render_char(table, codepoints[0]).copy()
    for cp in codepoints[1:]:
        bitmap |= render_char(table, cp)
    return bitmap


def sinusoidal_pe(length: int, d: int) -> np.ndarray:
    if length < 1:
        raise ValueError("length must be >= 1")
    if d < 2 or d % 2:
        raise ValueError(f"d must be an even integer >= 2, got {d}")
    pos = np.arange(length, dtype=np.float64)[:, None]
    freq = np.power(10000.0, -np.arange(0, d, 2, dtype=np.float64) / d)
    pe = np.empty((length, d), dtype=np.float64)
    pe[:, 0::2] = np.sin(pos * freq)
    pe[:, 1::2] = np.cos(pos * freq)
    return pe


def render_text(table: GlyphTable, text: str, d_model: int) -> ContentSequence:
    normalized = unicodedata.normalize("NFC", text)
    if not normalized:
        raise ValueError("cannot render an empty string")
    groups = tokenize(normalized)
    tokens = np.stack([render_token(table, g).reshape(-1) for g in groups])
    return ContentSequence(tokens=tokens, positions=sinusoidal_pe(len(groups), d_model), text=normalized)


def text_length(text: str) -> int:
    """Number of content tokens (and hence 16-pixel character cells) for ``text``."""
    return len(tokenize(text))


def ascii_art(bitmap: np.ndarray, ink: str = "#", blank: str = ".") -> str:
    return "\n".join("".join(ink if v else blank for v in row) for row in np.asarray(bitmap))
