"""Grayscale image I/O: binary PGM (P5) natively, PNG through Pillow."""

from __future__ import annotations

from pathlib import Path

import numpy as np


def _pgm_tokens(data: bytes, count: int):
    """Read ``count`` whitespace-separated header tokens, skipping ``#`` comments."""
    tokens, i = [], 0
    while len(tokens) < count:
        while i < len(data) and data[i : i + 1].isspace():
            i += 1
        if data[i : i + 1] == b"#":
            while i < len(data) and data[i : i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        start = i
        while i < len(data) and not data[i : i + 1].isspace():
            i += 1
        if start == i:
            raise ValueError("truncated PGM header")
        tokens.append(data[start:i])
    return tokens, i + 1  # exactly one whitespace byte follows maxval


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    (magic, w, h, maxval), offset = _pgm_tokens(data, 4)
    if magic != b"P5":
        raise ValueError(f"{path}: not a binary PGM (magic {magic!r})")
    w, h, maxval = int(w), int(h), int(maxval)
    if maxval < 256:
        pixels = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=offset)
    else:
        pixels = np.frombuffer(data, dtype=">u2", count=w * h, offset=offset)
    img = pixels.reshape(h, w).astype(np.float64)
    if maxval != 255:
        img = img * (255.0 / maxval)
    return img


def write_pgm(path, img: np.ndarray) -> None:
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError("PGM writer expects a 2-D array")
    if img.dtype != np.uint8:
        img = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    h, w = img.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + img.tobytes())


def read_image(path) -> np.ndarray:
    """Load a grayscale image as float64 in [0, 255]."""
    path = Path(path)
    if path.suffix.lower() in (".pgm", ".pnm"):
        return read_pgm(path)
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.float64)


def write_image(path, img: np.ndarray) -> None:
    path = Path(path)
    if path.suffix.lower() == ".png":
        from PIL import Image

        Image.fromarray(np.clip(np.rint(img), 0, 255).astype(np.uint8), mode="L").save(path)
    else:
        write_pgm(path, img)


def tensor_to_pixels(img) -> np.ndarray:
    """Map a [-1, 1] image (white = +1) back to uint8 pixels."""
    arr = np.asarray(img, dtype=np.float64)
    return np.clip(np.rint((arr + 1.0) * 127.5), 0, 255).astype(np.uint8)
