"""Minimal binary 8-bit PGM (P5) reader/writer.

The corpus format stores grayscale frames and 0/255 masks as P5 files;
8-bit round-trips are bit-exact.
"""

from __future__ import annotations

import numpy as np


class PgmError(ValueError):
    pass


def _read_tokens(data: bytes, count: int):
    """Pull whitespace-separated header tokens, skipping '#' comments.

    Returns (tokens, offset of the byte after the final separator).
    """
    tokens = []
    i = 0
    while len(tokens) < count:
        if i >= len(data):
            raise PgmError("truncated PGM header")
        ch = data[i:i + 1]
        if ch.isspace():
            i += 1
        elif ch == b"#":
            j = data.find(b"\n", i)
            if j < 0:
                raise PgmError("truncated PGM comment")
            i = j + 1
        else:
            j = i
            while j < len(data) and not data[j:j + 1].isspace():
                j += 1
            tokens.append(data[i:j])
            i = j
    return tokens, i + 1  # single whitespace byte after maxval


def read_pgm(path) -> np.ndarray:
    """Read a binary 8-bit PGM file into a (h, w) uint8 array."""
    with open(path, "rb") as f:
        data = f.read()
    if not data.startswith(b"P5"):
        raise PgmError(f"{path}: not a binary PGM (P5) file")
    tokens, offset = _read_tokens(data[2:], 3)
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise PgmError(f"{path}: malformed PGM header") from exc
    if maxval != 255:
        raise PgmError(f"{path}: only 8-bit PGM supported, maxval={maxval}")
    pixels = data[2 + offset:]
    if len(pixels) < width * height:
        raise PgmError(f"{path}: pixel data truncated "
                       f"({len(pixels)} < {width * height} bytes)")
    return np.frombuffer(pixels[:width * height],
                         dtype=np.uint8).reshape(height, width).copy()


def write_pgm(path, image: np.ndarray) -> None:
    """Write a (h, w) uint8 array as binary 8-bit PGM."""
    img = np.asarray(image)
    if img.ndim != 2 or img.dtype != np.uint8:
        raise PgmError(f"expected 2-D uint8 image, got {img.dtype} {img.shape}")
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(img.tobytes())
