"""Rank-4 tensor primitives shared by every other module.

Tensors are plain ``numpy.ndarray`` values of shape ``(n, c, h, w)``
(batch, channels, height, width), C-contiguous with ``w`` fastest.
float32 is the working precision; float64 exists for the gradient-check
harness, where finite differences would otherwise drown in rounding.
All operations are pure: inputs are never mutated.
"""

from __future__ import annotations

from enum import Enum

import numpy as np


class Precision(Enum):
    SINGLE = "single"
    DOUBLE = "double"

    @property
    def dtype(self):
        return np.float32 if self is Precision.SINGLE else np.float64


FLOAT_DTYPES = (np.float32, np.float64)


class ShapeError(ValueError):
    """Raised when tensor shapes violate an operation's contract."""


def tensor4(data, dtype=np.float32) -> np.ndarray:
    """Build a rank-4 tensor, accepting nested lists or arrays of rank <= 4.

    Missing leading axes are added as singleton batch/channel dims, so a
    2-D ``h x w`` plane becomes ``(1, 1, h, w)``.
    """
    a = np.asarray(data, dtype=dtype)
    if a.ndim > 4:
        raise ShapeError(f"rank-4 tensor expected, got rank {a.ndim}")
    while a.ndim < 4:
        a = a[np.newaxis]
    return np.ascontiguousarray(a)


def check_tensor4(a: np.ndarray, name: str = "tensor") -> np.ndarray:
    if not isinstance(a, np.ndarray) or a.ndim != 4:
        raise ShapeError(f"{name} must be a rank-4 array, got "
                         f"{getattr(a, 'shape', type(a))}")
    return a


def zip_elementwise(a: np.ndarray, b: np.ndarray, op: str) -> np.ndarray:
    """Elementwise add/sub/mul of two equally-shaped rank-4 tensors."""
    check_tensor4(a, "a")
    check_tensor4(b, "b")
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    if op == "add":
        return a + b
    if op == "sub":
        return a - b
    if op == "mul":
        return a * b
    raise ValueError(f"unknown op {op!r}, expected add/sub/mul")


def reduce_sum(a: np.ndarray) -> float:
    """Sum over all elements.

    numpy's reduction order is fixed for a given shape and layout, so the
    result is bit-reproducible run to run (and more accurate than a naive
    ascending scan thanks to pairwise summation).
    """
    check_tensor4(a)
    return float(np.sum(a))


def shift2d(a: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """Shift the spatial plane by (dy, dx) pixels, zero-filling vacated area.

    result[n, c, y, x] = a[n, c, y - dy, x - dx] where in range, else 0.
    """
    check_tensor4(a)
    n, c, h, w = a.shape
    if abs(dy) >= h or abs(dx) >= w:
        raise ShapeError(f"shift ({dy}, {dx}) out of range for {h}x{w} frame")
    out = np.zeros_like(a)
    ys_out = slice(max(dy, 0), h + min(dy, 0))
    xs_out = slice(max(dx, 0), w + min(dx, 0))
    ys_in = slice(max(-dy, 0), h + min(-dy, 0))
    xs_in = slice(max(-dx, 0), w + min(-dx, 0))
    out[:, :, ys_out, xs_out] = a[:, :, ys_in, xs_in]
    return out


def rotate90(a: np.ndarray, quarter_turns: int) -> np.ndarray:
    """Rotate the spatial plane counter-clockwise by 90 * quarter_turns degrees.

    Requires square frames; channels/batch untouched.
    """
    check_tensor4(a)
    _, _, h, w = a.shape
    if h != w:
        raise ShapeError(f"rotate90 requires square frames, got {h}x{w}")
    if quarter_turns not in (1, 2, 3):
        raise ValueError(f"quarter_turns must be 1, 2 or 3, got {quarter_turns}")
    return np.ascontiguousarray(np.rot90(a, k=quarter_turns, axes=(2, 3)))


def pad_zero(a: np.ndarray, p: int) -> np.ndarray:
    """Pad the spatial plane with a zero border of width p on every side."""
    check_tensor4(a)
    if p < 0:
        raise ValueError(f"pad width must be >= 0, got {p}")
    if p == 0:
        return a.copy()
    return np.pad(a, ((0, 0), (0, 0), (p, p), (p, p)))
