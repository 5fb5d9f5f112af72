"""Forward and backward passes for every layer kind the networks use.

Convolutions run as batched GEMMs so numpy's BLAS does the heavy lifting;
all gradients are hand-derived (no autodiff). Every function is pure and
dtype-generic: float32 inputs give float32 outputs, float64 inputs (used
by the gradient-check harness) stay float64.

Caches returned by the forward passes hold exactly what the matching
backward pass needs (the input tensor; argmax indices for max pooling)
and are valid only for the forward call that produced them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import ShapeError, check_tensor4

CONV_KINDS = ("conv3x3", "conv1x1", "tconv2")
PARAM_FREE_KINDS = ("maxpool2", "relu", "sigmoid", "concat", "bilinear_up")
KERNEL_SIZE = {"conv3x3": 3, "conv1x1": 1, "tconv2": 2}


@dataclass
class LayerSpec:
    """Declarative description of one layer.

    ``extra`` carries kind-specific settings (currently only the
    ``factor`` of bilinear_up).
    """
    kind: str
    in_channels: int = 0
    out_channels: int = 0
    extra: dict = field(default_factory=dict)

    def has_params(self) -> bool:
        return self.kind in CONV_KINDS


@dataclass
class LayerParams:
    """Learnable state of one conv/tconv layer.

    weights: (out_c, in_c, kh, kw); bias: (out_c,).
    """
    weights: np.ndarray
    bias: np.ndarray

    def astype(self, dtype) -> "LayerParams":
        return LayerParams(self.weights.astype(dtype), self.bias.astype(dtype))


def init_params(spec: LayerSpec, rng: np.random.Generator) -> LayerParams:
    """Initialize weights for a parameterized layer, biases at zero.

    ReLU-followed convs and transposed convs draw He-normal weights,
    std = sqrt(2 / fan_in) with fan_in = in_c*kh*kw. The 1x1 sigmoid head
    draws fan-balanced uniform weights in +-sqrt(6 / (fan_in + fan_out)).
    Deterministic for a given generator state.
    """
    if not spec.has_params():
        raise ValueError(f"layer kind {spec.kind!r} carries no parameters")
    k = KERNEL_SIZE[spec.kind]
    shape = (spec.out_channels, spec.in_channels, k, k)
    fan_in = spec.in_channels * k * k
    if spec.kind == "conv1x1":
        fan_out = spec.out_channels * k * k
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=shape)
    else:
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
    return LayerParams(w.astype(np.float32),
                       np.zeros(spec.out_channels, dtype=np.float32))


# ---------------------------------------------------------------------------
# convolution (3x3 same-padded / 1x1), stride 1


def _conv3_gemm(x: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Same-padded 3x3 convolution of (n, c, h, w) with (o, c, 3, 3) weights.

    One batched GEMM over all nine kernel taps, then nine shifted
    accumulations into a padded output buffer. Keeping the input in its
    native layout avoids the large strided im2col copy.
    """
    n, c, h, w = x.shape
    o = weights.shape[0]
    w9 = np.ascontiguousarray(weights.transpose(2, 3, 0, 1)).reshape(9 * o, c)
    taps = np.matmul(w9, x.reshape(n, c, h * w)).reshape(n, 3, 3, o, h, w)
    ybig = np.zeros((n, o, h + 2, w + 2), dtype=taps.dtype)
    for u in range(3):
        for v in range(3):
            ybig[:, :, 2 - u:2 - u + h, 2 - v:2 - v + w] += taps[:, u, v]
    return np.ascontiguousarray(ybig[:, :, 1:h + 1, 1:w + 1])


def _im2col3(x: np.ndarray) -> np.ndarray:
    """Unfold same-padded 3x3 windows of (n, c, h, w) into GEMM columns.

    Returns (n*h*w, 9*c) with columns in kernel-major (row, col, channel)
    order, built from nine plain slice copies of the padded input.
    """
    n, c, h, w = x.shape
    xpt = np.pad(np.ascontiguousarray(x.transpose(0, 2, 3, 1)),
                 ((0, 0), (1, 1), (1, 1), (0, 0)))
    buf = np.empty((n, h, w, 9, c), dtype=x.dtype)
    for u in range(3):
        for v in range(3):
            buf[:, :, :, 3 * u + v, :] = xpt[:, u:u + h, v:v + w, :]
    return buf.reshape(n * h * w, 9 * c)


def conv2d_forward(x: np.ndarray, params: LayerParams, kernel: int | None = None):
    """Same-padding stride-1 convolution; kernel 3 (pad 1) or 1 (pad 0).

    Returns (y, cache); y has shape (n, out_c, h, w).
    """
    check_tensor4(x, "conv input")
    out_c, in_c, kh, kw = params.weights.shape
    if kernel is None:
        kernel = kh
    if kernel not in (1, 3) or (kh, kw) != (kernel, kernel):
        raise ShapeError(f"conv kernel must be 1x1 or 3x3, got {kh}x{kw}")
    n, c, h, w = x.shape
    if c != in_c:
        raise ShapeError(f"conv expects {in_c} input channels, got {c}")
    if kernel == 3:
        y = _conv3_gemm(x, params.weights)
    else:
        y = np.matmul(params.weights.reshape(out_c, in_c),
                      x.reshape(n, c, h * w)).reshape(n, out_c, h, w)
    y += params.bias.astype(y.dtype)[None, :, None, None]
    return y, (x,)


def conv2d_backward(cache, params: LayerParams, dy: np.ndarray):
    """Gradients of a stride-1 same-padding conv: returns (dx, dw, db)."""
    (x,) = cache
    out_c, in_c, kh, kw = params.weights.shape
    n, c, h, w = x.shape
    if dy.shape != (n, out_c, h, w):
        raise ShapeError(f"dy shape {dy.shape} does not match forward output "
                         f"{(n, out_c, h, w)}")
    db = dy.sum(axis=(0, 2, 3))
    if kh == 3:
        dy_mat = np.ascontiguousarray(dy.transpose(1, 0, 2, 3)
                                      ).reshape(out_c, n * h * w)
        dw = np.ascontiguousarray(
            (dy_mat @ _im2col3(x)).reshape(out_c, 3, 3, in_c)
            .transpose(0, 3, 1, 2))
        # dx is itself a same-padded conv of dy with the channel-swapped,
        # spatially flipped kernel
        w_flip = np.ascontiguousarray(
            params.weights.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])
        dx = _conv3_gemm(dy, w_flip)
    else:
        dw = np.tensordot(dy, x, axes=((0, 2, 3), (0, 2, 3))
                          ).reshape(out_c, in_c, 1, 1)
        dx = np.matmul(params.weights.reshape(out_c, in_c).T,
                       dy.reshape(n, out_c, h * w)).reshape(n, in_c, h, w)
    return dx, dw, db


# ---------------------------------------------------------------------------
# 2x2 max pooling, stride 2


def _pool_windows(x: np.ndarray) -> np.ndarray:
    n, c, h, w = x.shape
    return np.ascontiguousarray(
        x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    ).reshape(n, c, h // 2, w // 2, 4)


def maxpool2_forward(x: np.ndarray):
    """2x2/stride-2 max pooling. Ties go to the first position in
    row-major window order, which keeps the backward pass deterministic.
    """
    check_tensor4(x, "pool input")
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2 needs even spatial dims, got {h}x{w}")
    windows = _pool_windows(x)
    idx = np.argmax(windows, axis=-1)
    y = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]
    return y, (x.shape, idx)


def maxpool2_backward(cache, dy: np.ndarray) -> np.ndarray:
    """Route dy to each window's recorded argmax; zeros elsewhere."""
    x_shape, idx = cache
    n, c, h, w = x_shape
    if dy.shape != idx.shape:
        raise ShapeError(f"dy shape {dy.shape} does not match pooled shape "
                         f"{idx.shape}")
    flat = np.zeros((n, c, h // 2, w // 2, 4), dtype=dy.dtype)
    np.put_along_axis(flat, idx[..., None], dy[..., None], axis=-1)
    return np.ascontiguousarray(
        flat.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    ).reshape(n, c, h, w)


# ---------------------------------------------------------------------------
# 2x2 stride-2 transposed convolution


def tconv2_forward(x: np.ndarray, params: LayerParams):
    """Transposed conv, kernel 2x2 stride 2: doubles spatial dims.

    y[n, o, 2i+u, 2j+v] = sum_c w[o, c, u, v] * x[n, c, i, j] + bias[o].
    """
    check_tensor4(x, "tconv input")
    out_c, in_c, kh, kw = params.weights.shape
    if (kh, kw) != (2, 2):
        raise ShapeError(f"tconv kernel must be 2x2, got {kh}x{kw}")
    n, c, h, w = x.shape
    if c != in_c:
        raise ShapeError(f"tconv expects {in_c} input channels, got {c}")
    x_mat = np.ascontiguousarray(x.transpose(0, 2, 3, 1)).reshape(n * h * w, c)
    w_mat = np.ascontiguousarray(params.weights.transpose(1, 0, 2, 3)
                                 ).reshape(in_c, out_c * 4)
    y = (x_mat @ w_mat).reshape(n, h, w, out_c, 2, 2)
    y = np.ascontiguousarray(y.transpose(0, 3, 1, 4, 2, 5)).reshape(
        n, out_c, 2 * h, 2 * w)
    y += params.bias.astype(y.dtype)[None, :, None, None]
    return y, (x,)


def tconv2_backward(cache, params: LayerParams, dy: np.ndarray):
    """Gradients of the 2x2 stride-2 transposed conv: (dx, dw, db)."""
    (x,) = cache
    out_c, in_c = params.weights.shape[:2]
    n, c, h, w = x.shape
    if dy.shape != (n, out_c, 2 * h, 2 * w):
        raise ShapeError(f"dy shape {dy.shape} does not match forward output "
                         f"{(n, out_c, 2 * h, 2 * w)}")
    dy6 = np.ascontiguousarray(
        dy.reshape(n, out_c, h, 2, w, 2).transpose(0, 2, 4, 1, 3, 5)
    ).reshape(n * h * w, out_c * 4)
    w_mat = np.ascontiguousarray(params.weights.transpose(1, 0, 2, 3)
                                 ).reshape(in_c, out_c * 4)
    dx = dy6 @ w_mat.T
    dx = np.ascontiguousarray(dx.reshape(n, h, w, in_c).transpose(0, 3, 1, 2))
    x_mat = np.ascontiguousarray(x.transpose(0, 2, 3, 1)).reshape(n * h * w, c)
    dw = (x_mat.T @ dy6).reshape(in_c, out_c, 2, 2).transpose(1, 0, 2, 3)
    db = dy.sum(axis=(0, 2, 3))
    return dx, np.ascontiguousarray(dw), db


# ---------------------------------------------------------------------------
# activations


def activation_forward(x: np.ndarray, kind: str):
    """relu: max(x, 0). sigmoid: 1/(1+exp(-x)), clamped to the open (0, 1)
    interval of the working dtype so downstream logs/ratios stay finite.
    """
    check_tensor4(x, "activation input")
    if kind == "relu":
        return np.maximum(x, 0), (x,)
    if kind == "sigmoid":
        with np.errstate(over="ignore"):
            y = 1.0 / (1.0 + np.exp(-x))
        one = x.dtype.type(1)
        zero = x.dtype.type(0)
        np.clip(y, np.nextafter(zero, one), np.nextafter(one, zero), out=y)
        return y.astype(x.dtype, copy=False), (y,)
    raise ValueError(f"unknown activation {kind!r}")


def activation_backward(cache, dy: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        (x,) = cache
        # gradient at exactly 0 is defined as 0
        return np.where(x > 0, dy, dy.dtype.type(0))
    if kind == "sigmoid":
        (y,) = cache
        return dy * y * (1 - y)
    raise ValueError(f"unknown activation {kind!r}")


# ---------------------------------------------------------------------------
# channel concatenation (the skip connections)


def concat_channels(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Concatenate along channels, a's channels first."""
    check_tensor4(a, "a")
    check_tensor4(b, "b")
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(f"concat needs matching batch/spatial dims, got "
                         f"{a.shape} vs {b.shape}")
    return np.concatenate([a, b], axis=1)


def concat_backward(dy: np.ndarray, split_at: int):
    """Split dy back into (da, db) at the stored channel boundary."""
    return dy[:, :split_at].copy(), dy[:, split_at:].copy()


# ---------------------------------------------------------------------------
# fixed bilinear upsampling (FCN decoder)


def _interp_matrix(in_size: int, factor: int, dtype) -> np.ndarray:
    """1-D bilinear interpolation operator (factor*in_size, in_size).

    Output coordinate i samples source (i + 0.5)/factor - 0.5, clamped to
    the valid range.
    """
    out_size = factor * in_size
    a = np.zeros((out_size, in_size), dtype=dtype)
    for i in range(out_size):
        src = (i + 0.5) / factor - 0.5
        src = min(max(src, 0.0), in_size - 1.0)
        lo = int(np.floor(src))
        hi = min(lo + 1, in_size - 1)
        t = src - lo
        a[i, lo] += 1.0 - t
        a[i, hi] += t
    return a


def bilinear_upsample(x: np.ndarray, factor: int):
    """Upsample spatially by an integer factor with fixed bilinear weights."""
    check_tensor4(x, "upsample input")
    if factor < 2:
        raise ValueError(f"upsample factor must be >= 2, got {factor}")
    n, c, h, w = x.shape
    ah = _interp_matrix(h, factor, x.dtype)
    aw = _interp_matrix(w, factor, x.dtype)
    y = np.matmul(np.matmul(ah, x), aw.T)
    return np.ascontiguousarray(y), (ah, aw)


def bilinear_upsample_backward(cache, dy: np.ndarray) -> np.ndarray:
    """Distribute dy through the transpose of the interpolation map."""
    ah, aw = cache
    dx = np.matmul(np.matmul(ah.T, dy), aw)
    return np.ascontiguousarray(dx)
