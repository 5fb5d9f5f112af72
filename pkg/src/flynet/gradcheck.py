"""Finite-difference verification of every hand-derived gradient.

Each check builds a small random instance, takes a random linear
objective sum(y * G) of the layer output (so dy = G exactly), and
compares the analytic backward result against central differences
coordinate by coordinate. The end-to-end check drives the full
segmentation loss on a tiny network and samples parameter coordinates
instead of sweeping all of them.

Relative error is norm-scaled: max|analytic - numeric| over the larger
of the two infinity norms. Checks default to float64 with step 1e-4;
float32 mode exists to demonstrate why the loose threshold would be
needed there. All layer calls go through the `layers` module object, so
a test can inject a broken backward and confirm the harness catches it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import layers, metrics, network
from .tensor import Precision

DEFAULT_STEP = 1e-4
DEFAULT_SEEDS = (0, 1, 2)

LAYER_THRESHOLD = {Precision.DOUBLE: 1e-4, Precision.SINGLE: 1e-2}
LOSS_THRESHOLD = {Precision.DOUBLE: 1e-6, Precision.SINGLE: 1e-3}
E2E_THRESHOLD = {Precision.DOUBLE: 1e-3, Precision.SINGLE: 1e-2}


@dataclass(frozen=True)
class CheckResult:
    name: str
    max_rel_err: float
    threshold: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.threshold


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max|a - n| scaled by the larger infinity norm of the two."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(analytic).max(initial=0.0),
                np.abs(numeric).max(initial=0.0), 1e-12)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def _fd_full(objective, arr: np.ndarray, step: float) -> np.ndarray:
    """Central differences of a scalar objective w.r.t. every entry."""
    out = np.zeros_like(arr, dtype=np.float64)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = arr[idx]
        arr[idx] = orig + step
        up = objective()
        arr[idx] = orig - step
        down = objective()
        arr[idx] = orig
        out[idx] = (up - down) / (2.0 * step)
    return out


def _distinct_tensor(rng: np.random.Generator, shape: tuple,
                     dtype) -> np.ndarray:
    """Random tensor whose values are pairwise well separated, so pool
    argmaxes cannot flip under the finite-difference step."""
    n = int(np.prod(shape))
    return rng.permuted(np.linspace(-1.0, 1.0, n)).reshape(shape).astype(dtype)


def _away_from_kink(x: np.ndarray, margin: float) -> np.ndarray:
    sign = np.where(x >= 0, 1.0, -1.0)
    return np.where(np.abs(x) < margin, sign * margin, x)


def _conv_instance(rng, kind: str, dtype):
    in_c, out_c = 3, 4
    spatial = {"conv3x3": 8, "conv1x1": 8, "tconv2": 4}[kind]
    spec = layers.LayerSpec(kind, in_c, out_c)
    params = layers.init_params(spec, rng).astype(dtype)
    # nonzero biases so db errors cannot hide behind an all-zero tensor
    params.bias[:] = rng.standard_normal(out_c).astype(dtype)
    x = rng.standard_normal((2, in_c, spatial, spatial)).astype(dtype)
    return x, params


def check_conv(kind: str, rng: np.random.Generator, step: float,
               dtype) -> dict:
    forward = layers.tconv2_forward if kind == "tconv2" \
        else layers.conv2d_forward
    backward = layers.tconv2_backward if kind == "tconv2" \
        else layers.conv2d_backward
    x, params = _conv_instance(rng, kind, dtype)
    y, cache = forward(x, params)
    g = rng.standard_normal(y.shape).astype(dtype)
    dx, dw, db = backward(cache, params, g)

    def objective():
        out, _ = forward(x, params)
        return float((out.astype(np.float64) * g).sum())

    return {
        f"{kind}.dx": relative_error(dx, _fd_full(objective, x, step)),
        f"{kind}.dw": relative_error(dw, _fd_full(objective, params.weights,
                                                  step)),
        f"{kind}.db": relative_error(db, _fd_full(objective, params.bias,
                                                  step)),
    }


def check_maxpool(rng: np.random.Generator, step: float, dtype) -> dict:
    x = _distinct_tensor(rng, (2, 3, 8, 8), dtype)
    y, cache = layers.maxpool2_forward(x)
    g = rng.standard_normal(y.shape).astype(dtype)
    dx = layers.maxpool2_backward(cache, g)

    def objective():
        out, _ = layers.maxpool2_forward(x)
        return float((out.astype(np.float64) * g).sum())

    return {"maxpool2.dx": relative_error(dx, _fd_full(objective, x, step))}


def check_activation(kind: str, rng: np.random.Generator, step: float,
                     dtype) -> dict:
    x = rng.standard_normal((2, 3, 6, 6)).astype(dtype)
    if kind == "relu":
        x = _away_from_kink(x, 10.0 * step).astype(dtype)
    y, cache = layers.activation_forward(x, kind)
    g = rng.standard_normal(y.shape).astype(dtype)
    dx = layers.activation_backward(cache, g, kind)

    def objective():
        out, _ = layers.activation_forward(x, kind)
        return float((out.astype(np.float64) * g).sum())

    return {f"{kind}.dx": relative_error(dx, _fd_full(objective, x, step))}


def check_concat(rng: np.random.Generator, step: float, dtype) -> dict:
    a = rng.standard_normal((2, 2, 4, 4)).astype(dtype)
    b = rng.standard_normal((2, 3, 4, 4)).astype(dtype)
    y = layers.concat_channels(a, b)
    g = rng.standard_normal(y.shape).astype(dtype)
    da, db = layers.concat_backward(g, a.shape[1])

    def objective():
        return float((layers.concat_channels(a, b).astype(np.float64)
                      * g).sum())

    return {"concat.da": relative_error(da, _fd_full(objective, a, step)),
            "concat.db": relative_error(db, _fd_full(objective, b, step))}


def check_bilinear(rng: np.random.Generator, step: float, dtype) -> dict:
    out = {}
    for factor in (2, 4):
        x = rng.standard_normal((1, 2, 4, 4)).astype(dtype)
        y, cache = layers.bilinear_upsample(x, factor)
        g = rng.standard_normal(y.shape).astype(dtype)
        dx = layers.bilinear_upsample_backward(cache, g)

        def objective():
            up, _ = layers.bilinear_upsample(x, factor)
            return float((up.astype(np.float64) * g).sum())

        out[f"bilinear_up.x{factor}.dx"] = relative_error(
            dx, _fd_full(objective, x, step))
    return out


def check_soft_iou(rng: np.random.Generator, step: float, dtype) -> dict:
    probs = rng.uniform(0.05, 0.95, size=(2, 1, 8, 8)).astype(dtype)
    truth = (rng.random((2, 1, 8, 8)) < 0.4).astype(dtype)
    analytic = metrics.soft_iou_loss(probs, truth).dprobs

    def objective():
        return metrics.soft_iou_loss(probs, truth).loss

    return {"soft_iou.dprobs": relative_error(
        analytic, _fd_full(objective, probs, step))}


def _sample_coords(rng: np.random.Generator, arr: np.ndarray,
                   count: int) -> list:
    flat = rng.choice(arr.size, size=min(count, arr.size), replace=False)
    return [np.unravel_index(i, arr.shape) for i in np.sort(flat)]


def check_end_to_end(arch: str, rng: np.random.Generator, step: float,
                     dtype, input_size: int = 16, base_width: int = 2,
                     coords_per_tensor: int = 6) -> dict:
    """Sampled finite differences of the full loss w.r.t. parameters."""
    build = (network.build_flynet if arch == "flynet"
             else network.build_fcn_baseline)
    spec, params = build(input_size, base_width, rng)
    params = {k: p.astype(dtype) for k, p in params.items()}
    # fresh init keeps biases at zero, which parks dead receptive fields
    # exactly on the relu kink; small random biases break the degeneracy
    for p in params.values():
        p.bias[:] = (0.05 * rng.standard_normal(p.bias.shape)).astype(dtype)
    x = rng.random((2, 1, input_size, input_size)).astype(dtype)
    truth = (rng.random((2, 1, input_size, input_size)) < 0.3).astype(dtype)

    def signature(cache) -> list:
        """Relu sign patterns and pool argmaxes for one forward pass."""
        sig = []
        for node in spec.nodes:
            kind = node.spec.kind
            if kind == "relu":
                sig.append(cache.node_caches[node.id][0] > 0)
            elif kind == "maxpool2":
                sig.append(cache.node_caches[node.id][1])
        return sig

    def loss():
        probs, cache = network.forward(spec, params, x)
        return metrics.soft_iou_loss(probs, truth).loss, signature(cache)

    probs, cache = network.forward(spec, params, x)
    lv = metrics.soft_iou_loss(probs, truth)
    grads = network.backward(spec, params, cache, lv.dprobs)
    base_sig = signature(cache)

    analytic, numeric = [], []
    for nid in sorted(params):
        for attr in ("weights", "bias"):
            arr = getattr(params[nid], attr)
            grad = getattr(grads[nid], attr)
            for idx in _sample_coords(rng, arr, coords_per_tensor):
                orig = arr[idx]
                vals = {}
                smooth = True
                for h in (step, -step, step / 2, -step / 2):
                    arr[idx] = orig + h
                    vals[h], sig = loss()
                    if not all(np.array_equal(a, b)
                               for a, b in zip(sig, base_sig)):
                        smooth = False
                        break
                arr[idx] = orig
                # a perturbation that flips a relu sign or a pool argmax
                # crosses a kink, where the difference quotient does not
                # estimate the (one-sided) analytic gradient; skip it
                if not smooth:
                    continue
                full = (vals[step] - vals[-step]) / (2.0 * step)
                half = (vals[step / 2] - vals[-step / 2]) / step
                # Richardson extrapolation cancels the h^2 truncation term,
                # which this loss's curvature pushes near the tolerance
                numeric.append((4.0 * half - full) / 3.0)
                analytic.append(float(grad[idx]))
    return {f"end_to_end.{arch}": relative_error(np.array(analytic),
                                                 np.array(numeric))}


def run_suite(seeds=DEFAULT_SEEDS, step: float = DEFAULT_STEP,
              precision: Precision = Precision.DOUBLE,
              include_end_to_end: bool = True) -> list:
    """Run every gradient check over several seeds; returns CheckResults
    (worst error per check across seeds), layer checks first."""
    dtype = precision.dtype
    worst: dict = {}
    for seed in seeds:
        rng = np.random.default_rng(seed)
        found: dict = {}
        for kind in ("conv3x3", "conv1x1", "tconv2"):
            found.update(check_conv(kind, rng, step, dtype))
        found.update(check_maxpool(rng, step, dtype))
        found.update(check_activation("relu", rng, step, dtype))
        found.update(check_activation("sigmoid", rng, step, dtype))
        found.update(check_concat(rng, step, dtype))
        found.update(check_bilinear(rng, step, dtype))
        found.update(check_soft_iou(rng, step, dtype))
        if include_end_to_end:
            found.update(check_end_to_end("flynet", rng, step, dtype))
            found.update(check_end_to_end("fcn", rng, step, dtype))
        for name, err in found.items():
            worst[name] = max(worst.get(name, 0.0), err)

    def threshold(name: str) -> float:
        if name.startswith("end_to_end"):
            return E2E_THRESHOLD[precision]
        if name.startswith("soft_iou"):
            return LOSS_THRESHOLD[precision]
        return LAYER_THRESHOLD[precision]

    return [CheckResult(name, err, threshold(name))
            for name, err in worst.items()]
