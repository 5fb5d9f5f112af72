"""Declarative layer graphs and whole-network forward/backward passes.

Two architectures exist. The main encoder-decoder ("flynet"): five
encoder groups of two same-padded 3x3 convs each, the first four
followed by 2x2 max pooling, then four decoder groups of a 2x2 stride-2
transposed conv (halving channels, doubling resolution), a skip
concatenation with the mirrored encoder output, and two more 3x3 convs;
a 1x1 conv + sigmoid head emits per-pixel heart probabilities. The
coarse baseline ("fcn"): the same encoder, a 1x1 conv to one channel,
and a single fixed x16 bilinear upsample before the sigmoid.

Networks are pure data: a build from a given seed is reproducible, and
forward/backward never mutate the parameter set.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import layers as L
from .layers import LayerParams, LayerSpec
from .tensor import ShapeError

INPUT = "input"
POOL_STAGES = 4  # encoder downsampling factor is 2**POOL_STAGES


@dataclass
class NetNode:
    id: str
    spec: LayerSpec
    inputs: list = field(default_factory=list)


@dataclass
class NetworkSpec:
    name: str
    input_size: int
    base_width: int
    nodes: list

    def bottleneck_size(self) -> int:
        return self.input_size // 2 ** POOL_STAGES

    def param_nodes(self):
        return [n for n in self.nodes if n.spec.has_params()]

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "input_size": self.input_size,
            "base_width": self.base_width,
            "nodes": [
                {"id": n.id, "kind": n.spec.kind,
                 "in_channels": n.spec.in_channels,
                 "out_channels": n.spec.out_channels,
                 "extra": n.spec.extra, "inputs": list(n.inputs)}
                for n in self.nodes
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        nodes = [
            NetNode(nd["id"],
                    LayerSpec(nd["kind"], nd["in_channels"],
                              nd["out_channels"], dict(nd["extra"])),
                    list(nd["inputs"]))
            for nd in d["nodes"]
        ]
        return cls(d["name"], d["input_size"], d["base_width"], nodes)


@dataclass
class NetCache:
    """Per-node forward caches plus (by reference) every activation."""
    spec_name: str
    batch_shape: tuple
    node_caches: dict
    activations: dict


def parameter_count(spec: NetworkSpec) -> int:
    total = 0
    for node in spec.param_nodes():
        k = L.KERNEL_SIZE[node.spec.kind]
        total += (node.spec.out_channels * node.spec.in_channels * k * k
                  + node.spec.out_channels)
    return total


def _check_build_args(input_size: int, base_width: int) -> None:
    if input_size % 2 ** POOL_STAGES != 0 or input_size <= 0:
        raise ValueError(f"input_size must be a positive multiple of "
                         f"{2 ** POOL_STAGES}, got {input_size}")
    if base_width < 1:
        raise ValueError(f"base_width must be >= 1, got {base_width}")


def _encoder_nodes(base_width: int):
    """Shared five-group encoder; returns (nodes, skip ids, final id/width)."""
    nodes = []
    skips = {}
    prev, prev_c = INPUT, 1
    for g in range(1, 6):
        width = base_width * 2 ** (g - 1)
        for j in (1, 2):
            cid = f"enc{g}_conv{j}"
            rid = f"enc{g}_relu{j}"
            nodes.append(NetNode(cid, LayerSpec("conv3x3", prev_c, width), [prev]))
            nodes.append(NetNode(rid, LayerSpec("relu", width, width), [cid]))
            prev, prev_c = rid, width
        skips[g] = prev
        if g <= POOL_STAGES:
            pid = f"enc{g}_pool"
            nodes.append(NetNode(pid, LayerSpec("maxpool2", width, width), [prev]))
            prev = pid
    return nodes, skips, prev, prev_c


def build_flynet(input_size: int = 128, base_width: int = 64,
                 rng: np.random.Generator | None = None):
    """Assemble the encoder-decoder network; returns (NetworkSpec, ParamSet)."""
    _check_build_args(input_size, base_width)
    nodes, skips, prev, prev_c = _encoder_nodes(base_width)
    for d in range(1, 5):
        mirror = 5 - d
        width = base_width * 2 ** (mirror - 1)
        tid = f"dec{d}_tconv"
        nodes.append(NetNode(tid, LayerSpec("tconv2", prev_c, width), [prev]))
        cid = f"dec{d}_concat"
        nodes.append(NetNode(cid, LayerSpec("concat", 2 * width, 2 * width),
                             [tid, skips[mirror]]))
        prev, prev_c = cid, 2 * width
        for j in (1, 2):
            conv_id = f"dec{d}_conv{j}"
            relu_id = f"dec{d}_relu{j}"
            nodes.append(NetNode(conv_id, LayerSpec("conv3x3", prev_c, width),
                                 [prev]))
            nodes.append(NetNode(relu_id, LayerSpec("relu", width, width),
                                 [conv_id]))
            prev, prev_c = relu_id, width
    nodes.append(NetNode("head_conv", LayerSpec("conv1x1", prev_c, 1), [prev]))
    nodes.append(NetNode("head_sigmoid", LayerSpec("sigmoid", 1, 1),
                         ["head_conv"]))
    spec = NetworkSpec("flynet", input_size, base_width, nodes)
    return spec, init_param_set(spec, rng or np.random.default_rng())


def build_fcn_baseline(input_size: int = 128, base_width: int = 64,
                       rng: np.random.Generator | None = None):
    """Same encoder, but a single fixed bilinear-upsampling decoder."""
    _check_build_args(input_size, base_width)
    nodes, _, prev, prev_c = _encoder_nodes(base_width)
    nodes.append(NetNode("head_conv", LayerSpec("conv1x1", prev_c, 1), [prev]))
    nodes.append(NetNode("head_upsample",
                         LayerSpec("bilinear_up", 1, 1,
                                   {"factor": 2 ** POOL_STAGES}),
                         ["head_conv"]))
    nodes.append(NetNode("head_sigmoid", LayerSpec("sigmoid", 1, 1),
                         ["head_upsample"]))
    spec = NetworkSpec("fcn", input_size, base_width, nodes)
    return spec, init_param_set(spec, rng or np.random.default_rng())


def init_param_set(spec: NetworkSpec, rng: np.random.Generator) -> dict:
    """Fresh parameters for every parameterized node, in graph order."""
    return {n.id: L.init_params(n.spec, rng) for n in spec.param_nodes()}


def forward(spec: NetworkSpec, params: dict, batch: np.ndarray):
    """Run the graph; returns (probs, cache) with probs in (0, 1)."""
    n, c, h, w = batch.shape if batch.ndim == 4 else (None,) * 4
    if c != 1 or h != spec.input_size or w != spec.input_size:
        raise ShapeError(
            f"expected batch of shape (n, 1, {spec.input_size}, "
            f"{spec.input_size}), got {getattr(batch, 'shape', None)}")
    acts = {INPUT: batch}
    caches = {}
    for node in spec.nodes:
        kind = node.spec.kind
        x = acts[node.inputs[0]]
        if kind in ("conv3x3", "conv1x1"):
            y, cache = L.conv2d_forward(x, params[node.id])
        elif kind == "tconv2":
            y, cache = L.tconv2_forward(x, params[node.id])
        elif kind == "maxpool2":
            y, cache = L.maxpool2_forward(x)
        elif kind in ("relu", "sigmoid"):
            y, cache = L.activation_forward(x, kind)
        elif kind == "concat":
            b = acts[node.inputs[1]]
            y = L.concat_channels(x, b)
            cache = x.shape[1]
        elif kind == "bilinear_up":
            y, cache = L.bilinear_upsample(x, node.spec.extra["factor"])
        else:
            raise ValueError(f"unknown layer kind {kind!r}")
        acts[node.id] = y
        caches[node.id] = cache
    probs = acts[spec.nodes[-1].id]
    return probs, NetCache(spec.name, batch.shape, caches, acts)


def backward(spec: NetworkSpec, params: dict, cache: NetCache,
             dprobs: np.ndarray) -> dict:
    """Reverse-mode gradients for every parameter tensor.

    Gradients flowing into a node used by several consumers (the skip
    connections) are accumulated by summation.
    """
    if cache.spec_name != spec.name or cache.batch_shape[0] != dprobs.shape[0]:
        raise ShapeError("cache does not match this network/batch")
    out_id = spec.nodes[-1].id
    if dprobs.shape != cache.activations[out_id].shape:
        raise ShapeError(f"dprobs shape {dprobs.shape} does not match output "
                         f"shape {cache.activations[out_id].shape}")
    d_acts = {out_id: dprobs}
    grads: dict = {}
    for node in reversed(spec.nodes):
        dy = d_acts.pop(node.id)
        kind = node.spec.kind
        node_cache = cache.node_caches[node.id]
        if kind in ("conv3x3", "conv1x1"):
            dx, dw, db = L.conv2d_backward(node_cache, params[node.id], dy)
            grads[node.id] = LayerParams(dw, db)
            dins = [dx]
        elif kind == "tconv2":
            dx, dw, db = L.tconv2_backward(node_cache, params[node.id], dy)
            grads[node.id] = LayerParams(dw, db)
            dins = [dx]
        elif kind == "maxpool2":
            dins = [L.maxpool2_backward(node_cache, dy)]
        elif kind in ("relu", "sigmoid"):
            dins = [L.activation_backward(node_cache, dy, kind)]
        elif kind == "concat":
            da, db_ = L.concat_backward(dy, node_cache)
            dins = [da, db_]
        elif kind == "bilinear_up":
            dins = [L.bilinear_upsample_backward(node_cache, dy)]
        else:
            raise ValueError(f"unknown layer kind {kind!r}")
        for src, d in zip(node.inputs, dins):
            if src in d_acts:
                d_acts[src] = d_acts[src] + d
            else:
                d_acts[src] = d
    return grads
