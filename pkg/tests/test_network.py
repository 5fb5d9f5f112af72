"""Network assembly: graph shape contracts, parameter-count oracle,
forward/backward plumbing across skip connections.
"""

import numpy as np
import pytest

from flynet import network
from flynet.metrics import soft_iou_loss
from flynet.tensor import ShapeError


def expected_param_count(arch: str, base_width: int) -> int:
    """Independent summation over the layer plan: five double-conv
    encoder groups, then (flynet only) four tconv+double-conv decoder
    groups, then a 1x1 head. Each entry is (in_c, out_c, kernel)."""
    plan = []
    prev = 1
    for g in range(1, 6):
        w = base_width * 2 ** (g - 1)
        plan += [(prev, w, 3), (w, w, 3)]
        prev = w
    if arch == "flynet":
        for d in range(1, 5):
            v = base_width * 2 ** (4 - d)
            plan += [(prev, v, 2), (2 * v, v, 3), (v, v, 3)]
            prev = v
    plan.append((prev, 1, 1))
    return sum(i * o * k * k + o for i, o, k in plan)


def test_flynet_parameter_count_matches_oracle():
    spec, params = network.build_flynet(16, 2, np.random.default_rng(0))
    assert network.parameter_count(spec) == expected_param_count("flynet", 2)
    assert network.parameter_count(spec) == 30531
    total = sum(p.weights.size + p.bias.size for p in params.values())
    assert total == 30531


def test_fcn_parameter_count_matches_oracle():
    spec, params = network.build_fcn_baseline(16, 2, np.random.default_rng(0))
    assert network.parameter_count(spec) == expected_param_count("fcn", 2)
    assert network.parameter_count(spec) == 18571


def test_base_width8_count_pinned():
    spec, _ = network.build_flynet(64, 8, np.random.default_rng(0))
    assert network.parameter_count(spec) == 485673
    spec, _ = network.build_fcn_baseline(64, 8, np.random.default_rng(0))
    assert network.parameter_count(spec) == 295033


def test_full_width_counts_pinned():
    spec, _ = network.build_flynet(128, 64, np.random.default_rng(0))
    assert network.parameter_count(spec) == 31030593
    spec, _ = network.build_fcn_baseline(128, 64, np.random.default_rng(0))
    assert network.parameter_count(spec) == 18843073


def test_bottleneck_is_input_over_16():
    spec, _ = network.build_flynet(64, 2, np.random.default_rng(0))
    assert spec.bottleneck_size() == 4
    spec, _ = network.build_flynet(128, 2, np.random.default_rng(0))
    assert spec.bottleneck_size() == 8


def test_forward_output_shape_and_range():
    spec, params = network.build_flynet(32, 2, np.random.default_rng(1))
    x = np.random.default_rng(2).random((3, 1, 32, 32), dtype=np.float32)
    y, cache = network.forward(spec, params, x)
    assert y.shape == (3, 1, 32, 32)
    assert np.all(y > 0.0) and np.all(y < 1.0)
    assert y.dtype == np.float32


def test_fcn_forward_output_shape():
    spec, params = network.build_fcn_baseline(32, 2, np.random.default_rng(1))
    x = np.random.default_rng(2).random((2, 1, 32, 32), dtype=np.float32)
    y, _ = network.forward(spec, params, x)
    assert y.shape == (2, 1, 32, 32)
    assert np.all((y > 0.0) & (y < 1.0))


def test_forward_rejects_wrong_resolution():
    spec, params = network.build_flynet(32, 2, np.random.default_rng(1))
    with pytest.raises(ShapeError):
        network.forward(spec, params,
                        np.zeros((1, 1, 16, 16), dtype=np.float32))


def test_forward_rejects_multichannel_input():
    spec, params = network.build_flynet(32, 2, np.random.default_rng(1))
    with pytest.raises(ShapeError):
        network.forward(spec, params,
                        np.zeros((1, 3, 32, 32), dtype=np.float32))


def test_build_rejects_bad_sizes():
    with pytest.raises(ValueError):
        network.build_flynet(20, 2)  # not a multiple of 16
    with pytest.raises(ValueError):
        network.build_flynet(32, 0)


def test_backward_produces_grad_for_every_param_tensor():
    spec, params = network.build_flynet(16, 2, np.random.default_rng(4))
    x = np.random.default_rng(5).random((2, 1, 16, 16), dtype=np.float32)
    truth = (np.random.default_rng(6).random((2, 1, 16, 16)) < 0.4
             ).astype(np.float32)
    y, cache = network.forward(spec, params, x)
    lv = soft_iou_loss(y, truth)
    grads = network.backward(spec, params, cache, lv.dprobs)
    assert grads.keys() == params.keys()
    for nid, g in grads.items():
        assert g.weights.shape == params[nid].weights.shape
        assert g.bias.shape == params[nid].bias.shape
        assert np.all(np.isfinite(g.weights)) and np.all(np.isfinite(g.bias))


def test_spec_roundtrips_through_dict():
    spec, _ = network.build_flynet(32, 4, np.random.default_rng(0))
    clone = network.NetworkSpec.from_dict(spec.to_dict())
    assert clone.to_dict() == spec.to_dict()
    assert clone.input_size == 32 and clone.base_width == 4


def test_init_is_deterministic_in_seed():
    _, a = network.build_flynet(16, 2, np.random.default_rng(42))
    _, b = network.build_flynet(16, 2, np.random.default_rng(42))
    assert all(np.array_equal(a[k].weights, b[k].weights) for k in a)
