"""IOU metrics: hard/soft agreement, counting oracle, loss gradient."""

import numpy as np
import pytest

from flynet.metrics import SOFT_IOU_EPS, binarize, hard_iou, soft_iou_loss
from flynet.tensor import ShapeError


def test_hard_iou_hand_cases():
    a = np.array([[1, 1], [0, 0]], dtype=np.uint8)
    b = np.array([[1, 0], [1, 0]], dtype=np.uint8)
    assert hard_iou(a, a) == 1.0
    assert hard_iou(a, 1 - a) == 0.0
    assert hard_iou(a, b) == pytest.approx(1 / 3)


def test_hard_iou_empty_masks_agree():
    z = np.zeros((4, 4), dtype=np.uint8)
    assert hard_iou(z, z) == 1.0
    assert hard_iou(z, np.ones_like(z)) == 0.0


def test_hard_iou_matches_counting_oracle_on_1000_pairs():
    rng = np.random.default_rng(99)
    for _ in range(1000):
        a = (rng.random((12, 12)) < 0.35).astype(np.uint8)
        b = (rng.random((12, 12)) < 0.35).astype(np.uint8)
        inter = int(np.sum((a == 1) & (b == 1)))
        union = int(np.sum((a == 1) | (b == 1)))
        expect = 1.0 if union == 0 else inter / union
        got = hard_iou(a, b)
        assert got == pytest.approx(expect, abs=1e-12)
        assert got == pytest.approx(hard_iou(b, a), abs=1e-12)  # symmetric
        assert 0.0 <= got <= 1.0


def test_hard_iou_shape_mismatch():
    with pytest.raises(ShapeError):
        hard_iou(np.zeros((2, 2)), np.zeros((3, 3)))


def test_soft_iou_equals_hard_on_binary_input():
    rng = np.random.default_rng(5)
    for _ in range(50):
        m = (rng.random((1, 1, 10, 10)) < 0.4).astype(np.float32)
        g = (rng.random((1, 1, 10, 10)) < 0.4).astype(np.float32)
        if not (m.any() or g.any()):
            continue  # empty/empty is defined only for the hard metric
        soft = 1.0 - soft_iou_loss(m, g).loss
        assert soft == pytest.approx(hard_iou(m[0, 0], g[0, 0]), abs=1e-5)


def test_soft_iou_loss_batch_mean():
    # image 0 matches truth exactly, image 1 is fully wrong
    p = np.stack([np.ones((1, 4, 4)), np.zeros((1, 4, 4))]).astype(np.float32)
    g = np.ones((2, 1, 4, 4), dtype=np.float32)
    lv = soft_iou_loss(p, g)
    # losses are ~0 and ~1, so the batch mean sits at 0.5
    assert lv.loss == pytest.approx(0.5, abs=1e-4)


def test_soft_iou_gradient_matches_finite_difference():
    rng = np.random.default_rng(11)
    p = rng.uniform(0.1, 0.9, size=(2, 1, 6, 6))
    g = (rng.random((2, 1, 6, 6)) < 0.4).astype(np.float64)
    lv = soft_iou_loss(p, g)
    h = 1e-7
    flat = p.reshape(-1)
    for idx in (0, 17, 35, 70):
        orig = flat[idx]
        flat[idx] = orig + h
        up = soft_iou_loss(p, g).loss
        flat[idx] = orig - h
        down = soft_iou_loss(p, g).loss
        flat[idx] = orig
        assert (up - down) / (2 * h) == pytest.approx(
            lv.dprobs.reshape(-1)[idx], rel=1e-4, abs=1e-10)


def test_soft_iou_epsilon_guards_empty_union():
    z = np.zeros((1, 1, 4, 4), dtype=np.float32)
    lv = soft_iou_loss(z, z)
    assert np.isfinite(lv.loss)
    assert np.all(np.isfinite(lv.dprobs))
    assert SOFT_IOU_EPS > 0


def test_binarize_threshold_is_inclusive():
    p = np.array([0.49, 0.5, 0.51], dtype=np.float32)
    assert np.array_equal(binarize(p, 0.5), [0, 1, 1])
    assert binarize(p).dtype == np.uint8


def test_binarize_rejects_degenerate_thresholds():
    with pytest.raises(ValueError):
        binarize(np.zeros(3), 0.0)
    with pytest.raises(ValueError):
        binarize(np.zeros(3), 1.0)
