"""Soft-IOU training loss, hard IOU evaluation metric, and binarization.

Masks are 2-D {0,1} arrays; batched masks mirror the (n, 1, h, w) layout
of prediction tensors. Per-image soft IOU is averaged over the batch so
small-heart frames are not dominated by large-heart frames.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError

SOFT_IOU_EPS = 1e-6


@dataclass
class LossValue:
    loss: float
    dprobs: np.ndarray


def hard_iou(pred: np.ndarray, truth: np.ndarray) -> float:
    """Intersection over union of two binary masks.

    Defined as 1.0 when both masks are empty (agreement on "no heart");
    callers that care can detect that degenerate case by checking areas.
    """
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ShapeError(f"mask shapes differ: {pred.shape} vs {truth.shape}")
    p = pred != 0
    g = truth != 0
    union = np.count_nonzero(p | g)
    if union == 0:
        return 1.0
    return np.count_nonzero(p & g) / union


def soft_iou_loss(probs: np.ndarray, truth: np.ndarray) -> LossValue:
    """Differentiable soft-IOU loss over a batch of probability maps.

    Per image: s = sum(p*g) / (sum(p) + sum(g) - sum(p*g) + eps), and the
    loss is the batch mean of (1 - s). Returns the loss together with its
    exact gradient with respect to probs.
    """
    if probs.shape != truth.shape:
        raise ShapeError(f"probs shape {probs.shape} does not match truth "
                         f"shape {truth.shape}")
    n = probs.shape[0]
    p = probs.reshape(n, -1).astype(np.float64)
    g = truth.reshape(n, -1).astype(np.float64)
    inter = np.sum(p * g, axis=1)
    union = np.sum(p, axis=1) + np.sum(g, axis=1) - inter + SOFT_IOU_EPS
    s = inter / union
    loss = float(np.mean(1.0 - s))
    # d(1-s)/dp_j = -(g_j*U - I*(1 - g_j)) / U^2, averaged over the batch
    grad = -(g * union[:, None] - inter[:, None] * (1.0 - g)) / union[:, None] ** 2
    grad /= n
    dprobs = grad.reshape(probs.shape).astype(probs.dtype)
    return LossValue(loss, dprobs)


def binarize(probs: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Threshold probabilities into a {0,1} mask; p >= threshold maps to 1."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must be in (0, 1), got {threshold}")
    return (np.asarray(probs) >= threshold).astype(np.uint8)
