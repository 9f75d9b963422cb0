"""Loss and metric functions for the segmentation and classification tasks.

The loss functions come in value-only and value-plus-gradient forms; the
gradient forms back the corresponding tape ops, the value forms serve
evaluation loops and tests.
"""

from __future__ import annotations

import numpy as np

JACCARD_EPS = 1.0  # smoothing constant; keeps the gradient bounded on empty masks


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _check_binary(t: np.ndarray, what: str) -> None:
    if not np.all((t == 0.0) | (t == 1.0)):
        raise ValueError(f"{what} must be strictly binary")


def _check_shapes(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def jaccard_bce_with_grad(logits, targets) -> tuple[float, np.ndarray]:
    """Binary cross entropy with logits plus a soft Jaccard penalty.

    loss = mean(BCE(z, t)) + 1 - (sum(p*t) + eps) / (sum(p) + sum(t) - sum(p*t) + eps)
    with p = sigmoid(z). Returns the scalar loss and d(loss)/d(logits).
    """
    z = np.asarray(logits, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    _check_shapes(z, t)
    _check_binary(t, "targets")

    # numerically stable BCE-with-logits
    bce = np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))
    n = z.size
    p = _sigmoid(z)

    inter = float(np.sum(p * t))
    union = float(np.sum(p) + np.sum(t)) - inter
    num = inter + JACCARD_EPS
    den = union + JACCARD_EPS
    loss = float(np.mean(bce)) + 1.0 - num / den

    # dJ/dp_i = (t_i * den - num * (1 - t_i)) / den^2; chain through sigmoid
    dj_dp = (t * den - num * (1.0 - t)) / (den * den)
    grad = (p - t) / n - dj_dp * p * (1.0 - p)
    return loss, grad


def jaccard_bce_loss(logits, targets) -> float:
    return jaccard_bce_with_grad(logits, targets)[0]


def softmax_cross_entropy_with_grad(logits, labels) -> tuple[float, np.ndarray]:
    """Mean cross entropy over rows; labels are integer class indices."""
    z = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    if z.ndim != 2 or labels.shape != (z.shape[0],):
        raise ValueError(f"expected (N, K) logits and (N,) labels, got {z.shape}, {labels.shape}")
    n = z.shape[0]
    zs = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.sum(np.exp(zs), axis=1))
    loss = float(np.mean(lse - zs[np.arange(n), labels]))
    grad = np.exp(zs - lse[:, None])
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


def softmax_cross_entropy(logits, labels) -> float:
    return softmax_cross_entropy_with_grad(logits, labels)[0]


def binarize_logits(logits) -> np.ndarray:
    """Prediction mask from logits: sigmoid threshold at 0.5."""
    return (np.asarray(logits) > 0.0).astype(np.float64)


def mean_iou(pred_mask, target) -> float:
    """Mean over images of intersection-over-union of binary masks.

    Images with an empty union (both masks all background) score 1.
    """
    p = np.asarray(pred_mask, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    _check_shapes(p, t)
    _check_binary(p, "prediction mask")
    _check_binary(t, "target mask")
    n = p.shape[0]
    p2 = p.reshape(n, -1)
    t2 = t.reshape(n, -1)
    inter = np.sum(p2 * t2, axis=1)
    union = np.sum(p2, axis=1) + np.sum(t2, axis=1) - inter
    iou = np.where(union > 0, inter / np.where(union > 0, union, 1.0), 1.0)
    return float(np.mean(iou))


def top1_accuracy(logits, labels) -> float:
    """Fraction of rows whose argmax (ties to the lowest index) is the label."""
    z = np.asarray(logits)
    labels = np.asarray(labels)
    if z.ndim != 2 or labels.shape != (z.shape[0],):
        raise ValueError(f"expected (N, K) logits and (N,) labels, got {z.shape}, {labels.shape}")
    return float(np.mean(np.argmax(z, axis=1) == labels))
