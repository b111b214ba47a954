"""modReLU and the two task losses, each with its analytic gradient."""

from __future__ import annotations

import numpy as np


def modrelu(z: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Real modReLU: ``sign(z) * max(|z| + b, 0)``, with ``sign(0) = 0``.

    ``b`` broadcasts against the trailing axis of ``z``.
    """
    return np.sign(z) * np.maximum(np.abs(z) + b, 0.0)


def modrelu_backward(z: np.ndarray, b: np.ndarray, upstream: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of ``modrelu`` with respect to ``z`` and ``b``.

    Inside the active region (``|z| + b > 0``) the unit is ``z + sign(z) b``,
    so ``dz = upstream`` and ``db = upstream * sign(z)``. The dead region and
    the kink itself get zero. ``db`` keeps the shape of ``upstream``; callers
    sum over batch axes.
    """
    active = (np.abs(z) + b) > 0
    dz = np.where(active, upstream, 0.0)
    db = dz * np.sign(z)
    return dz, db


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_xent(logits: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy over every leading position.

    ``logits`` has shape ``(..., classes)`` and ``targets`` the matching
    leading shape of integer class indices. The mean runs over all leading
    positions (batch, and time when given a sequence), and ``dlogits`` is
    scaled to match.
    """
    targets = np.asarray(targets)
    k = logits.shape[-1]
    if targets.shape != logits.shape[:-1]:
        raise ValueError(f"targets shape {targets.shape} does not match logits {logits.shape}")
    if targets.size and (targets.min() < 0 or targets.max() >= k):
        raise IndexError(f"target class out of range [0, {k})")
    flat = logits.reshape(-1, k)
    t = targets.reshape(-1)
    shifted = flat - flat.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(flat.shape[0])
    count = flat.shape[0]
    loss = float(np.sum(log_z - shifted[rows, t]) / count)
    grad = np.exp(shifted - log_z[:, None])
    grad[rows, t] -= 1.0
    grad /= count
    return loss, grad.reshape(logits.shape)


def mse(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred - target
    count = diff.size
    return float(np.sum(diff * diff) / count), 2.0 * diff / count
