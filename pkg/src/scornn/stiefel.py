"""Multiplicative Cayley update on the orthogonal group.

This is the real-valued form of the full-capacity uRNN step, kept as a
comparator: ``W`` is carried forward by repeated products, so rounding error
accumulates and orthogonality slowly drifts. Nothing here re-orthogonalizes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import linalg


@dataclass
class StiefelState:
    W: np.ndarray
    step: int = 0


def descent_direction(g: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Skew matrix ``B = g W^T - W g^T`` from the Euclidean gradient ``g``."""
    if g.shape != w.shape:
        raise linalg.ShapeError(f"gradient {g.shape} and W {w.shape} differ")
    gw = g @ w.T
    return gw - gw.T


def multiplicative_update(s: StiefelState, b: np.ndarray, lr: float) -> StiefelState:
    """``W <- (I + lr/2 B)^{-1} (I - lr/2 B) W``."""
    n = s.W.shape[0]
    if b.shape != (n, n):
        raise linalg.ShapeError(f"B has shape {b.shape}, W is {n}x{n}")
    half = b * b.dtype.type(lr / 2)
    eye = linalg.eye(n, dtype=s.W.dtype)
    w = linalg.solve(eye + half, (eye - half) @ s.W)
    return StiefelState(w.astype(s.W.dtype, copy=False), s.step + 1)


def orthogonality_score(w: np.ndarray) -> float:
    """``||W^T W - I||_F``, accumulated in double precision."""
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise linalg.ShapeError(f"expected a square matrix, got {w.shape}")
    w64 = w.astype(np.float64)
    return linalg.fro_norm(w64.T @ w64 - np.eye(w.shape[0]))
