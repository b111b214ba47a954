"""Side-by-side orthogonality drift of the two ways of maintaining W.

Both schemes see the same stream of synthetic loss gradients ``dL/dW``.
The scaled-Cayley path takes RMSprop steps on the packed skew parameters and
rebuilds ``W`` from scratch each step; the multiplicative path carries ``W``
forward with repeated Cayley retractions.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import cayley, linalg, optim, stiefel

COLUMNS = ["step", "score_cayley", "score_multiplicative", "precision"]


@dataclass
class DriftCurve:
    steps: np.ndarray
    cayley: np.ndarray
    multiplicative: np.ndarray
    precision: str

    def window_mean(self, which: str, start: int, stop: int) -> float:
        return float(np.mean(getattr(self, which)[start:stop]))


def orthodrift(n: int, steps: int, precision: str = "double", seed: int = 0,
               lr: float = 1e-3, lr_skew: float = 1e-4, out_path=None) -> DriftCurve:
    """Run both schemes for ``steps`` updates and record per-step scores.

    With ``out_path`` the curve is also written as CSV. ``steps = 0`` yields
    a header-only file.
    """
    if n < 2:
        raise ValueError(f"n must be at least 2, got {n}")
    rng = np.random.default_rng(seed)
    scores_c = np.empty(steps)
    scores_m = np.empty(steps)
    with linalg.precision(precision):
        dtype = linalg.get_dtype()
        skew, scaling = cayley.init_block_diag(n, n // 2, rng)
        w_cayley = cayley.scaled_cayley(skew, scaling)
        group = optim.ParamGroup("skew", skew.v, lr_skew, "rmsprop")
        state = stiefel.StiefelState(w_cayley.copy())
        for k in range(steps):
            g = (rng.standard_normal((n, n)) / np.sqrt(n)).astype(dtype)
            d_skew = cayley.grad_skew(g, skew, w_cayley, scaling)
            w_cayley = optim.step_skew(group, d_skew, skew, scaling, k)
            b = stiefel.descent_direction(g, state.W)
            state = stiefel.multiplicative_update(state, b, lr)
            scores_c[k] = stiefel.orthogonality_score(w_cayley)
            scores_m[k] = stiefel.orthogonality_score(state.W)
    curve = DriftCurve(np.arange(1, steps + 1), scores_c, scores_m, precision)
    if out_path is not None:
        write_csv(curve, out_path)
    return curve


def write_csv(curve: DriftCurve, path) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS)
        for s, c, m in zip(curve.steps, curve.cayley, curve.multiplicative):
            w.writerow([int(s), repr(float(c)), repr(float(m)), curve.precision])
