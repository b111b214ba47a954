"""Central finite-difference check of every network gradient."""

from __future__ import annotations

import numpy as np

from . import cayley, linalg, network, tasks
from .train import backward, forward

SCO_INPUT, SCO_OUTPUT = 3, 4


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Largest entry-wise discrepancy, relative to the group's gradient scale."""
    scale = max(float(np.max(np.abs(analytic), initial=0.0)), float(np.max(np.abs(numeric), initial=0.0)))
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric))) / scale


def random_problem(model: str, n: int, T: int, seed: int, batch: int = 2):
    """A small model with generic (non-initializer) parameters and a random batch.

    Per-step softmax targets exercise the gradient path from every output.
    """
    rng = np.random.default_rng(seed)
    m, p = SCO_INPUT, SCO_OUTPUT
    if model == "scornn":
        k = cayley.num_params(n)
        cell = network.ScoCell(
            U=rng.normal(size=(n, m)),
            skew=cayley.SkewParams(n, rng.uniform(-1.0, 1.0, size=k)),
            scaling=cayley.ScalingMatrix.from_rho(n, n // 2),
            bias=rng.uniform(-0.2, 0.2, size=n),
            V=rng.normal(size=(p, n)),
            c=rng.normal(size=p),
        )
    elif model == "lstm":
        cell = network.LstmCell.init(n, m, p, rng)
        cell.b += rng.normal(scale=0.5, size=cell.b.shape)
    else:
        raise ValueError(f"unknown model {model!r}")
    inputs = rng.normal(size=(batch, T, m))
    targets = rng.integers(0, p, size=(batch, T))
    return cell, tasks.TaskBatch(inputs, targets, tasks.XENT_PER_STEP, T)


def _loss(cell, batch) -> float:
    out, _ = forward(cell, batch.inputs, batch.output_mode)
    return tasks.task_loss(out, batch)[0]


def numeric_grads(cell, batch, step: float) -> dict[str, np.ndarray]:
    """Central differences over every scalar parameter."""
    sco = isinstance(cell, network.ScoCell)
    out = {}
    for name, p in cell.params().items():
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            if sco and name == "skew":
                cell.refresh()
            plus = _loss(cell, batch)
            flat[i] = orig - step
            if sco and name == "skew":
                cell.refresh()
            minus = _loss(cell, batch)
            flat[i] = orig
            gflat[i] = (plus - minus) / (2 * step)
        if sco and name == "skew":
            cell.refresh()
        out[name] = g
    return out


def gradcheck(n: int = 6, T: int = 3, seed: int = 0, step: float = 1e-6, model: str = "scornn",
              corrupt_skew: bool = False) -> dict[str, float]:
    """Max relative error per parameter group, analytic vs. finite differences.

    ``corrupt_skew`` flips the sign of the skew gradient before comparing; the
    check must then report a large error for that group.
    """
    with linalg.precision("double"):
        cell, batch = random_problem(model, n, T, seed)
        out, tape = forward(cell, batch.inputs, batch.output_mode)
        _, dout = tasks.task_loss(out, batch)
        analytic = backward(cell, tape, dout).as_dict()
        if corrupt_skew:
            analytic["skew"] = -analytic["skew"]
        numeric = numeric_grads(cell, batch, step)
    return {k: relative_error(analytic[k], numeric[k]) for k in analytic}
