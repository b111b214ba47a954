"""SGD, RMSprop and Adam over named parameter groups.

Each group owns one parameter array and updates it in place, with its own
learning rate and optimizer kind. The recurrent group updates the packed
skew vector, so its state lives in the same packed space and every step
stays exactly skew-symmetric.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import cayley

KINDS = ("sgd", "rmsprop", "adam")

DEFAULT_HYPER = {
    "sgd": {},
    "rmsprop": {"decay": 0.9, "eps": 1e-8},
    "adam": {"beta1": 0.9, "beta2": 0.999, "eps": 1e-8},
}


class OptimizerFault(FloatingPointError):
    """A non-finite gradient reached an optimizer step."""


@dataclass
class ParamGroup:
    name: str
    params: np.ndarray
    lr: float
    kind: str = "rmsprop"
    hyper: dict = field(default_factory=dict)
    state: dict = field(default_factory=dict)
    t: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"optimizer kind must be one of {KINDS}, got {self.kind!r}")
        if not self.lr > 0:
            raise ValueError(f"learning rate for group {self.name!r} must be positive, got {self.lr}")
        self.hyper = {**DEFAULT_HYPER[self.kind], **self.hyper}
        if self.kind == "rmsprop":
            self.state.setdefault("ms", np.zeros_like(self.params))
        elif self.kind == "adam":
            self.state.setdefault("m", np.zeros_like(self.params))
            self.state.setdefault("v", np.zeros_like(self.params))


def step(group: ParamGroup, grads: np.ndarray, iteration: int | None = None) -> ParamGroup:
    """Apply one update to ``group.params`` in place and return the group."""
    if grads.shape != group.params.shape:
        raise ValueError(f"group {group.name!r}: gradient shape {grads.shape} != parameter shape {group.params.shape}")
    if not np.all(np.isfinite(grads)):
        where = f" at iteration {iteration}" if iteration is not None else ""
        raise OptimizerFault(f"non-finite gradient in group {group.name!r}{where}")
    p = group.params
    lr = group.lr
    h = group.hyper
    group.t += 1
    if group.kind == "sgd":
        p -= lr * grads
    elif group.kind == "rmsprop":
        ms = group.state["ms"]
        ms *= h["decay"]
        ms += (1.0 - h["decay"]) * grads * grads
        p -= lr * grads / (np.sqrt(ms) + h["eps"])
    else:
        m, v = group.state["m"], group.state["v"]
        b1, b2 = h["beta1"], h["beta2"]
        m *= b1
        m += (1.0 - b1) * grads
        v *= b2
        v += (1.0 - b2) * grads * grads
        m_hat = m / (1.0 - b1**group.t)
        v_hat = v / (1.0 - b2**group.t)
        p -= lr * m_hat / (np.sqrt(v_hat) + h["eps"])
    return group


def step_skew(
    group: ParamGroup,
    grads: cayley.SkewParams,
    skew: cayley.SkewParams,
    scaling: cayley.ScalingMatrix,
    iteration: int | None = None,
) -> np.ndarray:
    """Update the packed skew vector and return the rebuilt recurrent matrix.

    ``group.params`` must be ``skew.v`` itself.
    """
    if group.params is not skew.v:
        raise ValueError(f"group {group.name!r} does not own the skew parameter vector")
    step(group, grads.v, iteration)
    return cayley.scaled_cayley(skew, scaling)


def state_arrays(groups: list[ParamGroup]) -> dict[str, np.ndarray]:
    """Flatten optimizer state for checkpointing."""
    out = {}
    for g in groups:
        out[f"{g.name}/t"] = np.array(g.t)
        for k, v in g.state.items():
            out[f"{g.name}/{k}"] = v
    return out


def load_state_arrays(groups: list[ParamGroup], arrays: dict[str, np.ndarray]) -> None:
    for g in groups:
        if f"{g.name}/t" not in arrays:
            continue
        g.t = int(arrays[f"{g.name}/t"])
        for k in g.state:
            g.state[k][...] = arrays[f"{g.name}/{k}"]
