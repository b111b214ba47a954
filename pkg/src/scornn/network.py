"""scoRNN cell with full backpropagation through time, plus an LSTM baseline.

Both models work on mini-batches: inputs have shape ``(batch, T, m)``.
Hidden states are row vectors, so the recurrence ``h_t = W h_{t-1}`` is
computed as ``H @ W.T``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import cayley, linalg
from .activations import modrelu, modrelu_backward

PER_STEP = "per-step"
LAST_STEP = "last-step"
OUTPUT_MODES = (PER_STEP, LAST_STEP)

CHECKPOINT_VERSION = 1


def glorot_uniform(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in)).astype(linalg.get_dtype())


def _check_inputs(inputs: np.ndarray, m: int) -> None:
    if inputs.ndim != 3 or inputs.shape[2] != m:
        raise linalg.ShapeError(f"inputs must have shape (batch, T, {m}), got {inputs.shape}")


def _check_output_mode(mode: str) -> None:
    if mode not in OUTPUT_MODES:
        raise ValueError(f"output_mode must be one of {OUTPUT_MODES}, got {mode!r}")


@dataclass
class ScoCell:
    U: np.ndarray
    skew: cayley.SkewParams
    scaling: cayley.ScalingMatrix
    bias: np.ndarray
    V: np.ndarray
    c: np.ndarray
    W: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.W is None:
            self.refresh()

    @classmethod
    def init(cls, n: int, m: int, p: int, rho: int, rng: np.random.Generator) -> "ScoCell":
        """Block-diagonal ``A``, Glorot-uniform ``U`` and ``V``, zero biases."""
        skew, scaling = cayley.init_block_diag(n, rho, rng)
        dtype = linalg.get_dtype()
        return cls(
            U=glorot_uniform(rng, n, m),
            skew=skew,
            scaling=scaling,
            bias=np.zeros(n, dtype=dtype),
            V=glorot_uniform(rng, p, n),
            c=np.zeros(p, dtype=dtype),
        )

    @property
    def n(self) -> int:
        return self.skew.n

    def refresh(self) -> None:
        """Rebuild the cached recurrent matrix from the skew parameters."""
        self.W = cayley.scaled_cayley(self.skew, self.scaling)

    def params(self) -> dict[str, np.ndarray]:
        return {"U": self.U, "skew": self.skew.v, "bias": self.bias, "V": self.V, "c": self.c}

    def num_params(self) -> int:
        return sum(p.size for p in self.params().values())


@dataclass
class ForwardTape:
    inputs: np.ndarray  # (batch, T, m)
    z: np.ndarray  # (T, batch, n), pre-activations
    h: np.ndarray  # (T + 1, batch, n), h[0] is the start state
    output_mode: str

    @property
    def T(self) -> int:
        return self.z.shape[0]


@dataclass
class ParamGrads:
    dU: np.ndarray
    d_skew: cayley.SkewParams
    d_bias: np.ndarray
    dV: np.ndarray
    dc: np.ndarray
    dW: np.ndarray
    hidden_norms: np.ndarray | None = None

    def as_dict(self) -> dict[str, np.ndarray]:
        return {"U": self.dU, "skew": self.d_skew.v, "bias": self.d_bias, "V": self.dV, "c": self.dc}


def sco_forward(
    cell: ScoCell,
    inputs: np.ndarray,
    output_mode: str = PER_STEP,
    h0: np.ndarray | None = None,
) -> tuple[np.ndarray, ForwardTape]:
    """Run the recurrence ``h_t = modrelu(U x_t + W h_{t-1}, bias)``.

    The start state ``h_0`` is zero unless ``h0`` (shape ``(batch, n)``) is given.

    Returns outputs ``V h_t + c`` of shape ``(batch, T, p)`` for
    ``"per-step"`` or ``(batch, p)`` for ``"last-step"``, and the tape
    needed by ``sco_backward``.
    """
    _check_output_mode(output_mode)
    _check_inputs(inputs, cell.U.shape[1])
    batch, T, _ = inputs.shape
    n = cell.n
    xu = np.ascontiguousarray((inputs @ cell.U.T).transpose(1, 0, 2))
    Wt = cell.W.T
    z = np.empty((T, batch, n), dtype=xu.dtype)
    h = np.empty((T + 1, batch, n), dtype=xu.dtype)
    h[0] = 0.0 if h0 is None else h0
    for t in range(T):
        np.add(xu[t], h[t] @ Wt, out=z[t])
        h[t + 1] = modrelu(z[t], cell.bias)
    if output_mode == PER_STEP:
        out = h[1:].transpose(1, 0, 2) @ cell.V.T + cell.c
    else:
        out = h[T] @ cell.V.T + cell.c
    return out, ForwardTape(inputs, z, h, output_mode)


def sco_backward(
    cell: ScoCell,
    tape: ForwardTape,
    loss_grads: np.ndarray,
    capture_hidden_norms: bool = False,
) -> ParamGrads:
    """Backpropagation through time for ``sco_forward``.

    ``dL/dW`` is accumulated over all steps and then mapped to the skew
    parameters with ``cayley.grad_skew``. With ``capture_hidden_norms`` the
    Frobenius norm over the batch of ``dL/dh_t`` is recorded for
    ``t = 0 .. T`` (index ``t`` of the returned array).
    """
    T = tape.T
    batch = tape.inputs.shape[0]
    n = cell.n
    if tape.output_mode == PER_STEP:
        if loss_grads.shape[:2] != (batch, T):
            raise linalg.ShapeError(f"per-step loss gradients must be (batch, T, p), got {loss_grads.shape}")
        dy = np.ascontiguousarray(loss_grads.transpose(1, 0, 2))  # (T, batch, p)
        dh_out = dy @ cell.V  # (T, batch, n)
        dV = np.tensordot(dy, tape.h[1:], axes=([0, 1], [0, 1]))
        dc = dy.sum(axis=(0, 1))
    else:
        if loss_grads.shape[0] != batch or loss_grads.ndim != 2:
            raise linalg.ShapeError(f"last-step loss gradients must be (batch, p), got {loss_grads.shape}")
        dh_out = None
        dV = loss_grads.T @ tape.h[T]
        dc = loss_grads.sum(axis=0)

    norms = np.zeros(T + 1) if capture_hidden_norms else None
    dz = np.empty_like(tape.z)
    dh = loss_grads @ cell.V if dh_out is None else np.zeros((batch, n), dtype=tape.z.dtype)
    W = cell.W
    for t in range(T - 1, -1, -1):
        if dh_out is not None:
            dh = dh + dh_out[t]
        if norms is not None:
            norms[t + 1] = np.linalg.norm(dh)
        dz[t], _ = modrelu_backward(tape.z[t], cell.bias, dh)
        dh = dz[t] @ W
    if norms is not None:
        norms[0] = np.linalg.norm(dh)

    flat_dz = dz.reshape(T * batch, n)
    d_bias = np.sum(flat_dz * np.sign(tape.z.reshape(T * batch, n)), axis=0)
    x = tape.inputs.transpose(1, 0, 2).reshape(T * batch, -1)
    dU = flat_dz.T @ x
    dW = flat_dz.T @ tape.h[:T].reshape(T * batch, n)
    d_skew = cayley.grad_skew(dW, cell.skew, W, cell.scaling)
    return ParamGrads(dU=dU, d_skew=d_skew, d_bias=d_bias, dV=dV, dc=dc, dW=dW, hidden_norms=norms)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class LstmCell:
    """Standard LSTM with gate blocks ordered input, forget, output, candidate."""

    Wx: np.ndarray  # (4n, m)
    Wh: np.ndarray  # (4n, n)
    b: np.ndarray  # (4n,)
    V: np.ndarray
    c: np.ndarray
    forget_bias: float = 1.0

    @classmethod
    def init(cls, n: int, m: int, p: int, rng: np.random.Generator, forget_bias: float = 1.0) -> "LstmCell":
        dtype = linalg.get_dtype()
        b = np.zeros(4 * n, dtype=dtype)
        b[n : 2 * n] = forget_bias
        return cls(
            Wx=glorot_uniform(rng, 4 * n, m),
            Wh=np.concatenate([glorot_uniform(rng, n, n) for _ in range(4)]),
            b=b,
            V=glorot_uniform(rng, p, n),
            c=np.zeros(p, dtype=dtype),
            forget_bias=forget_bias,
        )

    @property
    def n(self) -> int:
        return self.Wh.shape[1]

    def params(self) -> dict[str, np.ndarray]:
        return {"Wx": self.Wx, "Wh": self.Wh, "b": self.b, "V": self.V, "c": self.c}

    def num_params(self) -> int:
        return sum(p.size for p in self.params().values())


@dataclass
class LstmTape:
    inputs: np.ndarray
    gates: np.ndarray  # (T, batch, 4n), post-nonlinearity
    cell_state: np.ndarray  # (T + 1, batch, n)
    h: np.ndarray  # (T + 1, batch, n)
    output_mode: str

    @property
    def T(self) -> int:
        return self.gates.shape[0]


@dataclass
class LstmGrads:
    dWx: np.ndarray
    dWh: np.ndarray
    db: np.ndarray
    dV: np.ndarray
    dc: np.ndarray
    hidden_norms: np.ndarray | None = None

    def as_dict(self) -> dict[str, np.ndarray]:
        return {"Wx": self.dWx, "Wh": self.dWh, "b": self.db, "V": self.dV, "c": self.dc}


def lstm_forward(cell: LstmCell, inputs: np.ndarray, output_mode: str = PER_STEP) -> tuple[np.ndarray, LstmTape]:
    _check_output_mode(output_mode)
    _check_inputs(inputs, cell.Wx.shape[1])
    batch, T, _ = inputs.shape
    n = cell.n
    xa = np.ascontiguousarray((inputs @ cell.Wx.T + cell.b).transpose(1, 0, 2))
    gates = np.empty((T, batch, 4 * n), dtype=xa.dtype)
    cs = np.zeros((T + 1, batch, n), dtype=xa.dtype)
    h = np.zeros((T + 1, batch, n), dtype=xa.dtype)
    Wht = cell.Wh.T
    for t in range(T):
        a = xa[t] + h[t] @ Wht
        g = gates[t]
        g[:, : 3 * n] = _sigmoid(a[:, : 3 * n])
        g[:, 3 * n :] = np.tanh(a[:, 3 * n :])
        cs[t + 1] = g[:, n : 2 * n] * cs[t] + g[:, :n] * g[:, 3 * n :]
        h[t + 1] = g[:, 2 * n : 3 * n] * np.tanh(cs[t + 1])
    if output_mode == PER_STEP:
        out = h[1:].transpose(1, 0, 2) @ cell.V.T + cell.c
    else:
        out = h[T] @ cell.V.T + cell.c
    return out, LstmTape(inputs, gates, cs, h, output_mode)


def lstm_backward(
    cell: LstmCell,
    tape: LstmTape,
    loss_grads: np.ndarray,
    capture_hidden_norms: bool = False,
) -> LstmGrads:
    T = tape.T
    batch = tape.inputs.shape[0]
    n = cell.n
    if tape.output_mode == PER_STEP:
        if loss_grads.shape[:2] != (batch, T):
            raise linalg.ShapeError(f"per-step loss gradients must be (batch, T, p), got {loss_grads.shape}")
        dy = np.ascontiguousarray(loss_grads.transpose(1, 0, 2))
        dh_out = dy @ cell.V
        dV = np.tensordot(dy, tape.h[1:], axes=([0, 1], [0, 1]))
        dc = dy.sum(axis=(0, 1))
        dh = np.zeros((batch, n), dtype=tape.h.dtype)
    else:
        if loss_grads.shape[0] != batch or loss_grads.ndim != 2:
            raise linalg.ShapeError(f"last-step loss gradients must be (batch, p), got {loss_grads.shape}")
        dh_out = None
        dV = loss_grads.T @ tape.h[T]
        dc = loss_grads.sum(axis=0)
        dh = loss_grads @ cell.V

    norms = np.zeros(T + 1) if capture_hidden_norms else None
    da = np.empty_like(tape.gates)
    dcs = np.zeros((batch, n), dtype=tape.h.dtype)
    for t in range(T - 1, -1, -1):
        if dh_out is not None:
            dh = dh + dh_out[t]
        if norms is not None:
            norms[t + 1] = np.linalg.norm(dh)
        g = tape.gates[t]
        i, f, o, cand = g[:, :n], g[:, n : 2 * n], g[:, 2 * n : 3 * n], g[:, 3 * n :]
        tc = np.tanh(tape.cell_state[t + 1])
        dcs = dcs + dh * o * (1.0 - tc * tc)
        d = da[t]
        d[:, :n] = dcs * cand * i * (1.0 - i)
        d[:, n : 2 * n] = dcs * tape.cell_state[t] * f * (1.0 - f)
        d[:, 2 * n : 3 * n] = dh * tc * o * (1.0 - o)
        d[:, 3 * n :] = dcs * i * (1.0 - cand * cand)
        dcs = dcs * f
        dh = d @ cell.Wh
    if norms is not None:
        norms[0] = np.linalg.norm(dh)

    flat = da.reshape(T * batch, 4 * n)
    x = tape.inputs.transpose(1, 0, 2).reshape(T * batch, -1)
    return LstmGrads(
        dWx=flat.T @ x,
        dWh=flat.T @ tape.h[:T].reshape(T * batch, n),
        db=flat.sum(axis=0),
        dV=dV,
        dc=dc,
        hidden_norms=norms,
    )


def save_checkpoint(path, model, extra: dict | None = None, arrays: dict | None = None) -> None:
    """Write a model to ``path`` as an ``.npz`` archive with a JSON header.

    The header records the format version, model kind and every parameter's
    shape. For a scoRNN the skew parameters and scaling are also stored as the
    binary blob from ``cayley.save_params``. ``arrays`` adds extra named
    tensors (optimizer state), ``extra`` extra header fields.
    """
    if isinstance(model, ScoCell):
        kind = "scornn"
        tensors = {"U": model.U, "bias": model.bias, "V": model.V, "c": model.c}
        tensors["cayley"] = np.frombuffer(cayley.save_params(model.skew, model.scaling), dtype=np.uint8)
    elif isinstance(model, LstmCell):
        kind = "lstm"
        tensors = dict(model.params())
    else:
        raise TypeError(f"cannot checkpoint {type(model).__name__}")
    header = {
        "version": CHECKPOINT_VERSION,
        "model": kind,
        "shapes": {k: list(v.shape) for k, v in tensors.items()},
    }
    if kind == "lstm":
        header["forget_bias"] = model.forget_bias
    if extra:
        header.update(extra)
    payload = {f"param/{k}": v for k, v in tensors.items()}
    for k, v in (arrays or {}).items():
        payload[f"extra/{k}"] = v
    with open(path, "wb") as fh:
        np.savez(fh, header=np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8), **payload)


def load_checkpoint(path):
    """Inverse of ``save_checkpoint``; returns ``(model, header, extra_arrays)``."""
    with np.load(path) as z:
        header = json.loads(z["header"].tobytes().decode())
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header.get('version')}")
        params = {k[len("param/") :]: z[k] for k in z.files if k.startswith("param/")}
        extra = {k[len("extra/") :]: z[k] for k in z.files if k.startswith("extra/")}
    for k, shape in header["shapes"].items():
        if list(params[k].shape) != shape:
            raise ValueError(f"checkpoint tensor {k} has shape {params[k].shape}, header says {shape}")
    if header["model"] == "scornn":
        skew, scaling = cayley.load_params(params.pop("cayley").tobytes())
        model = ScoCell(skew=skew, scaling=scaling, **params)
    elif header["model"] == "lstm":
        model = LstmCell(forget_bias=header["forget_bias"], **params)
    else:
        raise ValueError(f"unknown model kind {header['model']!r}")
    return model, header, extra
