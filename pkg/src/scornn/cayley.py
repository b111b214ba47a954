"""Scaled Cayley parametrization of orthogonal matrices.

An orthogonal ``W`` is written as ``W = (I + A)^{-1} (I - A) D`` with ``A``
skew-symmetric and ``D`` a fixed diagonal of +1/-1 entries. Only the
``n(n-1)/2`` free entries of ``A`` are trained; ``D`` is chosen once per run.

Packing convention: ``v[k] = A[c_k, r_k]`` where ``(r_k, c_k)`` walks the
strict lower triangle row by row, i.e. ``(1,0), (2,0), (2,1), (3,0), ...``.
The mirrored entry ``A[r_k, c_k]`` holds ``-v[k]``, so for ``n = 2`` the
single parameter ``s`` materializes as ``[[0, s], [-s, 0]]``.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass

import numpy as np

from . import linalg

CHECKPOINT_MAGIC = b"SCAY"
CHECKPOINT_VERSION = 1


def num_params(n: int) -> int:
    return n * (n - 1) // 2


def _tril(n: int) -> tuple[np.ndarray, np.ndarray]:
    return np.tril_indices(n, -1)


@dataclass
class SkewParams:
    """The free entries of an ``n x n`` skew-symmetric matrix."""

    n: int
    v: np.ndarray

    def __post_init__(self):
        self.v = np.asarray(self.v)
        if self.v.shape != (num_params(self.n),):
            raise linalg.ShapeError(
                f"SkewParams for n={self.n} needs {num_params(self.n)} entries, got shape {self.v.shape}"
            )

    @classmethod
    def zeros(cls, n: int, dtype=None) -> "SkewParams":
        return cls(n, np.zeros(num_params(n), dtype=dtype or linalg.get_dtype()))

    def copy(self) -> "SkewParams":
        return SkewParams(self.n, self.v.copy())


@dataclass
class ScalingMatrix:
    """Fixed diagonal of signs; ``rho`` of them are -1."""

    n: int
    rho: int
    signs: np.ndarray

    def __post_init__(self):
        self.signs = np.asarray(self.signs)
        if self.signs.shape != (self.n,):
            raise linalg.ShapeError(f"signs must have length {self.n}, got {self.signs.shape}")
        if not np.all(np.abs(self.signs) == 1):
            raise ValueError("scaling entries must be +1 or -1")
        if int(np.sum(self.signs < 0)) != self.rho:
            raise ValueError(f"signs contain {int(np.sum(self.signs < 0))} negative entries, rho={self.rho}")

    @classmethod
    def from_rho(cls, n: int, rho: int, dtype=None) -> "ScalingMatrix":
        """-1 in the first ``rho`` diagonal positions, +1 elsewhere."""
        if not 0 <= rho <= n:
            raise ValueError(f"rho must lie in [0, {n}], got {rho}")
        signs = np.ones(n, dtype=dtype or linalg.get_dtype())
        signs[:rho] = -1
        return cls(n, rho, signs)

    def matrix(self) -> np.ndarray:
        return np.diag(self.signs)


def pack(a: np.ndarray) -> SkewParams:
    """Read the free entries of a skew-symmetric matrix.

    Only the upper triangle is read; no symmetry check is made.
    """
    n = a.shape[0]
    if a.shape != (n, n):
        raise linalg.ShapeError(f"expected a square matrix, got {a.shape}")
    rows, cols = _tril(n)
    return SkewParams(n, a[cols, rows].copy())


def materialize(p: SkewParams) -> np.ndarray:
    a = np.zeros((p.n, p.n), dtype=p.v.dtype)
    rows, cols = _tril(p.n)
    a[cols, rows] = p.v
    a[rows, cols] = -p.v
    return a


def scaled_cayley(a: SkewParams, d: ScalingMatrix) -> np.ndarray:
    """``W = (I + A)^{-1} (I - A) D``."""
    if a.n != d.n:
        raise linalg.ShapeError(f"dimension mismatch: A is {a.n}, D is {d.n}")
    A = materialize(a)
    eye = linalg.eye(a.n, dtype=A.dtype)
    z = linalg.solve(eye + A, eye - A)
    return z * d.signs.astype(z.dtype)[None, :]


def inverse_scaled_cayley(w: np.ndarray, d: ScalingMatrix) -> SkewParams:
    """Recover ``A`` from an orthogonal ``W`` and a given scaling ``D``.

    Uses ``A = (I - WD)(I + WD)^{-1}``. Raises ``SingularMatrixError`` when
    ``WD`` has an eigenvalue at -1, i.e. ``D`` cannot reach this ``W``.
    """
    n = d.n
    if w.shape != (n, n):
        raise linalg.ShapeError(f"W has shape {w.shape}, D has dimension {n}")
    wd = w * d.signs.astype(w.dtype)[None, :]
    eye = linalg.eye(n, dtype=w.dtype)
    # A (I + WD) = I - WD  <=>  (I + WD)^T A^T = (I - WD)^T
    a = linalg.LU(eye + wd).solve_transposed(linalg.transpose(eye - wd)).T
    a = 0.5 * (a - a.T)
    return pack(a)


def grad_skew(dLdW: np.ndarray, a: SkewParams, w: np.ndarray, d: ScalingMatrix) -> SkewParams:
    """Gradient of a loss with respect to the packed skew parameters.

    Given ``dLdW`` for ``W = scaled_cayley(a, d)``, forms
    ``V = (I + A)^{-T} dLdW (D + W^T)`` and returns ``V^T - V`` in packed
    form. ``(I + A)^{-T}`` is applied with a transposed LU solve.
    """
    n = a.n
    if dLdW.shape != (n, n) or w.shape != (n, n) or d.n != n:
        raise linalg.ShapeError(
            f"inconsistent shapes: dLdW {dLdW.shape}, W {w.shape}, A n={n}, D n={d.n}"
        )
    A = materialize(a)
    eye = linalg.eye(n, dtype=A.dtype)
    rhs = dLdW @ (np.diag(d.signs.astype(A.dtype)) + w.T)
    v = linalg.LU(eye + A).solve_transposed(rhs)
    return pack(v.T - v)


def init_block_diag(n: int, rho: int, rng: np.random.Generator, angles=None) -> tuple[SkewParams, ScalingMatrix]:
    """Block-diagonal initializer for ``A`` plus the matching ``D``.

    ``A`` is zero except for ``n // 2`` diagonal blocks ``[[0, s], [-s, 0]]``
    with ``s = sqrt((1 - cos t) / (1 + cos t))`` and ``t ~ U[0, pi/2]``. The
    Cayley image of each block is a rotation by ``t``. For odd ``n`` the last
    diagonal entry stays zero.

    ``angles`` overrides the sampled ``t`` values (length ``n // 2``).
    """
    if not 0 <= rho <= n:
        raise ValueError(f"rho must lie in [0, {n}], got {rho}")
    k = n // 2
    if angles is None:
        t = rng.uniform(0.0, np.pi / 2, size=k)
    else:
        t = np.asarray(angles, dtype=np.float64)
        if t.shape != (k,):
            raise linalg.ShapeError(f"need {k} angles, got shape {t.shape}")
    s = np.sqrt((1.0 - np.cos(t)) / (1.0 + np.cos(t)))
    A = np.zeros((n, n), dtype=linalg.get_dtype())
    idx = np.arange(k)
    A[2 * idx, 2 * idx + 1] = s
    A[2 * idx + 1, 2 * idx] = -s
    return pack(A), ScalingMatrix.from_rho(n, rho)


def three_layer_apply(h: np.ndarray, a: SkewParams, d: ScalingMatrix) -> np.ndarray:
    """Apply ``W`` to the columns of ``h`` as scale, then ``I - A``, then ``(I + A)^{-1}``."""
    A = materialize(a)
    eye = linalg.eye(a.n, dtype=A.dtype)
    h1 = d.signs.astype(A.dtype).reshape(-1, *([1] * (h.ndim - 1))) * h
    h2 = (eye - A) @ h1
    return linalg.solve(eye + A, h2)


def save_params(skew: SkewParams, scaling: ScalingMatrix) -> bytes:
    """Serialize as: magic, version, n, rho (int64 LE), v (float64 LE), signs (int64 LE)."""
    if skew.n != scaling.n:
        raise linalg.ShapeError("skew and scaling dimensions differ")
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<qqq", CHECKPOINT_VERSION, skew.n, scaling.rho))
    buf.write(np.asarray(skew.v, dtype="<f8").tobytes())
    buf.write(np.asarray(scaling.signs, dtype="<i8").tobytes())
    return buf.getvalue()


def load_params(data: bytes) -> tuple[SkewParams, ScalingMatrix]:
    if data[:4] != CHECKPOINT_MAGIC:
        raise ValueError("not a scaled-Cayley parameter blob")
    version, n, rho = struct.unpack_from("<qqq", data, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported parameter blob version {version}")
    off = 4 + 24
    k = num_params(n)
    expected = off + 8 * k + 8 * n
    if len(data) != expected:
        raise ValueError(f"parameter blob has {len(data)} bytes, expected {expected}")
    v = np.frombuffer(data, dtype="<f8", count=k, offset=off).astype(np.float64)
    signs = np.frombuffer(data, dtype="<i8", count=n, offset=off + 8 * k)
    dtype = linalg.get_dtype()
    return SkewParams(n, v.astype(dtype)), ScalingMatrix(n, rho, signs.astype(dtype))
