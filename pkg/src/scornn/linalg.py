"""Dense real matrix kernels.

Matrices are plain 2-D numpy arrays in C (row-major) order. Products go
through numpy's BLAS binding and square solves through LAPACK's partially
pivoted LU (``getrf``/``getrs`` via scipy), so every call is deterministic
for a fixed input on a fixed build.

Double precision is the default. Single precision is available behind a
process-wide switch (``set_precision`` or the ``SCORNN_PRECISION``
environment variable) so the orthogonality drift study can be run at both.
"""

from __future__ import annotations

import contextlib
import os
import warnings
from typing import Iterator

import numpy as np
import scipy.linalg

_PRECISIONS = {"double": np.float64, "single": np.float32}


class ShapeError(ValueError):
    """Operands have incompatible shapes."""


class SingularMatrixError(ArithmeticError):
    """A pivot vanished to working precision during LU factorization."""


def _initial_precision() -> str:
    name = os.environ.get("SCORNN_PRECISION", "double").strip().lower()
    if name not in _PRECISIONS:
        raise ValueError(f"SCORNN_PRECISION must be one of {sorted(_PRECISIONS)}, got {name!r}")
    return name


_precision = _initial_precision()


def get_precision() -> str:
    return _precision


def set_precision(name: str) -> None:
    global _precision
    if name not in _PRECISIONS:
        raise ValueError(f"precision must be one of {sorted(_PRECISIONS)}, got {name!r}")
    _precision = name


@contextlib.contextmanager
def precision(name: str) -> Iterator[None]:
    """Temporarily switch the working precision."""
    previous = _precision
    set_precision(name)
    try:
        yield
    finally:
        set_precision(previous)


def dtype_for(name: str | None = None) -> type:
    return _PRECISIONS[name or _precision]


def get_dtype() -> type:
    return _PRECISIONS[_precision]


def as_matrix(x, dtype=None) -> np.ndarray:
    """Validate ``x`` as a finite 2-D matrix and return it as a C-ordered array."""
    m = np.ascontiguousarray(x, dtype=dtype or get_dtype())
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    return m


def eye(n: int, dtype=None) -> np.ndarray:
    return np.eye(n, dtype=dtype or get_dtype())


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def transpose(m: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(m.T)


def _check_same(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _check_same(a, b)
    return a + b


def sub(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _check_same(a, b)
    return a - b


def scale(m: np.ndarray, s: float) -> np.ndarray:
    return m * m.dtype.type(s)


def fro_norm(m: np.ndarray) -> float:
    return float(np.sqrt(np.sum(np.square(m, dtype=np.float64))))


class LU:
    """Partially pivoted LU factorization of a square matrix.

    Factor once, then apply ``m^{-1}`` or ``m^{-T}`` to any number of
    right-hand sides.
    """

    def __init__(self, m: np.ndarray):
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ShapeError(f"LU needs a square matrix, got {m.shape}")
        self.n = m.shape[0]
        self.dtype = m.dtype
        with warnings.catch_warnings():
            # singularity is reported below as SingularMatrixError
            warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
            self.lu, self.piv = scipy.linalg.lu_factor(m, check_finite=False)
        pivots = np.abs(np.diag(self.lu))
        # "Zero to working precision": relative to the largest pivot.
        tol = self.n * np.finfo(self.dtype).eps * max(float(pivots.max(initial=0.0)), np.finfo(self.dtype).tiny)
        if self.n and float(pivots.min()) <= tol:
            raise SingularMatrixError(
                f"matrix is singular to working precision (min pivot {pivots.min():.3e})"
            )

    def _check_rhs(self, rhs: np.ndarray) -> None:
        if rhs.shape[0] != self.n:
            raise ShapeError(f"right-hand side has {rhs.shape[0]} rows, expected {self.n}")

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Return X with m X = rhs."""
        self._check_rhs(rhs)
        return scipy.linalg.lu_solve((self.lu, self.piv), rhs, check_finite=False)

    def solve_transposed(self, rhs: np.ndarray) -> np.ndarray:
        """Return X with m^T X = rhs."""
        self._check_rhs(rhs)
        return scipy.linalg.lu_solve((self.lu, self.piv), rhs, trans=1, check_finite=False)


def solve(m: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve ``m X = rhs`` by LU with partial pivoting.

    Raises
    ------
    SingularMatrixError
        If a pivot is zero to working precision.
    ShapeError
        If ``m`` is not square or ``rhs`` has the wrong number of rows.
    """
    return LU(m).solve(rhs)
