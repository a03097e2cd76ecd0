"""Dense linear-algebra kernel: Kronecker products, column-stacking vec,
SPD factorization and 2x2 block partitions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

__all__ = [
    "DimensionError",
    "NotPositiveDefiniteError",
    "SpdFactor",
    "BlockSplit",
    "kron",
    "vec",
    "unvec",
    "default_ridge",
    "spd_factor",
    "spd_solve",
    "spd_inverse",
    "partition",
]

SYMMETRY_RTOL = 1e-8


class DimensionError(ValueError):
    """Raised when array shapes are incompatible."""


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """Raised when a matrix cannot be Cholesky-factorized even after ridging."""

    def __init__(self, name: str, ridge: float):
        self.name = name
        self.ridge = ridge
        super().__init__(f"{name} is not positive definite (ridge={ridge:.3g})")


@dataclass(frozen=True)
class SpdFactor:
    """Lower Cholesky factor of ``S + ridge * I``."""

    lower: np.ndarray
    logdet: float
    ridge: float = 0.0

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def matrix(self) -> np.ndarray:
        return self.lower @ self.lower.T


@dataclass(frozen=True)
class BlockSplit:
    """Split of a dimension into a leading block of ``first`` and a trailing
    block of ``second`` indices."""

    first: int
    second: int

    def __post_init__(self):
        if self.first < 1 or self.second < 1:
            raise DimensionError(f"block sizes must be >= 1, got {self.first}, {self.second}")

    @property
    def total(self) -> int:
        return self.first + self.second


def kron(a, b) -> np.ndarray:
    """Kronecker product; block (i, j) of the result is ``a[i, j] * b``."""
    return np.kron(np.atleast_2d(a), np.atleast_2d(b))


def vec(x) -> np.ndarray:
    """Stack the columns of ``x`` into one vector (element ``i + rows*j`` is ``x[i, j]``).

    A stack of matrices with shape ``(..., rows, cols)`` is vectorized along
    the last two axes.
    """
    x = np.asarray(x)
    if x.ndim == 1:
        return x.copy()
    return np.swapaxes(x, -1, -2).reshape(*x.shape[:-2], -1)


def unvec(v, rows: int, cols: int) -> np.ndarray:
    v = np.asarray(v)
    if v.shape[-1] != rows * cols:
        raise DimensionError(f"cannot reshape length {v.shape[-1]} into {rows}x{cols}")
    return np.swapaxes(v.reshape(*v.shape[:-1], cols, rows), -1, -2).copy()


def default_ridge(s: np.ndarray) -> float:
    """Scale-aware jitter: 1e-9 times the mean diagonal entry."""
    n = s.shape[0]
    return 1e-9 * abs(np.trace(s)) / n


def _check_square_symmetric(s: np.ndarray, name: str) -> None:
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {s.shape}")
    scale = max(np.max(np.abs(s)), np.finfo(float).tiny)
    if np.max(np.abs(s - s.T)) > SYMMETRY_RTOL * scale:
        raise DimensionError(f"{name} is not symmetric")


def _cholesky(s: np.ndarray, ridge: float):
    a = s + ridge * np.eye(s.shape[0]) if ridge else s
    try:
        lower = scipy.linalg.cholesky(a, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(lower)) or np.any(np.diag(lower) <= 0):
        return None
    return lower


def spd_factor(s, ridge: float | None = None, name: str = "matrix") -> SpdFactor:
    """Cholesky-factorize a symmetric positive definite matrix.

    Parameters
    ----------
    s : array_like, shape (n, n)
    ridge : float, optional
        Diagonal jitter added before factorizing. When omitted the exact
        matrix is tried first and :func:`default_ridge` is used only as a
        fallback.
    name : str
        Used in the error message if factorization fails.
    """
    s = np.asarray(s, dtype=float)
    _check_square_symmetric(s, name)
    s = 0.5 * (s + s.T)
    attempts = [0.0, default_ridge(s)] if ridge is None else [float(ridge)]
    for r in attempts:
        lower = _cholesky(s, r)
        if lower is not None:
            logdet = 2.0 * float(np.sum(np.log(np.diag(lower))))
            return SpdFactor(lower=lower, logdet=logdet, ridge=r)
    raise NotPositiveDefiniteError(name, attempts[-1])


def spd_solve(factor: SpdFactor, b) -> np.ndarray:
    """Solve ``S x = b`` given the factor of ``S``."""
    b = np.asarray(b, dtype=float)
    if b.shape[0] != factor.dim:
        raise DimensionError(f"right-hand side has {b.shape[0]} rows, factor has dim {factor.dim}")
    return scipy.linalg.cho_solve((factor.lower, True), b, check_finite=False)


def spd_inverse(factor: SpdFactor) -> np.ndarray:
    inv = spd_solve(factor, np.eye(factor.dim))
    return 0.5 * (inv + inv.T)


def partition(s, split: BlockSplit):
    """Return the four blocks ``(s11, s12, s21, s22)`` of a square matrix."""
    s = np.asarray(s)
    if s.shape[0] != split.total or s.shape[1] != split.total:
        raise DimensionError(f"matrix of shape {s.shape} does not match split {split}")
    f = split.first
    return s[:f, :f], s[:f, f:], s[f:, :f], s[f:, f:]
