"""Matrix normal distribution MN(M, U, V), i.e. vec(X) ~ N(vec(M), V kron U).

U (D x D) is the row/feature covariance, V (tau x tau) the column/temporal
covariance. Nothing here materializes the (D*tau) x (D*tau) covariance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .linalg import BlockSplit, DimensionError, SpdFactor, partition, spd_factor, spd_solve

__all__ = [
    "MatrixNormalParams",
    "mn_logpdf",
    "mn_sample",
    "mn_condition_cols",
    "mn_condition_rows",
    "mn_marginal",
    "normalize_scale",
    "scale_xi",
]

LOG_2PI = np.log(2.0 * np.pi)


def _sym(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


@dataclass(frozen=True)
class MatrixNormalParams:
    M: np.ndarray
    U: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        M = np.atleast_2d(np.asarray(self.M, dtype=float))
        U = np.atleast_2d(np.asarray(self.U, dtype=float))
        V = np.atleast_2d(np.asarray(self.V, dtype=float))
        if U.shape != (M.shape[0], M.shape[0]) or V.shape != (M.shape[1], M.shape[1]):
            raise DimensionError(
                f"inconsistent shapes M{M.shape}, U{U.shape}, V{V.shape}"
            )
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "V", V)

    @property
    def D(self) -> int:
        return self.M.shape[0]

    @property
    def tau(self) -> int:
        return self.M.shape[1]

    def transpose(self) -> "MatrixNormalParams":
        """X ~ MN(M, U, V)  <=>  X^T ~ MN(M^T, V, U)."""
        return MatrixNormalParams(self.M.T, self.V, self.U)

    def scaled(self, xi: float) -> "MatrixNormalParams":
        """Same distribution with (xi * U, V / xi)."""
        return MatrixNormalParams(self.M, xi * self.U, self.V / xi)


def _inv_lower(f: SpdFactor) -> np.ndarray:
    return scipy.linalg.solve_triangular(f.lower, np.eye(f.dim), lower=True, check_finite=False)


def mn_logpdf(x, p: MatrixNormalParams, u_factor: SpdFactor | None = None,
              v_factor: SpdFactor | None = None):
    """Log-density of one matrix ``(D, tau)`` or a stack ``(N, D, tau)``.

    Uses -1/2 [D tau ln 2pi + D ln|V| + tau ln|U| + tr(V^-1 R^T U^-1 R)]
    with R = X - M, evaluated through the triangular factors.
    Precomputed factors of U and V may be passed to skip refactorization.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[-2:] != p.M.shape:
        raise DimensionError(f"X has shape {x.shape[-2:]}, expected {p.M.shape}")
    fu = u_factor if u_factor is not None else spd_factor(p.U, name="U")
    fv = v_factor if v_factor is not None else spd_factor(p.V, name="V")
    D, tau = p.M.shape
    w = _inv_lower(fu) @ (x - p.M) @ _inv_lower(fv).T
    quad = np.sum(w * w, axis=(-2, -1))
    out = -0.5 * (D * tau * LOG_2PI + D * fv.logdet + tau * fu.logdet + quad)
    return float(out) if np.ndim(out) == 0 else out


def mn_sample(p: MatrixNormalParams, rng: np.random.Generator, size: int | None = None):
    """Draw ``M + L_U Z L_V^T``; returns ``(D, tau)`` or ``(size, D, tau)``."""
    lu = spd_factor(p.U, name="U").lower
    lv = spd_factor(p.V, name="V").lower
    shape = p.M.shape if size is None else (size, *p.M.shape)
    z = rng.standard_normal(shape)
    return p.M + lu @ z @ lv.T


def mn_condition_cols(p: MatrixNormalParams, split: BlockSplit, observed) -> MatrixNormalParams:
    """Condition on the first ``split.first`` columns.

    Mean M2 + (O - M1) V11^-1 V12, column covariance V22 - V21 V11^-1 V12,
    row covariance unchanged. ``observed`` may be a stack ``(N, D, T)``, in
    which case the returned mean is stacked too.
    """
    if split.total != p.tau:
        raise DimensionError(f"split {split} does not match tau={p.tau}")
    observed = np.asarray(observed, dtype=float)
    if observed.shape[-2:] != (p.D, split.first):
        raise DimensionError(f"observed block has shape {observed.shape}, expected ({p.D}, {split.first})")
    v11, v12, v21, v22 = partition(p.V, split)
    gain = spd_solve(spd_factor(v11, name="V11"), v12)
    f = split.first
    mean = p.M[:, f:] + (observed - p.M[:, :f]) @ gain
    v_cond = _sym(v22 - v21 @ gain)
    if mean.ndim == 2:
        return MatrixNormalParams(mean, p.U, v_cond)
    return _StackedParams(mean, p.U, v_cond)


def mn_condition_rows(p: MatrixNormalParams, split: BlockSplit, observed) -> MatrixNormalParams:
    """Condition on the first ``split.first`` rows; mirror of :func:`mn_condition_cols`."""
    if split.total != p.D:
        raise DimensionError(f"split {split} does not match D={p.D}")
    observed = np.asarray(observed, dtype=float)
    if observed.shape != (split.first, p.tau):
        raise DimensionError(f"observed block has shape {observed.shape}, expected ({split.first}, {p.tau})")
    u11, u12, u21, u22 = partition(p.U, split)
    gain = spd_solve(spd_factor(u11, name="U11"), u12)
    f = split.first
    mean = p.M[f:] + gain.T @ (observed - p.M[:f])
    return MatrixNormalParams(mean, _sym(u22 - u21 @ gain), p.V)


def mn_marginal(p: MatrixNormalParams, rows=None, cols=None) -> MatrixNormalParams:
    """Marginal over a subset of rows and columns (``None`` keeps all)."""
    rows = np.arange(p.D) if rows is None else np.atleast_1d(np.asarray(rows, dtype=int))
    cols = np.arange(p.tau) if cols is None else np.atleast_1d(np.asarray(cols, dtype=int))
    if rows.size == 0 or cols.size == 0:
        raise DimensionError("empty row or column selection")
    if rows.min() < 0 or rows.max() >= p.D or cols.min() < 0 or cols.max() >= p.tau:
        raise DimensionError("selection out of bounds")
    return MatrixNormalParams(p.M[np.ix_(rows, cols)], p.U[np.ix_(rows, rows)], p.V[np.ix_(cols, cols)])


def scale_xi(p: MatrixNormalParams) -> float:
    return float(np.trace(p.V)) / p.tau


def normalize_scale(p: MatrixNormalParams) -> MatrixNormalParams:
    """Rescale to trace(V) = tau, letting U absorb the scale."""
    return p.scaled(scale_xi(p))


class _StackedParams:
    """Conditioned parameters sharing U and V across a stack of means."""

    def __init__(self, M, U, V):
        self.M, self.U, self.V = M, U, V

    @property
    def D(self) -> int:
        return self.M.shape[-2]

    @property
    def tau(self) -> int:
        return self.M.shape[-1]

    def __getitem__(self, i) -> MatrixNormalParams:
        return MatrixNormalParams(self.M[i], self.U, self.V)
