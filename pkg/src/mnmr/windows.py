"""Window geometry and per-feature standardization."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import DimensionError

__all__ = [
    "FEATURES",
    "WindowSpec",
    "StandardizationStats",
    "ZeroVarianceError",
    "standardize_fit",
    "standardize_apply",
    "standardize_invert",
]

#: Row order of every window matrix built from trajectories.
FEATURES = ("v_fv", "dv", "gap", "a_fv")


class ZeroVarianceError(ValueError):
    def __init__(self, feature: str):
        self.feature = feature
        super().__init__(f"feature {feature!r} has zero variance in the training windows")


class NonFiniteError(ValueError):
    def __init__(self, feature: str, count: int):
        self.feature = feature
        super().__init__(f"feature {feature!r} has {count} non-finite values in the training windows")


@dataclass(frozen=True)
class WindowSpec:
    """Shape of a window: ``D_x`` regressor rows above ``D_y`` response rows,
    ``T`` past columns followed by ``dT`` future columns."""

    T: int
    dT: int
    D_x: int = 3
    D_y: int = 1
    step_seconds: float = 0.2

    def __post_init__(self):
        for name in ("T", "dT", "D_x", "D_y"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")

    @property
    def D(self) -> int:
        return self.D_x + self.D_y

    @property
    def tau(self) -> int:
        return self.T + self.dT

    def to_dict(self) -> dict:
        return {"T": self.T, "dT": self.dT, "D_x": self.D_x, "D_y": self.D_y,
                "step_seconds": self.step_seconds}

    @classmethod
    def from_dict(cls, d: dict) -> "WindowSpec":
        return cls(T=int(d["T"]), dT=int(d["dT"]), D_x=int(d["D_x"]), D_y=int(d["D_y"]),
                   step_seconds=float(d.get("step_seconds", 0.2)))


@dataclass(frozen=True)
class StandardizationStats:
    mean: np.ndarray
    std: np.ndarray
    names: tuple = field(default=FEATURES)

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).ravel()
        std = np.asarray(self.std, dtype=float).ravel()
        if mean.shape != std.shape:
            raise DimensionError("mean and std lengths differ")
        names = tuple(self.names)
        if len(names) != mean.size:
            names = tuple(f"f{i}" for i in range(mean.size))
        for n, s in zip(names, std):
            if not s > 0:
                raise ZeroVarianceError(n)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)
        object.__setattr__(self, "names", names)

    @classmethod
    def identity(cls, D: int, names=None) -> "StandardizationStats":
        return cls(np.zeros(D), np.ones(D), tuple(names) if names else tuple(f"f{i}" for i in range(D)))

    def to_dict(self) -> dict:
        return {"names": list(self.names), "mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "StandardizationStats":
        return cls(np.array(d["mean"], dtype=float), np.array(d["std"], dtype=float), tuple(d["names"]))


def standardize_fit(windows, names=None) -> StandardizationStats:
    """Per-feature-row mean and standard deviation pooled over all windows and columns."""
    w = np.asarray(windows, dtype=float)
    if w.ndim != 3 or w.shape[0] < 2:
        raise ValueError("need at least two windows of shape (D, tau) to fit standardization")
    D = w.shape[1]
    rows = np.swapaxes(w, 0, 1).reshape(D, -1)
    if names is None:
        names = FEATURES if D == len(FEATURES) else tuple(f"f{i}" for i in range(D))
    bad = ~np.isfinite(rows)
    if bad.any():
        i = int(np.flatnonzero(bad.any(axis=1))[0])
        raise NonFiniteError(names[i], int(bad[i].sum()))
    mean, std = rows.mean(axis=1), rows.std(axis=1)
    for n, m, sd in zip(names, mean, std):
        if sd <= 1e-12 * max(1.0, abs(m)):
            raise ZeroVarianceError(n)
    return StandardizationStats(mean, std, tuple(names))


def _rows(stats: StandardizationStats, rows):
    if rows is None:
        return stats.mean, stats.std
    return stats.mean[rows], stats.std[rows]


def standardize_apply(x, stats: StandardizationStats, rows=None) -> np.ndarray:
    """z-score the rows (axis -2) of ``x``; ``rows`` selects a subset of the features."""
    m, s = _rows(stats, rows)
    return (np.asarray(x, dtype=float) - m[:, None]) / s[:, None]


def standardize_invert(z, stats: StandardizationStats, rows=None) -> np.ndarray:
    m, s = _rows(stats, rows)
    return np.asarray(z, dtype=float) * s[:, None] + m[:, None]
