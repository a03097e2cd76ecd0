"""Matrix normal mixture regression.

Each component is conditioned on the observed past columns (all D rows,
first T columns) and the future regressor rows are then marginalized out,
leaving a Gaussian mixture over vec(Y'), the D_y x dT future responses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp
from scipy.stats import multivariate_normal

from .linalg import BlockSplit, DimensionError, kron, spd_factor, spd_solve, vec
from .matnorm import MatrixNormalParams, mn_condition_cols, mn_logpdf
from .mixture import MnmmModel
from .windows import WindowSpec, standardize_apply

__all__ = [
    "PredictiveMixture",
    "predictive_distribution",
    "predict_batch",
    "oracle_condition_vectorized",
    "point_predict",
    "sample_prediction",
    "predictive_logpdf",
    "responsibilities_over_time",
]

# exp(-745) underflows to zero in double precision
LOG_WEIGHT_FLOOR = 745.0


@dataclass(frozen=True)
class PredictiveMixture:
    """Gaussian mixture over vec(Y') (length D_y * dT, column-stacked)."""

    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray

    @property
    def K(self) -> int:
        return self.weights.size

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def affine(self, scale, shift) -> "PredictiveMixture":
        """Mixture of ``scale * y + shift`` (elementwise, per coordinate)."""
        scale = np.asarray(scale, dtype=float)
        return PredictiveMixture(
            self.weights,
            self.means * scale + shift,
            self.covs * np.outer(scale, scale),
        )


def _normalize_log_weights(log_w) -> np.ndarray:
    log_w = np.asarray(log_w, dtype=float)
    shifted = log_w - np.max(log_w, axis=-1, keepdims=True)
    w = np.where(shifted < -LOG_WEIGHT_FLOOR, 0.0, np.exp(shifted))
    return w / w.sum(axis=-1, keepdims=True)


def _response_scaling(model: MnmmModel, spec: WindowSpec):
    stats = model.standardization
    rows = np.arange(spec.D_x, spec.D)
    scale = np.tile(stats.std[rows], spec.dT)
    shift = np.tile(stats.mean[rows], spec.dT)
    return scale, shift


def _spec(model: MnmmModel, spec: WindowSpec | None) -> WindowSpec:
    spec = spec or model.window_spec
    if spec is None:
        raise ValueError("model has no window spec; pass one explicitly")
    if (spec.D, spec.tau) != (model.D, model.tau):
        raise DimensionError(f"window spec {spec} does not match model shape {(model.D, model.tau)}")
    return spec


def predict_batch(model: MnmmModel, pasts, units: str = "physical", spec: WindowSpec | None = None):
    """Predictive mixtures for a stack of past windows ``(N, D, T)``.

    Returns ``(weights (N, K), means (N, K, m), covs (K, m, m))`` with
    m = D_y * dT; covariances do not depend on the observed past.
    ``units="standardized"`` takes standardized input and returns
    standardized output; ``"physical"`` works in raw feature units.
    """
    spec = _spec(model, spec)
    pasts = np.asarray(pasts, dtype=float)
    if pasts.ndim == 2:
        pasts = pasts[None]
    if pasts.shape[1:] != (spec.D, spec.T):
        raise DimensionError(f"past windows have shape {pasts.shape[1:]}, expected {(spec.D, spec.T)}")
    if units == "physical":
        z = standardize_apply(pasts, model.standardization)
    elif units == "standardized":
        z = pasts
    else:
        raise ValueError(f"unknown units {units!r}")

    split = BlockSplit(spec.T, spec.dT)
    y_rows = slice(spec.D_x, spec.D)
    N, K, m = z.shape[0], model.K, spec.D_y * spec.dT
    log_w = np.empty((N, K))
    means = np.empty((N, K, m))
    covs = np.empty((K, m, m))
    with np.errstate(divide="ignore"):
        log_pi = np.log(model.weights)
    for k, comp in enumerate(model.components):
        head = MatrixNormalParams(comp.M[:, : spec.T], comp.U, comp.V[: spec.T, : spec.T])
        log_w[:, k] = log_pi[k] + np.atleast_1d(mn_logpdf(z, head))
        cond = mn_condition_cols(comp, split, z)
        means[:, k] = vec(cond.M[..., y_rows, :])
        covs[k] = kron(cond.V, cond.U[y_rows, y_rows])
    weights = _normalize_log_weights(log_w)
    if units == "physical":
        scale, shift = _response_scaling(model, spec)
        means = means * scale + shift
        covs = covs * np.outer(scale, scale)
    return weights, means, covs


def predictive_distribution(model: MnmmModel, past, units: str = "physical",
                            spec: WindowSpec | None = None) -> PredictiveMixture:
    """Predictive mixture for one past window ``(D, T)``."""
    w, mu, cov = predict_batch(model, np.asarray(past)[None], units=units, spec=spec)
    return PredictiveMixture(w[0], mu[0], cov)


def oracle_condition_vectorized(model: MnmmModel, past, units: str = "physical",
                                spec: WindowSpec | None = None) -> PredictiveMixture:
    """Reference implementation through dense (D*tau)-dimensional Gaussians.

    Builds kron(V_k, U_k), conditions on the observed past coordinates with
    plain Gaussian algebra and drops the future regressor coordinates.
    """
    spec = _spec(model, spec)
    past = np.asarray(past, dtype=float)
    if units == "physical":
        past = standardize_apply(past, model.standardization)
    D, T, tau = spec.D, spec.T, spec.tau
    obs = [i + D * j for j in range(T) for i in range(D)]
    fut_y = [i + D * j for j in range(T, tau) for i in range(spec.D_x, D)]
    x_obs = past.reshape(-1, order="F")

    log_w, means, covs = [], [], []
    for pi_k, comp in zip(model.weights, model.components):
        mu = comp.M.reshape(-1, order="F")
        sigma = np.kron(comp.V, comp.U)
        s_oo = sigma[np.ix_(obs, obs)]
        s_yo = sigma[np.ix_(fut_y, obs)]
        s_yy = sigma[np.ix_(fut_y, fut_y)]
        gain = np.linalg.solve(s_oo, s_yo.T).T
        means.append(mu[fut_y] + gain @ (x_obs - mu[obs]))
        c = s_yy - gain @ s_yo.T
        covs.append(0.5 * (c + c.T))
        with np.errstate(divide="ignore"):
            log_w.append(np.log(pi_k) + multivariate_normal.logpdf(x_obs, mu[obs], s_oo))
    pm = PredictiveMixture(_normalize_log_weights(np.array(log_w)), np.array(means), np.array(covs))
    if units == "physical":
        pm = pm.affine(*_response_scaling(model, spec))
    return pm


def point_predict(pm: PredictiveMixture):
    """Mixture mean and per-coordinate mixture variance."""
    mean = pm.weights @ pm.means
    second = pm.weights @ (np.diagonal(pm.covs, axis1=1, axis2=2) + pm.means**2)
    return mean, np.maximum(second - mean**2, 0.0)


def sample_prediction(pm: PredictiveMixture, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` draws from the predictive mixture, shape ``(n, dim)``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    labels = rng.choice(pm.K, size=n, p=pm.weights)
    out = np.empty((n, pm.dim))
    for k in range(pm.K):
        idx = np.flatnonzero(labels == k)
        if idx.size == 0:
            continue
        # eigh tolerates the PSD (possibly singular) covariances conditioning can produce
        evals, evecs = np.linalg.eigh(pm.covs[k])
        root = evecs * np.sqrt(np.clip(evals, 0.0, None))
        out[idx] = pm.means[k] + rng.standard_normal((idx.size, pm.dim)) @ root.T
    return out


def predictive_logpdf(weights, means, covs, y) -> np.ndarray:
    """Log-density of ``y`` under predictive mixtures.

    Shapes follow :func:`predict_batch`: ``weights (N, K)``, ``means (N, K, m)``,
    ``covs (K, m, m)``, ``y (N, m)``; returns ``(N,)``.
    """
    weights, means, y = np.atleast_2d(weights), np.asarray(means), np.atleast_2d(y)
    if means.ndim == 2:
        means = means[None]
    comp = np.empty(weights.shape)
    for k in range(weights.shape[1]):
        f = spd_factor(covs[k], name=f"predictive covariance {k}")
        r = y - means[:, k]
        quad = np.sum(r * spd_solve(f, r.T).T, axis=1)
        comp[:, k] = -0.5 * (r.shape[1] * np.log(2 * np.pi) + f.logdet + quad)
    with np.errstate(divide="ignore"):
        return logsumexp(np.log(weights) + comp, axis=1)


def responsibilities_over_time(model: MnmmModel, pair, spec: WindowSpec | None = None):
    """Slide the past window along a trajectory pair (stride 1).

    Returns ``(times, betas)`` where ``times[j]`` is the timestamp of the
    first predicted step and ``betas[j]`` the component weights; there are
    ``len(pair) - tau + 1`` entries.
    """
    spec = _spec(model, spec)
    series = pair.features()
    L = series.shape[1]
    if L < spec.tau:
        raise ValueError(f"pair {pair.pair_id} has {L} samples, needs at least {spec.tau}")
    starts = np.arange(L - spec.tau + 1)
    pasts = np.stack([series[:, s : s + spec.T] for s in starts])
    weights, _, _ = predict_batch(model, pasts, units="physical", spec=spec)
    return pair.time[starts + spec.T], weights
