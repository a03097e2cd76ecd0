"""Matrix normal mixture model: prior sampling, synthetic data and penalized EM.

Fitting maximizes

    sum_i log sum_k pi_k MN(X_i | M_k, U_k, V_k)
      + (alpha - 1) sum_k log pi_k
      + sum_k max_xi pen(xi U_k, V_k / xi)

with pen(U, V) = -gamma/2 [log|U| + tr U^-1 + log|V| + tr V^-1], an
inverse-Wishart-style shrinkage toward the identity. The inner maximum over
the free scale xi makes the penalty invariant to how (U, V) share scale, so
normalizing components to trace(V) = tau never changes the objective.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.cluster.vq
from scipy.special import logsumexp

from .linalg import DimensionError, NotPositiveDefiniteError, spd_factor, spd_inverse
from .matnorm import MatrixNormalParams, mn_logpdf, mn_sample, normalize_scale
from .windows import StandardizationStats, WindowSpec

__all__ = [
    "PriorConfig",
    "FitConfig",
    "FitMetadata",
    "MnmmModel",
    "Responsibilities",
    "FitError",
    "sample_lkj",
    "sample_prior",
    "sample_dataset",
    "component_logpdf",
    "e_step",
    "m_step",
    "penalized_objective",
    "fit_em",
    "save_model",
    "load_model",
]

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1


class FitError(RuntimeError):
    """Every EM restart failed."""

    def __init__(self, message: str, diagnostics: list[str]):
        self.diagnostics = diagnostics
        super().__init__(message + "\n" + "\n".join(diagnostics))


@dataclass(frozen=True)
class PriorConfig:
    """Hyperparameters.

    ``alpha``, ``eta``, ``lambda_u``, ``lambda_v``, ``M0``, ``U0``, ``V0``
    drive :func:`sample_prior`. Fitting uses ``alpha`` as Dirichlet
    pseudo-counts and ``shrink_gamma`` as covariance shrinkage; when
    ``shrink_gamma`` is None it is set to ``0.01 * (N / K) * max(D, tau)``.
    ``M0``/``U0``/``V0`` default to zeros/identity of the right size.
    """

    alpha: float = 2.0
    eta: float = 1.0
    lambda_u: float = 1.0
    lambda_v: float = 1.0
    M0: np.ndarray | None = None
    U0: np.ndarray | None = None
    V0: np.ndarray | None = None
    shrink_gamma: float | None = None

    def __post_init__(self):
        if not (self.alpha > 0 and self.eta > 0 and self.lambda_u > 0 and self.lambda_v > 0):
            raise ValueError("alpha, eta, lambda_u and lambda_v must be positive")
        if self.shrink_gamma is not None and self.shrink_gamma < 0:
            raise ValueError("shrink_gamma must be >= 0")

    def mean_params(self, D: int, tau: int) -> MatrixNormalParams:
        M0 = np.zeros((D, tau)) if self.M0 is None else np.asarray(self.M0, dtype=float)
        U0 = np.eye(D) if self.U0 is None else np.asarray(self.U0, dtype=float)
        V0 = np.eye(tau) if self.V0 is None else np.asarray(self.V0, dtype=float)
        return MatrixNormalParams(M0, U0, V0)

    def gamma(self, N: int, K: int, D: int, tau: int) -> float:
        if self.shrink_gamma is not None:
            return float(self.shrink_gamma)
        return 0.01 * (N / K) * max(D, tau)

    def to_dict(self) -> dict:
        d = {}
        for k, v in asdict(self).items():
            d[k] = np.asarray(v).tolist() if isinstance(v, np.ndarray) else v
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PriorConfig":
        d = dict(d)
        for k in ("M0", "U0", "V0"):
            if d.get(k) is not None:
                d[k] = np.array(d[k], dtype=float)
        return cls(**d)


@dataclass(frozen=True)
class FitConfig:
    max_iters: int = 200
    rel_tol: float = 1e-6
    restarts: int = 5
    flip_flop_iters: int = 2
    seed: int = 0


@dataclass
class FitMetadata:
    iterations: int = 0
    objective: float = float("nan")
    restart: int = -1
    seed: int | None = None
    converged: bool = False
    starved: list = field(default_factory=list)
    n_windows: int = 0


@dataclass
class MnmmModel:
    weights: np.ndarray
    components: list
    window_spec: WindowSpec | None = None
    standardization: StandardizationStats | None = None
    prior: PriorConfig = field(default_factory=PriorConfig)
    fit_metadata: FitMetadata = field(default_factory=FitMetadata)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.ndim != 1 or self.weights.size != len(self.components):
            raise DimensionError("one weight per component required")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError("mixing weights must lie on the simplex")
        shapes = {c.M.shape for c in self.components}
        if len(shapes) != 1:
            raise DimensionError(f"components disagree on shape: {shapes}")
        D, tau = self.components[0].M.shape
        if self.window_spec is not None and (self.window_spec.D, self.window_spec.tau) != (D, tau):
            raise DimensionError("window spec does not match component shape")
        if self.standardization is None:
            self.standardization = StandardizationStats.identity(D)

    @property
    def K(self) -> int:
        return len(self.components)

    @property
    def D(self) -> int:
        return self.components[0].D

    @property
    def tau(self) -> int:
        return self.components[0].tau

    def permuted(self, order) -> "MnmmModel":
        order = list(order)
        return replace(self, weights=self.weights[order], components=[self.components[i] for i in order])


@dataclass
class Responsibilities:
    resp: np.ndarray
    sample_loglik: np.ndarray

    @property
    def total_loglik(self) -> float:
        return float(np.sum(self.sample_loglik))

    @property
    def counts(self) -> np.ndarray:
        return self.resp.sum(axis=0)


# -- prior sampling -----------------------------------------------------------

def sample_lkj(dim: int, eta: float, rng: np.random.Generator) -> np.ndarray:
    """Correlation matrix from LKJ(eta) via the onion construction."""
    if dim < 1 or eta <= 0:
        raise ValueError("dim >= 1 and eta > 0 required")
    if dim == 1:
        return np.ones((1, 1))
    beta = eta + (dim - 2) / 2.0
    r12 = 2.0 * rng.beta(beta, beta) - 1.0
    corr = np.array([[1.0, r12], [r12, 1.0]])
    for k in range(2, dim):
        beta -= 0.5
        y = rng.beta(k / 2.0, beta)
        u = rng.standard_normal(k)
        u /= np.linalg.norm(u)
        w = np.sqrt(y) * u
        z = np.linalg.cholesky(corr) @ w
        corr = np.block([[corr, z[:, None]], [z[None, :], np.ones((1, 1))]])
    return corr


def _lkj_cov(dim, eta, rate, rng, decay=None, unit_scale=False):
    corr = sample_lkj(dim, eta, rng)
    if decay is not None:
        lag = np.abs(np.subtract.outer(np.arange(dim), np.arange(dim)))
        # Schur product of two correlation matrices is a correlation matrix
        corr = corr * decay ** lag
    if unit_scale:
        return corr
    sigma = rng.exponential(1.0 / rate, size=dim)
    return sigma[:, None] * corr * sigma[None, :]


def sample_prior(spec: WindowSpec, K: int, prior: PriorConfig, rng: np.random.Generator,
                 temporal_decay: float | None = None, unit_temporal_scale: bool = False) -> MnmmModel:
    """Draw a model from the generative prior.

    ``temporal_decay`` (0 < rho < 1), if given, multiplies each sampled
    temporal correlation elementwise by ``rho ** |i - j|`` so that
    correlation fades with lag. ``unit_temporal_scale`` uses that
    correlation matrix as V directly, without per-step exponential scales,
    so every time step has the same marginal variance.
    """
    if temporal_decay is not None and not 0.0 < temporal_decay < 1.0:
        raise ValueError("temporal_decay must lie in (0, 1)")
    D, tau = spec.D, spec.tau
    weights = rng.dirichlet(np.full(K, prior.alpha)) if K > 1 else np.ones(1)
    weights = weights / weights.sum()
    mean_prior = prior.mean_params(D, tau)
    components = []
    for _ in range(K):
        U = _lkj_cov(D, prior.eta, prior.lambda_u, rng)
        V = _lkj_cov(tau, prior.eta, prior.lambda_v, rng, temporal_decay, unit_temporal_scale)
        M = mn_sample(mean_prior, rng)
        components.append(normalize_scale(MatrixNormalParams(M, U, V)))
    return MnmmModel(weights, components, window_spec=spec, prior=prior)


def sample_dataset(model: MnmmModel, N: int, rng: np.random.Generator):
    """Return ``(windows (N, D, tau), labels (N,))`` with 0-based labels."""
    if N < 1:
        raise ValueError("N must be >= 1")
    labels = rng.choice(model.K, size=N, p=model.weights)
    windows = np.empty((N, model.D, model.tau))
    for k, comp in enumerate(model.components):
        idx = np.flatnonzero(labels == k)
        if idx.size:
            windows[idx] = mn_sample(comp, rng, size=idx.size)
    return windows, labels


# -- EM -----------------------------------------------------------------------

def component_logpdf(model: MnmmModel, windows) -> np.ndarray:
    """``(N, K)`` matrix of ``log MN(X_i | component k)``."""
    windows = np.asarray(windows, dtype=float)
    if windows.ndim == 2:
        windows = windows[None]
    if windows.shape[1:] != (model.D, model.tau):
        raise DimensionError(f"windows have shape {windows.shape[1:]}, model expects {(model.D, model.tau)}")
    return np.column_stack([np.atleast_1d(mn_logpdf(windows, c)) for c in model.components])


def e_step(model: MnmmModel, windows) -> Responsibilities:
    """Posterior component probabilities, computed in log space."""
    with np.errstate(divide="ignore"):
        log_joint = np.log(model.weights) + component_logpdf(model, windows)
    sample_ll = logsumexp(log_joint, axis=1)
    resp = np.exp(log_joint - sample_ll[:, None])
    resp /= resp.sum(axis=1, keepdims=True)
    return Responsibilities(resp, sample_ll)


def _penalty(U, V, gamma) -> float:
    if gamma == 0:
        return 0.0
    fu, fv = spd_factor(U, name="U"), spd_factor(V, name="V")
    a = np.trace(spd_inverse(fu))
    b = np.trace(spd_inverse(fv))
    return -0.5 * gamma * (fu.logdet + a + fv.logdet + b)


def _best_xi(U, V) -> float:
    """Scale xi maximizing pen(xi U, V / xi): root of b xi^2 + (D - tau) xi - a = 0."""
    a = np.trace(spd_inverse(spd_factor(U, name="U")))
    b = np.trace(spd_inverse(spd_factor(V, name="V")))
    c = U.shape[0] - V.shape[0]
    return (-c + np.sqrt(c * c + 4.0 * a * b)) / (2.0 * b)


def _profile_penalty(U, V, gamma) -> float:
    if gamma == 0:
        return 0.0
    xi = _best_xi(U, V)
    return _penalty(xi * U, V / xi, gamma)


def penalized_objective(model: MnmmModel, windows, gamma: float,
                        resp: Responsibilities | None = None) -> float:
    """Penalized log-likelihood maximized by :func:`fit_em`."""
    if resp is None:
        resp = e_step(model, windows)
    alpha = model.prior.alpha
    obj = resp.total_loglik
    if alpha != 1.0:
        with np.errstate(divide="ignore"):
            obj += (alpha - 1.0) * float(np.sum(np.log(model.weights)))
    obj += sum(_profile_penalty(c.U, c.V, gamma) for c in model.components)
    return float(obj)


def _flip_flop(R, r, n, U, V, gamma, iters):
    D, tau = R.shape[1:]
    eye_d, eye_t = np.eye(D), np.eye(tau)
    for _ in range(iters):
        RV = R @ spd_inverse(spd_factor(V, name="V"))
        S_u = np.einsum("n,nij,nkj->ik", r, RV, R)
        U = (0.5 * (S_u + S_u.T) + gamma * eye_d) / (n * tau + gamma)
        UR = spd_inverse(spd_factor(U, name="U")) @ R
        S_v = np.einsum("n,nji,njk->ik", r, R, UR)
        V = (0.5 * (S_v + S_v.T) + gamma * eye_t) / (n * D + gamma)
    return U, V


def m_step(windows, resp, prior: PriorConfig, flip_flop_iters: int = 2,
           init: MnmmModel | None = None, gamma: float | None = None):
    """One maximization step.

    Parameters
    ----------
    windows : array, shape (N, D, tau)
    resp : Responsibilities or array (N, K)
    init : MnmmModel, optional
        Previous parameters; its (U, V) warm-start the flip-flop after being
        moved to the penalty-optimal scale. Without it the flip-flop starts
        from V = I.
    gamma : float, optional
        Shrinkage strength; defaults to ``prior.gamma(N, K, D, tau)``.

    Returns
    -------
    weights : array (K,)
    components : list of MatrixNormalParams (normalized to trace(V) = tau)
    starved : list of int
        Components with too little mass. They keep their ``init`` parameters
        (a partial M-step, so the objective still cannot decrease) or, without
        ``init``, take the prior mean parameters.
    """
    X = np.asarray(windows, dtype=float)
    r_all = resp.resp if isinstance(resp, Responsibilities) else np.asarray(resp, dtype=float)
    N, D, tau = X.shape
    K = r_all.shape[1]
    if gamma is None:
        gamma = prior.gamma(N, K, D, tau)
    counts = r_all.sum(axis=0)
    weights = (counts + prior.alpha - 1.0) / (N + K * (prior.alpha - 1.0))
    weights = np.clip(weights, 0.0, None)
    weights /= weights.sum()

    fallback = normalize_scale(prior.mean_params(D, tau))
    components, starved = [], []
    for k in range(K):
        n = counts[k]
        if weights[k] < 1e-4 or n < D + tau:
            starved.append(k)
            components.append(init.components[k] if init is not None else fallback)
            continue
        r = r_all[:, k]
        M = np.einsum("n,nij->ij", r, X) / n
        if init is not None:
            U, V = init.components[k].U, init.components[k].V
            if gamma > 0:
                xi = _best_xi(U, V)
                U, V = xi * U, V / xi
        else:
            U, V = np.eye(D), np.eye(tau)
        U, V = _flip_flop(X - M, r, n, U, V, gamma, flip_flop_iters)
        components.append(normalize_scale(MatrixNormalParams(M, U, V)))
    return weights, components, starved


def _initial_resp(X, K, rng):
    flat = X.reshape(X.shape[0], -1)
    if K == 1:
        return np.ones((X.shape[0], 1))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        _, labels = scipy.cluster.vq.kmeans2(flat, K, minit="++", seed=rng)
    resp = np.zeros((X.shape[0], K))
    resp[np.arange(X.shape[0]), labels] = 1.0
    return resp


def _run_restart(X, K, prior, config, gamma, rng, spec, stats):
    def build(w, comps, meta):
        return MnmmModel(w, comps, window_spec=spec, standardization=stats, prior=prior, fit_metadata=meta)

    w, comps, starved = m_step(X, _initial_resp(X, K, rng), prior, config.flip_flop_iters, gamma=gamma)
    model = build(w, comps, FitMetadata(starved=starved))
    trace = []
    converged = False
    for it in range(config.max_iters):
        resp = e_step(model, X)
        obj = penalized_objective(model, X, gamma, resp)
        if not np.isfinite(obj):
            raise FloatingPointError(f"objective became {obj} at iteration {it}")
        trace.append(obj)
        if it > 0 and abs(obj - trace[-2]) <= config.rel_tol * abs(trace[-2]):
            converged = True
            break
        if it == config.max_iters - 1:
            break
        w, comps, starved = m_step(X, resp, prior, config.flip_flop_iters, init=model, gamma=gamma)
        model = build(w, comps, FitMetadata(starved=starved))
    model.fit_metadata.iterations = len(trace)
    model.fit_metadata.objective = trace[-1]
    model.fit_metadata.converged = converged
    return model, trace


def fit_em(windows, K: int, prior: PriorConfig | None = None, config: FitConfig | None = None,
           spec: WindowSpec | None = None, standardization: StandardizationStats | None = None):
    """Fit a K-component mixture by penalized EM with restarts.

    ``windows`` are used as given (standardize beforehand; pass the stats so
    they travel with the model). Returns ``(model, objective_trace)`` for the
    best restart; ties go to the lowest restart index.
    """
    prior = prior or PriorConfig()
    config = config or FitConfig()
    X = np.asarray(windows, dtype=float)
    if X.ndim != 3:
        raise DimensionError("windows must have shape (N, D, tau)")
    N, D, tau = X.shape
    if K < 1 or K > N:
        raise ValueError(f"need 1 <= K <= N, got K={K}, N={N}")
    gamma = prior.gamma(N, K, D, tau)
    rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(config.seed).spawn(max(1, config.restarts))]

    best, best_trace, failures = None, None, []
    for i, rng in enumerate(rngs):
        try:
            model, trace = _run_restart(X, K, prior, config, gamma, rng, spec, standardization)
        except (NotPositiveDefiniteError, FloatingPointError, np.linalg.LinAlgError) as exc:
            failures.append(f"restart {i}: {exc}")
            log.warning("EM restart %d failed: %s", i, exc)
            continue
        log.debug("restart %d: objective %.6f after %d iterations", i, trace[-1], len(trace))
        if best is None or trace[-1] > best_trace[-1]:
            best, best_trace = model, trace
            best.fit_metadata.restart = i
    if best is None:
        raise FitError(f"all {len(rngs)} EM restarts failed (K={K}, N={N})", failures)
    best.fit_metadata.seed = config.seed
    best.fit_metadata.n_windows = N
    return best, best_trace


# -- persistence --------------------------------------------------------------

def _model_to_dict(model: MnmmModel) -> dict:
    spec = model.window_spec
    return {
        "schema_version": SCHEMA_VERSION,
        "K": model.K,
        "D": model.D,
        "tau": model.tau,
        "T": spec.T if spec else None,
        "dT": spec.dT if spec else None,
        "D_x": spec.D_x if spec else None,
        "D_y": spec.D_y if spec else None,
        "step_seconds": spec.step_seconds if spec else None,
        "weights": model.weights.tolist(),
        "components": [{"M": c.M.tolist(), "U": c.U.tolist(), "V": c.V.tolist()} for c in model.components],
        "standardization": model.standardization.to_dict(),
        "prior": model.prior.to_dict(),
        "fit_metadata": asdict(model.fit_metadata),
    }


def save_model(model: MnmmModel, path) -> None:
    """Write the model as JSON (matrices as row-major nested lists)."""
    Path(path).write_text(json.dumps(_model_to_dict(model), indent=1) + "\n", encoding="utf-8")


def load_model(path) -> MnmmModel:
    d = json.loads(Path(path).read_text(encoding="utf-8"))
    if d.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported model schema_version {d.get('schema_version')!r}")
    spec = None
    if d.get("T") is not None:
        spec = WindowSpec(T=d["T"], dT=d["dT"], D_x=d["D_x"], D_y=d["D_y"], step_seconds=d["step_seconds"])
    comps = [MatrixNormalParams(np.array(c["M"]), np.array(c["U"]), np.array(c["V"])) for c in d["components"]]
    return MnmmModel(
        weights=np.array(d["weights"], dtype=float),
        components=comps,
        window_spec=spec,
        standardization=StandardizationStats.from_dict(d["standardization"]),
        prior=PriorConfig.from_dict(d["prior"]),
        fit_metadata=FitMetadata(**d["fit_metadata"]),
    )
