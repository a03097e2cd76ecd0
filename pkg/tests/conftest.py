import numpy as np
import pytest


def random_spd(rng, n, cond=10.0):
    """Random SPD matrix with eigenvalues spread over [1, cond]."""
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    evals = np.exp(rng.uniform(0.0, np.log(cond), size=n))
    s = (q * evals) @ q.T
    return 0.5 * (s + s.T)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_model(rng, K, D_x, D_y, T, dT, standardized=False):
    """Random mixture with unit-scale components and, optionally, non-trivial standardization stats."""
    from mnmr.matnorm import MatrixNormalParams
    from mnmr.mixture import MnmmModel
    from mnmr.windows import StandardizationStats, WindowSpec

    spec = WindowSpec(T=T, dT=dT, D_x=D_x, D_y=D_y)
    D, tau = spec.D, spec.tau
    comps = [MatrixNormalParams(rng.standard_normal((D, tau)), random_spd(rng, D, 5.0), random_spd(rng, tau, 5.0))
             for _ in range(K)]
    weights = rng.dirichlet(np.full(K, 2.0))
    stats = None
    if standardized:
        stats = StandardizationStats(rng.normal(0, 5, D), rng.uniform(0.5, 3.0, D), tuple(f"f{i}" for i in range(D)))
    return MnmmModel(weights, comps, window_spec=spec, standardization=stats)
