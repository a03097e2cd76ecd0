import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import multivariate_normal

from mnmr.linalg import BlockSplit, DimensionError, kron, vec
from mnmr.matnorm import (
    MatrixNormalParams,
    mn_condition_cols,
    mn_condition_rows,
    mn_logpdf,
    mn_marginal,
    mn_sample,
    normalize_scale,
)

from conftest import random_spd


def random_params(rng, D, tau):
    return MatrixNormalParams(rng.standard_normal((D, tau)), random_spd(rng, D), random_spd(rng, tau))


def dense_condition(mu, sigma, obs_idx, obs_val, keep_idx):
    """Plain Gaussian conditioning of N(mu, sigma) on coordinates obs_idx."""
    s_oo = sigma[np.ix_(obs_idx, obs_idx)]
    s_ko = sigma[np.ix_(keep_idx, obs_idx)]
    gain = s_ko @ np.linalg.inv(s_oo)
    mean = mu[keep_idx] + gain @ (obs_val - mu[obs_idx])
    cov = sigma[np.ix_(keep_idx, keep_idx)] - gain @ s_ko.T
    return mean, cov


def test_logpdf_at_mean_identity():
    p = MatrixNormalParams(np.zeros((2, 3)), np.eye(2), np.eye(3))
    assert mn_logpdf(np.zeros((2, 3)), p) == pytest.approx(-3 * np.log(2 * np.pi), abs=1e-12)
    assert mn_logpdf(np.zeros((2, 3)), p) == pytest.approx(-5.51363, abs=1e-5)


def test_logpdf_matches_dense(rng):
    for _ in range(50):
        D, tau = rng.integers(1, 5), rng.integers(1, 7)
        p = random_params(rng, D, tau)
        x = rng.standard_normal((D, tau))
        dense = multivariate_normal.logpdf(vec(x), vec(p.M), kron(p.V, p.U))
        assert mn_logpdf(x, p) == pytest.approx(dense, abs=1e-8)


def test_logpdf_batch_matches_single(rng):
    p = random_params(rng, 3, 4)
    xs = rng.standard_normal((6, 3, 4))
    np.testing.assert_allclose(mn_logpdf(xs, p), [mn_logpdf(x, p) for x in xs], rtol=0, atol=1e-12)


@pytest.mark.parametrize("xi", [0.5, 2.0, 10.0])
def test_logpdf_scale_invariance(rng, xi):
    p = random_params(rng, 3, 4)
    x = rng.standard_normal((3, 4))
    assert mn_logpdf(x, p.scaled(xi)) == pytest.approx(mn_logpdf(x, p), abs=1e-10)


def test_logpdf_dimension_mismatch(rng):
    with pytest.raises(DimensionError):
        mn_logpdf(np.zeros((3, 3)), random_params(rng, 2, 3))


def test_sample_mean_standard():
    p = MatrixNormalParams(np.zeros((2, 3)), np.eye(2), np.eye(3))
    xs = mn_sample(p, np.random.default_rng(0), size=50_000)
    assert np.max(np.abs(xs.mean(axis=0))) < 0.02


def test_sample_covariance_is_kronecker(rng):
    p = MatrixNormalParams(np.zeros((2, 2)), random_spd(rng, 2), random_spd(rng, 2))
    xs = mn_sample(p, np.random.default_rng(1), size=100_000)
    emp = np.cov(vec(xs).T)
    target = kron(p.V, p.U)
    assert np.linalg.norm(emp - target) / np.linalg.norm(target) < 0.05


def test_sample_deterministic(rng):
    p = random_params(rng, 3, 4)
    a = mn_sample(p, np.random.default_rng(7))
    b = mn_sample(p, np.random.default_rng(7))
    np.testing.assert_array_equal(a, b)


def test_condition_cols_independent_blocks(rng):
    U = random_spd(rng, 2)
    V = np.zeros((5, 5))
    V[:3, :3], V[3:, 3:] = random_spd(rng, 3), random_spd(rng, 2)
    p = MatrixNormalParams(rng.standard_normal((2, 5)), U, V)
    c = mn_condition_cols(p, BlockSplit(3, 2), rng.standard_normal((2, 3)))
    np.testing.assert_allclose(c.M, p.M[:, 3:])
    np.testing.assert_allclose(c.V, V[3:, 3:])
    np.testing.assert_array_equal(c.U, U)


def test_condition_cols_scalar_case():
    p = MatrixNormalParams(np.zeros((1, 2)), [[1.0]], [[1.0, 0.5], [0.5, 1.0]])
    c = mn_condition_cols(p, BlockSplit(1, 1), [[1.0]])
    assert c.M[0, 0] == pytest.approx(0.5)
    assert c.V[0, 0] * c.U[0, 0] == pytest.approx(0.75)


def test_condition_cols_matches_dense(rng):
    D, tau, T = 3, 5, 3
    for _ in range(20):
        p = random_params(rng, D, tau)
        obs = rng.standard_normal((D, T))
        c = mn_condition_cols(p, BlockSplit(T, tau - T), obs)
        obs_idx = [i + D * j for j in range(T) for i in range(D)]
        keep = [i + D * j for j in range(T, tau) for i in range(D)]
        mean, cov = dense_condition(vec(p.M), kron(p.V, p.U), obs_idx, vec(obs), keep)
        np.testing.assert_allclose(vec(c.M), mean, atol=1e-8, rtol=0)
        assert np.linalg.norm(kron(c.V, c.U) - cov) < 1e-8


def test_condition_cols_stacked(rng):
    p = random_params(rng, 2, 4)
    obs = rng.standard_normal((5, 2, 3))
    c = mn_condition_cols(p, BlockSplit(3, 1), obs)
    for i in range(5):
        np.testing.assert_allclose(c[i].M, mn_condition_cols(p, BlockSplit(3, 1), obs[i]).M)


def test_condition_rows_independent_blocks(rng):
    U = np.zeros((4, 4))
    U[:3, :3], U[3:, 3:] = random_spd(rng, 3), random_spd(rng, 1)
    p = MatrixNormalParams(rng.standard_normal((4, 3)), U, random_spd(rng, 3))
    c = mn_condition_rows(p, BlockSplit(3, 1), rng.standard_normal((3, 3)))
    m = mn_marginal(p, rows=[3])
    np.testing.assert_allclose(c.M, m.M)
    np.testing.assert_allclose(c.U, m.U)
    np.testing.assert_allclose(c.V, m.V)


def test_condition_rows_transpose_duality(rng):
    p = random_params(rng, 4, 3)
    obs = rng.standard_normal((2, 3))
    rows = mn_condition_rows(p, BlockSplit(2, 2), obs)
    cols = mn_condition_cols(p.transpose(), BlockSplit(2, 2), obs.T)
    np.testing.assert_allclose(rows.M, cols.M.T, atol=1e-12)
    np.testing.assert_allclose(rows.U, cols.V, atol=1e-12)
    np.testing.assert_allclose(rows.V, cols.U, atol=1e-12)


def test_condition_rows_matches_dense(rng):
    D, tau, Dx = 4, 3, 3
    for _ in range(20):
        p = random_params(rng, D, tau)
        obs = rng.standard_normal((Dx, tau))
        c = mn_condition_rows(p, BlockSplit(Dx, D - Dx), obs)
        obs_idx = [i + D * j for j in range(tau) for i in range(Dx)]
        keep = [i + D * j for j in range(tau) for i in range(Dx, D)]
        mean, cov = dense_condition(vec(p.M), kron(p.V, p.U), obs_idx, vec(obs), keep)
        np.testing.assert_allclose(vec(c.M), mean, atol=1e-8, rtol=0)
        assert np.linalg.norm(kron(c.V, c.U) - cov) < 1e-8


def test_condition_dimension_errors(rng):
    p = random_params(rng, 2, 4)
    with pytest.raises(DimensionError):
        mn_condition_cols(p, BlockSplit(3, 1), np.zeros((2, 2)))
    with pytest.raises(DimensionError):
        mn_condition_cols(p, BlockSplit(2, 1), np.zeros((2, 2)))
    with pytest.raises(DimensionError):
        mn_condition_rows(p, BlockSplit(1, 1), np.zeros((1, 3)))


def test_marginal_full_and_scalar(rng):
    p = random_params(rng, 2, 2)
    full = mn_marginal(p)
    np.testing.assert_array_equal(full.M, p.M)
    np.testing.assert_array_equal(full.U, p.U)
    np.testing.assert_array_equal(full.V, p.V)
    s = mn_marginal(p, rows=[1], cols=[1])
    assert s.M[0, 0] == p.M[1, 1]
    assert s.U[0, 0] * s.V[0, 0] == pytest.approx(p.U[1, 1] * p.V[1, 1])
    with pytest.raises(DimensionError):
        mn_marginal(p, rows=[])


def test_marginal_logpdf_matches_dense(rng):
    D, tau = 4, 5
    for _ in range(20):
        p = random_params(rng, D, tau)
        rows = np.sort(rng.choice(D, size=rng.integers(1, D + 1), replace=False))
        cols = np.sort(rng.choice(tau, size=rng.integers(1, tau + 1), replace=False))
        m = mn_marginal(p, rows, cols)
        x = rng.standard_normal((rows.size, cols.size))
        idx = [i + D * j for j in cols for i in rows]
        dense = multivariate_normal.logpdf(vec(x), vec(p.M)[idx], kron(p.V, p.U)[np.ix_(idx, idx)])
        assert mn_logpdf(x, m) == pytest.approx(dense, abs=1e-8)


def test_condition_then_marginalize_rows_matches_dense(rng):
    """Past-column conditioning followed by keeping only response rows."""
    D, tau, T, Dx = 4, 6, 4, 3
    for _ in range(10):
        p = random_params(rng, D, tau)
        obs = rng.standard_normal((D, T))
        c = mn_marginal(mn_condition_cols(p, BlockSplit(T, tau - T), obs), rows=[3])
        obs_idx = [i + D * j for j in range(T) for i in range(D)]
        keep = [i + D * j for j in range(T, tau) for i in range(Dx, D)]
        mean, cov = dense_condition(vec(p.M), kron(p.V, p.U), obs_idx, vec(obs), keep)
        np.testing.assert_allclose(vec(c.M), mean, atol=1e-8, rtol=0)
        assert np.linalg.norm(kron(c.V, c.U) - cov) < 1e-8


def test_normalize_scale_examples(rng):
    U = random_spd(rng, 3)
    p = MatrixNormalParams(np.zeros((3, 4)), U, 2 * np.eye(4))
    n = normalize_scale(p)
    np.testing.assert_allclose(n.V, np.eye(4))
    np.testing.assert_allclose(n.U, 2 * U)
    again = normalize_scale(n)
    np.testing.assert_array_equal(again.U, n.U)
    np.testing.assert_array_equal(again.V, n.V)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), D=st.integers(1, 4), tau=st.integers(1, 6))
def test_normalize_scale_properties(seed, D, tau):
    rng = np.random.default_rng(seed)
    p = random_params(rng, D, tau).scaled(rng.uniform(0.1, 10))
    n = normalize_scale(p)
    assert np.trace(n.V) == pytest.approx(tau, abs=1e-9)
    n2 = normalize_scale(n)
    np.testing.assert_allclose(n2.U, n.U, rtol=1e-12)
    x = rng.standard_normal((D, tau))
    assert mn_logpdf(x, n) == pytest.approx(mn_logpdf(x, p), abs=1e-10)


def test_logpdf_memory_contract(rng):
    """Peak allocation stays far below one (D tau) x (D tau) matrix."""
    import tracemalloc

    D, tau = 30, 40
    p = random_params(rng, D, tau)
    x = rng.standard_normal((D, tau))
    mn_logpdf(x, p)
    tracemalloc.start()
    mn_logpdf(x, p)
    _, peak = tracemalloc.get_traced_memory()
    tracemalloc.stop()
    dense_bytes = (D * tau) ** 2 * 8
    assert peak < dense_bytes / 20
