import json

import numpy as np
import pytest

from mnmr.data import WindowSet
from mnmr.evaluation import (
    GRID_COLUMNS,
    correlation,
    evaluate_model,
    export_interpretability,
    fit_model,
    metric_rmse_mae,
    metric_train_nll,
    point_forecasts,
    run_grid,
)
from mnmr.linalg import kron
from mnmr.matnorm import MatrixNormalParams
from mnmr.mixture import FitConfig, MnmmModel, PriorConfig
from mnmr.regression import oracle_condition_vectorized
from mnmr.windows import WindowSpec, standardize_apply

from conftest import random_model, random_spd
from test_data import _pair


def test_rmse_mae_examples():
    assert metric_rmse_mae([[1.0, 2.0]], [[1.0, 2.0]]) == (0.0, 0.0)
    assert metric_rmse_mae([[1.0, 1.0]], [[0.0, 0.0]]) == (1.0, 1.0)
    rmse, mae = metric_rmse_mae([[0.0, 2.0]], [[0.0, 0.0]])
    assert rmse == pytest.approx(np.sqrt(2)) and mae == 1.0
    with pytest.raises(ValueError):
        metric_rmse_mae([], [])
    with pytest.raises(ValueError):
        metric_rmse_mae([[1.0]], [[1.0, 2.0]])


def test_rmse_at_least_mae(rng):
    for _ in range(20):
        e = rng.standard_normal((rng.integers(1, 30), rng.integers(1, 5)))
        rmse, mae = metric_rmse_mae(e, np.zeros_like(e))
        assert rmse >= mae >= 0


def _unit_model(scale=1.0):
    spec = WindowSpec(T=1, dT=1, D_x=1, D_y=1)
    comp = MatrixNormalParams(np.zeros((2, 2)), scale * np.eye(2), np.eye(2))
    return MnmmModel(np.ones(1), [comp], window_spec=spec)


def test_nll_standard_normal_at_mode():
    assert metric_train_nll(_unit_model(), np.zeros((3, 2, 2))) == pytest.approx(0.5 * np.log(2 * np.pi))


def test_nll_decreases_as_covariance_shrinks():
    values = [metric_train_nll(_unit_model(s), np.zeros((1, 2, 2))) for s in (2.0, 1.0, 0.5, 0.1)]
    assert np.all(np.diff(values) < 0)


def test_nll_matches_dense_oracle(rng):
    from scipy.stats import multivariate_normal
    model = random_model(rng, 3, 3, 1, 3, 2, standardized=True)
    spec = model.window_spec
    windows = model.standardization.mean[:, None] + rng.standard_normal((6, 4, 5)) * model.standardization.std[:, None]
    z = standardize_apply(windows, model.standardization)
    total = 0.0
    for w in z:
        pm = oracle_condition_vectorized(model, w[:, : spec.T], units="standardized")
        y = w[3:, spec.T :].reshape(-1, order="F")
        total += np.log(sum(b * multivariate_normal.pdf(y, m, c) for b, m, c in zip(pm.weights, pm.means, pm.covs)))
    assert metric_train_nll(model, windows) == pytest.approx(-total / len(z), abs=1e-8)


def test_correlation_identities(rng):
    np.testing.assert_allclose(correlation(np.diag([4.0, 9.0, 0.5])), np.eye(3))
    U, V = random_spd(rng, 3), random_spd(rng, 4)
    np.testing.assert_allclose(correlation(kron(V, U)), kron(correlation(V), correlation(U)), atol=1e-12)
    c = correlation(random_spd(rng, 5))
    assert np.all(np.abs(c) <= 1.0)


def _synthetic_windowset(seed=0, N=300):
    from mnmr.data import synth_generate
    return synth_generate(WindowSpec(T=3, dT=2), 2, PriorConfig(eta=2.0), N, 60, seed=seed).windows


def test_fit_and_evaluate_physical_units():
    ws = _synthetic_windowset()
    train, test = ws.windows(3, 2)
    train = train * 3.0 + 10.0
    test = test * 3.0 + 10.0
    spec = WindowSpec(T=3, dT=2)
    model, _ = fit_model(train, spec, 2, config=FitConfig(restarts=1))
    assert np.all(np.abs(model.standardization.mean - 10) < 2.0)
    mean, std, truth, w = point_forecasts(model, test, spec)
    assert mean.shape == truth.shape == std.shape == (60, 2)
    np.testing.assert_allclose(w.sum(axis=1), 1.0)
    m = evaluate_model(model, train, test, spec)
    assert m["rmse"] >= m["mae"] > 0 and m["n_train"] == 300 and m["n_test"] == 60
    assert np.isfinite(m["train_nll"])


def test_run_grid_singleton_and_cache(tmp_path):
    ws = _synthetic_windowset()
    cfg = FitConfig(restarts=1, max_iters=30)
    res = run_grid(ws, [1], [1], [2], config=cfg, cache_dir=tmp_path / "cache")
    assert len(res.reports) == 1 and res.n_fitted == 1 and res.reports[0].status == "ok"
    again = run_grid(ws, [1], [1], [2], config=cfg, cache_dir=tmp_path / "cache")
    assert again.n_fitted == 0
    assert again.reports[0].rmse == res.reports[0].rmse


def test_run_grid_csv_rows_and_failures(tmp_path):
    ws = _synthetic_windowset(N=40)
    res = run_grid(ws, [1, 3], [1, 2], [1, 50], config=FitConfig(restarts=1, max_iters=20))
    res.write_csv(tmp_path / "g.csv")
    lines = (tmp_path / "g.csv").read_text().splitlines()
    assert lines[0] == ",".join(GRID_COLUMNS)
    assert len(lines) == 1 + 2 * 2 * 2
    statuses = [l.split(",")[-1] for l in lines[1:]]
    assert statuses.count("ok") == 4 and all(s.startswith("error") for s in statuses if s != "ok")
    for r in res.reports:
        if r.status == "ok":
            assert r.rmse >= r.mae
    table = res.table("rmse")
    assert "RMSE" in table and len(table.splitlines()) == 2 + 4


def test_export_interpretability(tmp_path, rng):
    from mnmr.data import Dataset
    from mnmr.evaluation import fit_model
    pairs = [_pair(f"p{i}", 40, rng=np.random.default_rng(i)) for i in range(4)]
    ds = Dataset(pairs[:3], pairs[3:])
    spec = WindowSpec(T=3, dT=2)
    train, _ = ds.windows(3, 2)
    model, _ = fit_model(train, spec, 3, config=FitConfig(restarts=1, max_iters=20))
    summary = export_interpretability(model, ds, ["p0", "p3"], tmp_path, top_n=2)
    assert len(summary["top_components"]) == 2
    for k in summary["top_components"]:
        for stem in ("mean", "corr_full", "corr_feat", "corr_time"):
            assert (tmp_path / f"{stem}_k{k}.csv").exists() and (tmp_path / f"{stem}_k{k}.svg").exists()
        c = np.loadtxt(tmp_path / f"corr_full_k{k}.csv", delimiter=",", skiprows=1, usecols=range(1, 21))
        np.testing.assert_allclose(np.diag(c), 1.0, atol=1e-10)
        assert np.all(np.abs(c) <= 1.0)
    beta = (tmp_path / "beta_p0.csv").read_text().splitlines()
    assert beta[0].startswith("time_s,v_lv,v_fv,gap_m,beta_k") and len(beta) == 1 + 40 - 5 + 1
    assert json.loads((tmp_path / "summary.json").read_text())["pairs"] == ["p0", "p3"]
    with pytest.raises(KeyError):
        export_interpretability(model, ds, ["nope"], tmp_path)
