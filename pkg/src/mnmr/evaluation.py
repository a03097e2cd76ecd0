"""Metrics, the (T, dT, K) experiment grid and interpretability exports."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import svg
from .linalg import kron
from .mixture import FitConfig, FitError, MnmmModel, PriorConfig, fit_em
from .regression import predict_batch, predictive_logpdf, responsibilities_over_time
from .windows import WindowSpec, standardize_apply, standardize_fit, standardize_invert

__all__ = [
    "MetricReport",
    "GridResult",
    "metric_rmse_mae",
    "metric_train_nll",
    "fit_model",
    "point_forecasts",
    "evaluate_model",
    "run_grid",
    "correlation",
    "dominant_components",
    "export_interpretability",
    "GRID_COLUMNS",
]

log = logging.getLogger(__name__)

GRID_COLUMNS = ["T", "dT", "K", "seed", "rmse", "mae", "train_nll", "n_train", "n_test", "fit_seconds", "status"]
NLL_CONVENTION = "train_nll: mean negative log predictive density of future responses per window, standardized units"


@dataclass
class MetricReport:
    T: int
    dT: int
    K: int
    seed: int
    rmse: float = float("nan")
    mae: float = float("nan")
    train_nll: float = float("nan")
    n_train: int = 0
    n_test: int = 0
    fit_seconds: float = float("nan")
    status: str = "ok"

    @property
    def key(self):
        return (self.T, self.dT, self.K)


@dataclass
class GridResult:
    reports: list = field(default_factory=list)
    n_fitted: int = 0

    def get(self, T, dT, K) -> MetricReport:
        for r in self.reports:
            if r.key == (T, dT, K):
                return r
        raise KeyError((T, dT, K))

    def write_csv(self, path, include_timing: bool = False) -> None:
        """Write ``grid_results.csv``; ``fit_seconds`` is left empty unless
        ``include_timing`` so repeated runs are byte-identical."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(GRID_COLUMNS)
            for r in self.reports:
                w.writerow([r.T, r.dT, r.K, r.seed, _fmt(r.rmse), _fmt(r.mae), _fmt(r.train_nll),
                            r.n_train, r.n_test, _fmt(r.fit_seconds) if include_timing else "", r.status])

    def table(self, metric: str = "rmse") -> str:
        """Text table with one row per (dT, T) and one column per K."""
        Ks = sorted({r.K for r in self.reports})
        lines = [f"{metric.upper()} / K", "dT  T  " + " ".join(f"{k:>8d}" for k in Ks)]
        for dT in sorted({r.dT for r in self.reports}):
            for T in sorted({r.T for r in self.reports}):
                cells = []
                for K in Ks:
                    try:
                        cells.append(f"{getattr(self.get(T, dT, K), metric):8.3f}")
                    except KeyError:
                        cells.append(f"{'-':>8}")
                lines.append(f"{dT:<3d} {T:<2d} " + " ".join(cells))
        return "\n".join(lines)


def _fmt(x: float) -> str:
    return "" if x is None or not np.isfinite(x) else repr(float(x))


def metric_rmse_mae(predictions, truths):
    """Pooled RMSE and MAE over all windows and steps."""
    p = np.asarray(predictions, dtype=float)
    t = np.asarray(truths, dtype=float)
    if p.size == 0:
        raise ValueError("no predictions to score")
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {t.shape}")
    e = p - t
    return float(np.sqrt(np.mean(e**2))), float(np.mean(np.abs(e)))


def _split_windows(windows, spec: WindowSpec):
    past = windows[:, :, : spec.T]
    future_y = windows[:, spec.D_x :, spec.T :]
    return past, np.swapaxes(future_y, -1, -2).reshape(len(windows), -1)


def metric_train_nll(model: MnmmModel, windows, spec: WindowSpec | None = None) -> float:
    """Mean over windows of -log p(vec Y' | past), in standardized units.

    ``windows`` are in physical units and standardized with the model's stats.
    """
    spec = spec or model.window_spec
    z = standardize_apply(np.asarray(windows, dtype=float), model.standardization)
    past, y = _split_windows(z, spec)
    w, mu, cov = predict_batch(model, past, units="standardized", spec=spec)
    return float(-np.mean(predictive_logpdf(w, mu, cov, y)))


def fit_model(train_windows, spec: WindowSpec, K: int, prior: PriorConfig | None = None,
              config: FitConfig | None = None, names=None):
    """Standardize physical-unit training windows with their own stats and fit."""
    stats = standardize_fit(train_windows, names=names)
    z = standardize_apply(train_windows, stats)
    return fit_em(z, K, prior, config, spec=spec, standardization=stats)


def point_forecasts(model: MnmmModel, windows, spec: WindowSpec | None = None):
    """Mixture-mean forecasts, predictive std and truth for each window (physical units)."""
    spec = spec or model.window_spec
    past, truth = _split_windows(np.asarray(windows, dtype=float), spec)
    w, mu, cov = predict_batch(model, past, units="physical", spec=spec)
    mean = np.einsum("nk,nkm->nm", w, mu)
    second = np.einsum("nk,nkm->nm", w, mu**2 + np.diagonal(cov, axis1=1, axis2=2)[None])
    std = np.sqrt(np.maximum(second - mean**2, 0.0))
    return mean, std, truth, w


def evaluate_model(model: MnmmModel, train_windows, test_windows, spec: WindowSpec | None = None) -> dict:
    spec = spec or model.window_spec
    mean, _, truth, _ = point_forecasts(model, test_windows, spec)
    rmse, mae = metric_rmse_mae(mean, truth)
    return {"rmse": rmse, "mae": mae, "train_nll": metric_train_nll(model, train_windows, spec),
            "n_train": int(len(train_windows)), "n_test": int(len(test_windows))}


def _checksum(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a, dtype=float)
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


def _cache_key(T, dT, K, prior: PriorConfig, config: FitConfig, data_sum: str) -> str:
    blob = json.dumps({"T": T, "dT": dT, "K": K, "prior": prior.to_dict(), "fit": asdict(config),
                       "data": data_sum}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:24]


def _run_cell(dataset, T, dT, K, prior, config, stride, names):
    report = MetricReport(T=T, dT=dT, K=K, seed=config.seed)
    train, test = dataset.windows(T, dT, stride)
    report.n_train, report.n_test = int(len(train)), int(len(test))
    base = getattr(dataset, "spec", None)
    spec = WindowSpec(T=T, dT=dT, D_x=base.D_x, D_y=base.D_y) if base else WindowSpec(T=T, dT=dT)
    if len(train) < K or len(test) == 0:
        report.status = "error: not enough windows"
        return report
    t0 = time.perf_counter()
    try:
        model, _ = fit_model(train, spec, K, prior, config, names=names)
    except (FitError, ValueError, np.linalg.LinAlgError) as exc:
        report.status = f"error: {type(exc).__name__}"
        log.warning("grid cell T=%d dT=%d K=%d failed: %s", T, dT, K, exc)
        return report
    report.fit_seconds = time.perf_counter() - t0
    metrics = evaluate_model(model, train, test, spec)
    report.rmse, report.mae, report.train_nll = metrics["rmse"], metrics["mae"], metrics["train_nll"]
    return report


def run_grid(dataset, T_set, dT_set, K_set, prior: PriorConfig | None = None,
             config: FitConfig | None = None, cache_dir=None, stride: int = 1, names=None) -> GridResult:
    """Fit and evaluate every (T, dT, K) combination.

    ``dataset`` is anything with a ``windows(T, dT, stride)`` method returning
    physical-unit ``(train, test)`` stacks. With ``cache_dir`` each finished
    cell is stored as JSON keyed on the configuration and a checksum of its
    windows, and reused on later runs. A failed fit is recorded in the row's
    status and the grid continues.
    """
    prior = prior or PriorConfig()
    config = config or FitConfig()
    cache = Path(cache_dir) if cache_dir is not None else None
    if cache is not None:
        cache.mkdir(parents=True, exist_ok=True)
    result = GridResult()
    for dT in dT_set:
        for T in T_set:
            for K in K_set:
                path = None
                if cache is not None:
                    train, test = dataset.windows(T, dT, stride)
                    path = cache / f"{_cache_key(T, dT, K, prior, config, _checksum(train, test))}.json"
                    if path.exists():
                        cached = json.loads(path.read_text(encoding="utf-8"))
                        cached["fit_seconds"] = float("nan")
                        result.reports.append(MetricReport(**cached))
                        continue
                report = _run_cell(dataset, T, dT, K, prior, config, stride, names)
                result.n_fitted += 1
                log.info("T=%d dT=%d K=%d rmse=%.4f mae=%.4f nll=%.4f [%s]", T, dT, K,
                         report.rmse, report.mae, report.train_nll, report.status)
                result.reports.append(report)
                if path is not None and report.status == "ok":
                    # timing is left out so cache files are reproducible; a cache hit reports no fit time
                    path.write_text(json.dumps(dict(asdict(report), fit_seconds=None)), encoding="utf-8")
    return result


# -- interpretability ---------------------------------------------------------

def correlation(cov) -> np.ndarray:
    """Scale a covariance by the inverse square root of its diagonal."""
    cov = np.asarray(cov, dtype=float)
    d = 1.0 / np.sqrt(np.diag(cov))
    c = cov * np.outer(d, d)
    np.fill_diagonal(c, 1.0)
    return np.clip(c, -1.0, 1.0)


def dominant_components(model: MnmmModel, pairs, top_n: int = 5):
    """Top components by average predictive weight over all sliding windows of ``pairs``.

    Returns ``(indices, mean_weights)`` with ``mean_weights`` for all K.
    """
    betas = [responsibilities_over_time(model, p)[1] for p in pairs]
    avg = np.concatenate(betas).mean(axis=0)
    order = np.argsort(-avg, kind="stable")[: min(top_n, model.K)]
    return order, avg


def _write_matrix_csv(path, mat, row_labels=None, col_labels=None):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        cols = col_labels if col_labels is not None else [str(j) for j in range(mat.shape[1])]
        w.writerow([""] + list(cols))
        for i, row in enumerate(mat):
            label = row_labels[i] if row_labels is not None else str(i)
            w.writerow([label] + [repr(float(x)) for x in row])


def export_interpretability(model: MnmmModel, dataset, pair_ids, out_dir, top_n: int = 5) -> dict:
    """Write component-weight traces, mean matrices and correlation matrices.

    Files: ``beta_<pair>.csv``, ``mean_k<k>.csv``, ``corr_full_k<k>.csv``,
    ``corr_feat_k<k>.csv``, ``corr_time_k<k>.csv``, each matrix also as
    ``.svg``, plus ``summary.json``. Component indices are 0-based.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pairs = []
    for pid in pair_ids:
        try:
            pairs.append(dataset.pair(pid))
        except KeyError:
            raise KeyError(f"unknown pair id {pid!r}") from None
    top, avg = dominant_components(model, pairs, top_n)
    spec = model.window_spec
    names = list(model.standardization.names)

    for p in pairs:
        times, betas = responsibilities_over_time(model, p)
        idx = np.searchsorted(p.time, times)
        with open(out / f"beta_{p.pair_id}.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time_s", "v_lv", "v_fv", "gap_m"] + [f"beta_k{k}" for k in top] + ["beta_other"])
            for j, i in enumerate(idx):
                shares = betas[j, top]
                w.writerow([repr(float(times[j])), repr(float(p.v_lv[i])), repr(float(p.v_fv[i])),
                            repr(float(p.gap[i]))] + [repr(float(s)) for s in shares]
                           + [repr(float(max(0.0, 1.0 - shares.sum())))])

    time_labels = [f"t{j - spec.T + 1:+d}" for j in range(spec.tau)]
    full_labels = [f"{n}@{t}" for t in time_labels for n in names]
    for k in top:
        comp = model.components[k]
        mean = standardize_invert(comp.M, model.standardization)
        corr_u, corr_v = correlation(comp.U), correlation(comp.V)
        corr_full = correlation(kron(comp.V, comp.U))
        mats = {
            f"mean_k{k}": (mean, names, time_labels, "rows"),
            f"corr_full_k{k}": (corr_full, full_labels, full_labels, "corr"),
            f"corr_feat_k{k}": (corr_u, names, names, "corr"),
            f"corr_time_k{k}": (corr_v, time_labels, time_labels, "corr"),
        }
        for stem, (mat, rl, cl, scale) in mats.items():
            _write_matrix_csv(out / f"{stem}.csv", mat, rl, cl)
            (out / f"{stem}.svg").write_text(svg.heatmap(mat, rl, cl, title=stem, scale=scale), encoding="utf-8")

    summary = {
        "top_components": [int(k) for k in top],
        "mean_beta": {str(int(k)): float(avg[k]) for k in top},
        "mean_beta_top_total": float(avg[top].sum()),
        "pairs": [p.pair_id for p in pairs],
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return summary
