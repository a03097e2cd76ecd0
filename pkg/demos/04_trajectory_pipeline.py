"""HighD-style pipeline on a toy recording: ingest, preprocess, fit, inspect.

Real HighD files have the same columns; point ingest_highd at XX_tracks.csv
and XX_tracksMeta.csv instead of the files written here.
"""
import tempfile
from pathlib import Path

import numpy as np
import pandas as pd

from mnmr import FitConfig
from mnmr.data import downsample, filter_pairs, ingest_highd, split
from mnmr.evaluation import evaluate_model, export_interpretability, fit_model
from mnmr.windows import WindowSpec

FPS = 25


def toy_recording(directory, prefix, seed, n=1500):
    """One leader/follower couple with oscillating speeds, 60 s at 25 Hz."""
    rng = np.random.default_rng(seed)
    t = np.arange(n) / FPS
    v_l = 22 + 2 * np.sin(0.3 * t)
    v_f = 22 + 2 * np.sin(0.3 * t - 0.6) + rng.normal(0, 0.05, n)
    a_f = 0.6 * np.cos(0.3 * t - 0.6) + rng.normal(0, 0.1, n)
    x_f = 50 + np.cumsum(v_f) / FPS
    x_l = 50 + 4.5 + 25 + np.cumsum(v_l) / FPS
    frames = np.arange(1, n + 1)
    tracks = pd.concat([
        pd.DataFrame({"id": 1, "frame": frames, "x": x_l, "width": 4.5, "xVelocity": v_l,
                      "xAcceleration": 0.0, "precedingId": 0}),
        pd.DataFrame({"id": 2, "frame": frames, "x": x_f, "width": 4.5, "xVelocity": v_f,
                      "xAcceleration": a_f, "precedingId": 1}),
    ])
    meta = pd.DataFrame({"id": [1, 2], "drivingDirection": [2, 2]})
    tracks.to_csv(directory / f"{prefix}_tracks.csv", index=False)
    meta.to_csv(directory / f"{prefix}_tracksMeta.csv", index=False)
    return directory / f"{prefix}_tracks.csv", directory / f"{prefix}_tracksMeta.csv"


work = Path(tempfile.mkdtemp())
pairs = []
for i in range(4):
    got, report = ingest_highd(*toy_recording(work, f"{i + 1:02d}", seed=i))
    pairs += got
print(f"{len(pairs)} leader/follower pairs at {pairs[0].rate_hz:.0f} Hz, gap {pairs[0].gap[0]:.1f} m")

# every 5th sample (5 Hz), keep pairs longer than 50 s, split by pair
pairs = filter_pairs([downsample(p, 5) for p in pairs], 50.0)
ds = split(pairs, 0.75, seed=0)
print(ds.provenance)

spec = WindowSpec(T=5, dT=3)
train, test = ds.windows(spec.T, spec.dT)
model, _ = fit_model(train, spec, K=3, config=FitConfig(seed=0))
print({k: round(v, 4) if isinstance(v, float) else v for k, v in evaluate_model(model, train, test, spec).items()})

# component weights over time, mean matrices and correlation heatmaps
out = work / "inspect"
summary = export_interpretability(model, ds, [p.pair_id for p in ds.test], out, top_n=2)
print("dominant components", summary["top_components"], "->", sorted(f.name for f in out.iterdir())[:6], "...")
