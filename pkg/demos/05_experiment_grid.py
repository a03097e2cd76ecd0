"""A small (T, dT, K) grid on synthetic data, in the shape of a results table.

The truth has temporal correlation that fades with lag, so errors should
grow with the forecast horizon and shrink with a longer past.
"""
import tempfile

from mnmr import FitConfig, PriorConfig, WindowSpec
from mnmr.data import synth_generate
from mnmr.evaluation import run_grid

ws = synth_generate(WindowSpec(T=5, dT=5), K=3, prior=PriorConfig(alpha=5.0, eta=2.0), N_train=1500, N_test=300,
                    seed=0, temporal_decay=0.9, unit_temporal_scale=True).windows

cache = tempfile.mkdtemp()
grid = run_grid(ws, T_set=[1, 5], dT_set=[1, 3, 5], K_set=[1, 3], config=FitConfig(restarts=2), cache_dir=cache)
print(grid.table("rmse"))
print()
print(grid.table("train_nll"))

# a second run reads every cell from the cache
again = run_grid(ws, T_set=[1, 5], dT_set=[1, 3, 5], K_set=[1, 3], config=FitConfig(restarts=2), cache_dir=cache)
print(f"\nrefits on rerun: {again.n_fitted}")
