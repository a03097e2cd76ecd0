"""From a fitted mixture to a forecast: condition on the past, drop future regressors.

The predictive distribution of the future accelerations is again a Gaussian
mixture. The dense oracle builds each component's full Gaussian and should
agree with the factored pipeline to rounding error.
"""
import numpy as np

from mnmr import (
    PriorConfig,
    WindowSpec,
    oracle_condition_vectorized,
    point_predict,
    predictive_distribution,
    sample_prediction,
    sample_prior,
    sample_dataset,
)

rng = np.random.default_rng(3)
spec = WindowSpec(T=5, dT=3)
model = sample_prior(spec, K=4, prior=PriorConfig(eta=2.0), rng=rng, temporal_decay=0.9,
                     unit_temporal_scale=True)
window, label = sample_dataset(model, 1, rng)
past, future = window[0, :, :5], window[0, 3, 5:]

pm = predictive_distribution(model, past)
print("component weights beta:", pm.weights.round(3), " generating component:", label[0])

oracle = oracle_condition_vectorized(model, past)
print("max |means - oracle|:", np.abs(pm.means - oracle.means).max())

mean, var = point_predict(pm)
print("forecast ", mean.round(3))
print("+/- 1 std", np.sqrt(var).round(3))
print("truth    ", future.round(3))

draws = sample_prediction(pm, 20_000, rng)
print("Monte Carlo mean", draws.mean(axis=0).round(3))
