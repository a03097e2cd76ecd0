"""Matrix normal mixture models and mixture regression for car-following data."""

from .linalg import BlockSplit, DimensionError, NotPositiveDefiniteError, kron, spd_factor, spd_solve, unvec, vec
from .matnorm import (
    MatrixNormalParams,
    mn_condition_cols,
    mn_condition_rows,
    mn_logpdf,
    mn_marginal,
    mn_sample,
    normalize_scale,
)
from .mixture import (
    FitConfig,
    FitError,
    MnmmModel,
    PriorConfig,
    e_step,
    fit_em,
    load_model,
    m_step,
    sample_dataset,
    sample_lkj,
    sample_prior,
    save_model,
)
from .regression import (
    PredictiveMixture,
    oracle_condition_vectorized,
    point_predict,
    predict_batch,
    predictive_distribution,
    responsibilities_over_time,
    sample_prediction,
)
from .windows import StandardizationStats, WindowSpec, standardize_apply, standardize_fit, standardize_invert

__version__ = "0.1.0"
