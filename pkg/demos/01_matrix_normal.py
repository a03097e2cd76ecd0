"""Matrix normal basics: the factored density, conditioning and marginals.

A D x tau matrix X with rows as features and columns as time steps is
matrix normal when vec(X) (columns stacked) is Gaussian with covariance
kron(V, U). Nothing below ever builds that (D*tau)^2 matrix except to
check the answers.
"""
import numpy as np
from scipy.stats import multivariate_normal

from mnmr import BlockSplit, MatrixNormalParams, mn_condition_cols, mn_logpdf, mn_marginal, mn_sample

rng = np.random.default_rng(0)
D, tau = 3, 6


def spd(n):
    a = rng.standard_normal((n, n))
    return a @ a.T + n * np.eye(n)


p = MatrixNormalParams(M=rng.standard_normal((D, tau)), U=spd(D), V=spd(tau))
X = mn_sample(p, rng)

# density through Cholesky factors of U and V only
lp = mn_logpdf(X, p)
dense = multivariate_normal.logpdf(X.reshape(-1, order="F"), p.M.reshape(-1, order="F"), np.kron(p.V, p.U))
print(f"log-density  factored {lp:.10f}  dense {dense:.10f}")

# (xi U, V / xi) is the same distribution; only the product of scales is identified
print("scale-invariant:", np.isclose(mn_logpdf(X, p.scaled(7.0)), lp))

# observe the first 4 columns, predict the last 2
split = BlockSplit(4, 2)
cond = mn_condition_cols(p, split, X[:, :4])
print("conditional mean of the future block:\n", np.round(cond.M, 3))
print("column covariance shrinks:", np.round(np.diag(cond.V), 3), "<", np.round(np.diag(p.V)[4:], 3))

# marginalizing keeps the selected rows/columns and their covariance blocks
sub = mn_marginal(p, rows=[2], cols=[4, 5])
print("marginal of feature 2 over the last two steps:", sub.M.round(3), sub.U.round(3))
