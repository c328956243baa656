"""
Memory kernels and the auxiliary noise
======================================

A kernel ``K(t) = sum lam^2 exp(-alpha t)`` is realised by stationary
Ornstein-Uhlenbeck modes ``z``.  The force ``F = sum lam z`` then has
covariance ``K``.  We check that on a lag grid.
"""

import numpy as np

from singular_gle import KernelSpec
from singular_gle.kernels import fluctuation_dissipation_check, kernel_eval

spec = KernelSpec.uniform(1, [(1.0, 1.0), (2.0, 3.0)])
lags = np.arange(0.0, 3.01, 0.5)
print("K(t) on the grid:", np.round(kernel_eval(spec, 0, lags), 4))

rep = fluctuation_dissipation_check(spec, 0, lags=lags, sample_count=50_000, rng=np.random.default_rng(1))
print(f"{'lag':>5} {'empirical':>10} {'exact':>8} {'rel err':>8}")
for t, e, k, r in zip(rep["lag"], rep["empirical"], rep["exact"], rep["rel_err"]):
    print(f"{t:5.2f} {e:10.4f} {k:8.4f} {r:8.2%}")
