"""
Two repelling particles and their Gibbs law
===========================================

Two particles on a line in a quadratic well repel through ``G(r) = 1/r``.
After a burn-in the velocities should be ``N(0, 1/m)``, the auxiliary modes
``N(0, 1)``, and ``E[x1^2]`` should match the two-dimensional quadrature of
``exp(-U(x1) - U(x2) - G(x1 - x2))``.
"""

import numpy as np

from singular_gle import ConfiningPotential, KernelSpec, Model, SingularPotential
from singular_gle.experiments import gibbs_marginal_test, gibbs_quadrature

model = Model(ConfiningPotential.quadratic(1.0, 1.0), SingularPotential("coulomb", dim=1),
              KernelSpec.uniform(2, [(1.0, 1.0)]), d=1)

exact, coarse = gibbs_quadrature(model, "x1sq")
print(f"quadrature E[x1^2] = {exact:.6f} (coarse grid {coarse:.6f})")

# a short run; the acceptance suite uses 2000 paths and a window of 40
rep = gibbs_marginal_test(model, m=1.0, gamma=1.0, n_paths=400, burn_in=10.0, window=20.0, seed=3)
for name, c in rep["checks"].items():
    print(f"{name:14s} mean {c['mean']:.4f}  exact {c['exact']:.4f}  err {c['rel_err']:.2%}")
print("closest approach:", f"{rep['min_pair_dist']:.3e}", " rejected steps:", rep["rejections"])
