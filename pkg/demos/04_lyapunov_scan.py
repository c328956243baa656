"""
Sampled drift certification
===========================

``V_N^1`` (friction present) and ``V_N^2`` (no friction, quadratic
confinement) should satisfy ``L V <= -c V + D`` over phase space, including
near collisions.  The bare Hamiltonian should not: far out with zero
velocity its drift is a positive constant.
"""

import numpy as np

from singular_gle import ConfiningPotential, KernelSpec, Model, SingularPotential
from singular_gle.lyapunov import drift_scan, drift_search, far_field_samples, stratified_samples

model = Model(ConfiningPotential.quadratic(1.0, 1.0), SingularPotential("coulomb", dim=3),
              KernelSpec.uniform(3, [(1.0, 1.0)]), d=3)
samples = stratified_samples(model, 1.0, 5000, np.random.default_rng(0))

for cand, gamma in (("VN1", 1.0), ("VN2", 0.0)):
    best, grid = drift_search(cand, model, 1.0, gamma, samples)
    print(f"{cand}: best eps={best['params']['epsilon']:g} R={best['params']['R']:g} "
          f"c={best['c_fit']:.3g} D={best['D_fit']:.3g} violations={best['n_violations']}")
    for r in grid:
        print(f"    eps={r['params']['epsilon']:<6g} R={r['params']['R']:<4g} violations={r['n_violations']}")

ctrl = drift_scan("H", model, 1.0, 1.0, samples=far_field_samples(model, 1000, np.random.default_rng(1)))
print(f"H control: c={ctrl['c_fit']} violations={ctrl['n_violations']}/{ctrl['n_samples']}")
