"""Shared fixtures and Monte Carlo helpers for the test suite."""

import numpy as np

from singular_gle import (
    ConfiningPotential,
    KernelSpec,
    Model,
    PhaseState,
    SimParams,
    SingularPotential,
    duhamel_reconstruct_z,
    simulate_gle,
)
from singular_gle.lyapunov import generator_apply, hamiltonian_derivatives, hamiltonian_N, xv_derivatives


def dynkin_model():
    k = KernelSpec(((((1.0, 1.0),),) + (((1.5, 2.0),),)))
    return Model(ConfiningPotential.quadratic(1.0, 1.0), SingularPotential("riesz", beta1=2.0), k, d=1)


def dynkin_state():
    return PhaseState(np.array([[-1.0], [0.8]]), np.array([[0.5], [-0.3]]), np.array([[0.2], [-0.4]]))


def _phi(name, state, m, model):
    if name == "H":
        return hamiltonian_N(state, m, model)
    return np.sum(state.x * state.v, axis=(-2, -1))


def dynkin_check(name, n_paths=100_000, h=0.01, n_steps=2, m=1.0, gamma=1.0, seed=11):
    """Compare ``(E phi(X_h) - phi(X_0)) / h`` with the generator at ``X_0``.

    Returns ``(estimate, exact, mc_se, bias_bound)``: the bias bound is
    ``h/2`` times a crude estimate of ``|L^2 phi|`` from two horizons.
    """
    model, s0 = dynkin_model(), dynkin_state()
    der = hamiltonian_derivatives(s0, m, model) if name == "H" else xv_derivatives(s0, model)
    exact = float(generator_apply(der, s0, m, gamma, model))
    phi0 = float(_phi(name, s0, m, model))

    # one run to 2h, read off at h and 2h
    p = SimParams(m=m, gamma=gamma, dt=h / n_steps, T=2 * h, seed=seed)
    tr = simulate_gle(s0, p, model, n_paths=n_paths, output_dt=h)
    res = []
    for k, T in ((1, h), (2, 2 * h)):
        end = PhaseState(tr.x[:, k], tr.v[:, k], tr.z[:, k])
        inc = (_phi(name, end, m, model) - phi0) / T
        res.append((inc.mean(), inc.std(ddof=1) / np.sqrt(n_paths)))
    (est, se), (est2, se2) = res
    # d/dt E phi is affine in t to leading order, so est2 - est estimates the O(h) bias
    bias = abs(est2 - est) + 3 * (se + se2)
    return est, exact, se, bias


def duhamel_error(h, n_sub, n_paths=100):
    """Mean gap between the simulated ``z`` of particle 0 at ``t = 1`` and its
    reconstruction from the position path and the logged Brownian cells."""
    model = Model(ConfiningPotential.quadratic(1.0, 1.0), SingularPotential("riesz", beta1=2.0),
                  KernelSpec.uniform(2, [(1.0, 1.0)]), d=1)
    p = SimParams(m=1.0, gamma=1.0, dt=h, T=1.0, seed=11)
    start = PhaseState([[-1.0], [1.0]], [[0.0], [0.0]], [[0.3], [-0.2]])
    tr = simulate_gle(start, p, model, n_paths=n_paths, n_sub=n_sub, log_noise=True)
    inc = np.concatenate([c for _, c in tr.noise], axis=1)
    inc = inc.reshape(n_paths, -1, n_sub, inc.shape[2], 1).sum(axis=2)
    # noise rows are (v_0, v_1, z_0, z_1): row 2 drives the first auxiliary mode
    err = [abs(duhamel_reconstruct_z(tr.t, tr.x[b, :, 0], tr.z[b, 0, 0], 1.0, 1.0, 1.0, inc[b, :, 2])[0]
               - tr.z[b, -1, 0, 0]) for b in range(n_paths)]
    return float(np.mean(err))


def duhamel_ratio():
    # the same Brownian path on cells of width 0.0025, integrated with dt and dt/2
    return duhamel_error(0.01, 4, n_paths=200) / duhamel_error(0.005, 2, n_paths=200)
