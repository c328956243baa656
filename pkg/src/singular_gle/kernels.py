"""Exponential-sum memory kernels and their stationary auxiliary noise.

A kernel ``K_i(t) = sum_l lam_{i,l}^2 exp(-alpha_{i,l} t)`` is embedded by one
Ornstein-Uhlenbeck variable per mode.  Internally the modes of all particles
are flattened into a single list; ``owner[m]`` says which particle mode ``m``
belongs to.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from .errors import NegativeTime


@dataclass(frozen=True)
class KernelSpec:
    """Per-particle lists of ``(lam, alpha)`` modes."""

    modes: tuple

    def __post_init__(self):
        modes = tuple(tuple((float(l), float(a)) for l, a in per) for per in self.modes)
        if not modes:
            raise ValueError("kernel needs at least one particle")
        for i, per in enumerate(modes):
            if len(per) == 0:
                raise ValueError(f"particle {i} has no memory modes")
            for lam, alpha in per:
                if not (lam > 0 and alpha > 0):
                    raise ValueError(f"particle {i}: modes need lam > 0 and alpha > 0")
        object.__setattr__(self, "modes", modes)

    @classmethod
    def uniform(cls, n_particles, modes):
        """Every particle gets the same list of modes."""
        return cls(tuple(tuple(modes) for _ in range(n_particles)))

    @property
    def n_particles(self) -> int:
        return len(self.modes)

    @property
    def counts(self):
        return tuple(len(per) for per in self.modes)

    @property
    def n_modes(self) -> int:
        return sum(self.counts)

    @property
    def owner(self):
        return np.repeat(np.arange(self.n_particles), self.counts)

    @property
    def lam(self):
        return np.array([l for per in self.modes for l, _ in per])

    @property
    def alpha(self):
        return np.array([a for per in self.modes for _, a in per])

    @property
    def first_mode(self):
        """Flat index of ``z_{i,1}`` for every particle."""
        return np.concatenate([[0], np.cumsum(self.counts)[:-1]]).astype(int)

    def coupling(self):
        """``(N, M)`` matrix with ``lam_m`` where particle ``n`` owns mode ``m``."""
        mat = np.zeros((self.n_particles, self.n_modes))
        mat[self.owner, np.arange(self.n_modes)] = self.lam
        return mat

    def particle_slice(self, i):
        start = int(self.first_mode[i])
        return slice(start, start + self.counts[i])

    def k0(self, i):
        return float(sum(l * l for l, _ in self.modes[i]))


def kernel_eval(spec: KernelSpec, i: int, t):
    """``K_i(t)``; vectorised over ``t``."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise NegativeTime("kernel evaluated at negative time")
    out = sum(l * l * np.exp(-a * t) for l, a in spec.modes[i])
    return out if out.ndim else float(out)


def sample_stationary_aux(spec: KernelSpec, rng: np.random.Generator, d=1, i=None, size=None):
    """Draw ``z`` from its stationary law (i.i.d. standard normal components).

    Returns shape ``(M, d)`` for all modes, or ``(k_i, d)`` when ``i`` is given;
    ``size`` prepends sample axes.
    """
    k = spec.n_modes if i is None else spec.counts[i]
    shape = (k, d) if size is None else tuple(np.atleast_1d(size)) + (k, d)
    return rng.standard_normal(shape)


def ou_exact_step(z, alpha, dt, xi):
    """Exact transition of ``dz = -alpha z dt + sqrt(2 alpha) dW`` over ``dt``."""
    decay = np.exp(-alpha * dt)
    return decay * z + np.sqrt(-np.expm1(-2 * alpha * dt)) * xi


def _regular_step(lags):
    pos = np.diff(np.unique(lags))
    if len(pos) == 0:
        return None
    h = float(pos.min())
    ratio = lags / h
    if np.allclose(ratio, np.round(ratio), atol=1e-9, rtol=0):
        return h
    return None


def _auto_horizon(spec, i, lags, n, target=0.015):
    """Path length giving roughly ``target`` relative standard error at the largest lag."""
    lam = np.array([l for l, _ in spec.modes[i]])
    alpha = np.array([a for _, a in spec.modes[i]])
    # integral of K^2 over the real line, an upper bound on the estimator variance density
    w = lam[:, None] ** 2 * lam[None, :] ** 2
    integral = 2 * np.sum(w / (alpha[:, None] + alpha[None, :]))
    k_max = kernel_eval(spec, i, float(np.max(lags)))
    horizon = 2 * integral / (n * (target * k_max) ** 2)
    return float(np.clip(horizon, 10 * np.max(lags) + 1.0, 4000.0))


def fluctuation_dissipation_check(
    spec: KernelSpec, i: int, lags=None, sample_count=100_000, rng=None, horizon=None, chunk=2_000
):
    """Compare the empirical autocovariance of ``F_i = sum_l lam z_l`` with ``K_i``.

    ``sample_count`` independent stationary paths are started from the exact
    stationary law and advanced by exact OU transitions.  When the lag grid is
    regular each path is run for ``horizon`` time units and the covariance is
    averaged over time as well as over paths; otherwise a single pair
    ``(F(0), F(tau))`` per path and lag is used.

    Returns a dict of arrays ``lag, empirical, exact, rel_err, stderr``.
    """
    if rng is None:
        rng = np.random.default_rng()
    lags = np.arange(0.0, 3.0 + 1e-12, 0.1) if lags is None else np.asarray(lags, dtype=float)
    if np.any(lags < 0):
        raise NegativeTime("negative lag")
    lam = np.array([l for l, _ in spec.modes[i]])
    alpha = np.array([a for _, a in spec.modes[i]])
    exact = np.asarray(kernel_eval(spec, i, lags), dtype=float)
    h = _regular_step(lags)
    if h is None:
        empirical = np.empty(len(lags))
        sq = np.empty(len(lags))
        z0 = rng.standard_normal((sample_count, len(lam)))
        f0 = z0 @ lam
        for k, tau in enumerate(lags):
            zt = ou_exact_step(z0, alpha, tau, rng.standard_normal(z0.shape))
            prod = f0 * (zt @ lam)
            empirical[k] = prod.mean()
            sq[k] = prod.std(ddof=1) / np.sqrt(sample_count)
        used_horizon = float(np.max(lags))
    else:
        if horizon is None:
            horizon = _auto_horizon(spec, i, lags, sample_count)
        steps = int(np.ceil(horizon / h))
        shifts = np.round(lags / h).astype(int)
        decay = np.exp(-alpha * h)
        scale = np.sqrt(-np.expm1(-2 * alpha * h))
        total = np.zeros(len(lags))
        blocks = []
        for start in range(0, sample_count, chunk):
            n = min(chunk, sample_count - start)
            force = np.zeros((n, steps + 1))
            for l in range(len(lam)):
                # AR(1) recursion z_k = decay z_{k-1} + scale xi_k, started in stationarity
                xi = rng.standard_normal((n, steps + 1))
                xi[:, 1:] *= scale[l]
                force += lam[l] * lfilter([1.0], [1.0, -decay[l]], xi, axis=1)
            acc = np.empty((len(lags), n))
            for k, s in enumerate(shifts):
                acc[k] = np.einsum("ij,ij->i", force[:, s:], force[:, : steps + 1 - s]) / (steps + 1 - s)
            total += acc.sum(axis=1)
            blocks.append(acc)
        per_path = np.concatenate(blocks, axis=1)
        empirical = total / sample_count
        sq = per_path.std(axis=1, ddof=1) / np.sqrt(sample_count)
        used_horizon = steps * h
    rel = np.abs(empirical - exact) / np.abs(exact)
    return {
        "lag": lags,
        "empirical": empirical,
        "exact": exact,
        "rel_err": rel,
        "stderr": sq,
        "sample_count": int(sample_count),
        "horizon": used_horizon,
    }
