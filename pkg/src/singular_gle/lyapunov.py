"""Hamiltonian, generator and Lyapunov candidates of the GLE system.

Every candidate returns its value together with the first derivatives and
the ``v``/``z`` Laplacians, all coded by hand, so the generator can be
applied exactly.  Arrays may carry a leading sample axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import Model, PhaseState, OverdampedState
from .errors import CoincidentParticles, DimensionMismatch, NonPositiveRadicand, RegimeMismatch, WrongBetaRegime
from .potentials import pair_indices


@dataclass(frozen=True)
class LyapunovParams:
    epsilon: float = 0.01
    R: float = 2.0
    kappa: float = 0.5

    def __post_init__(self):
        if not 0 <= self.epsilon < 1:
            raise ValueError("epsilon must lie in [0, 1)")
        if not self.R > 1:
            raise ValueError("R must exceed 1")
        if not 0 < self.kappa < 1:
            raise ValueError("kappa must lie in (0, 1)")


@dataclass
class GeneratorInput:
    """Derivatives of an observable: gradients ``(.., N, d)`` / ``(.., M, d)``,
    per-particle ``lap_v (.., N)`` and per-mode ``lap_z (.., M)``."""

    grad_x: np.ndarray
    grad_v: np.ndarray
    grad_z: np.ndarray
    lap_v: np.ndarray
    lap_z: np.ndarray

    def __add__(self, other):
        return GeneratorInput(*(a + b for a, b in zip(self._parts(), other._parts())))

    def scale(self, c):
        c = np.asarray(c, dtype=float)
        cv = c[..., None, None]
        return GeneratorInput(self.grad_x * cv, self.grad_v * cv, self.grad_z * cv,
                              self.lap_v * c[..., None], self.lap_z * c[..., None])

    def _parts(self):
        return (self.grad_x, self.grad_v, self.grad_z, self.lap_v, self.lap_z)


def _arrays(state):
    x = np.asarray(state.x, dtype=float)
    v = np.asarray(state.v, dtype=float)
    z = np.asarray(state.z, dtype=float)
    return x, v, z


def _check_distinct(model, x):
    if np.any(model.min_distance(x) <= 0):
        raise CoincidentParticles("configuration has coinciding particles")


def potential_energy(model: Model, x):
    """``sum U(x_i) + sum_{i<j} G(x_i - x_j)`` (plus ``G(x_i)`` with an origin singularity)."""
    _check_distinct(model, x)
    e = np.sum(model.U.value(x), axis=-1)
    if model.G is not None:
        if model.N > 1:
            e = e + np.sum(model.G.value(model.separations(x)), axis=-1)
        if model.origin_singularity:
            e = e + np.sum(model.G.value(x), axis=-1)
    return e


def hamiltonian_N(state: PhaseState, m, model: Model):
    """``m|v|^2/2 + sum U + sum_{i<j} G + sum |z|^2/2``."""
    x, v, z = _arrays(state)
    return 0.5 * m * np.sum(v * v, axis=(-2, -1)) + potential_energy(model, x) + 0.5 * np.sum(z * z, axis=(-2, -1))


def generator_apply(inp: GeneratorInput, state: PhaseState, m, gamma, model: Model):
    """Apply the GLE generator to an observable given through its derivatives."""
    x, v, z = _arrays(state)
    k = model.kernel
    N, M, d = model.N, k.n_modes, model.d
    expect = {"grad_x": (N, d), "grad_v": (N, d), "grad_z": (M, d), "lap_v": (N,), "lap_z": (M,)}
    for name, shape in expect.items():
        if np.shape(getattr(inp, name))[-len(shape):] != shape:
            raise DimensionMismatch(f"{name} has shape {np.shape(getattr(inp, name))}, expected (..., {shape})")
    if x.shape[-2:] != (N, d) or z.shape[-2:] != (M, d):
        raise DimensionMismatch("state does not match the model dimensions")
    _check_distinct(model, x)
    L = k.coupling()
    force = model.forces(x) + np.einsum("nm,...md->...nd", L, z)
    out = np.sum(inp.grad_x * v, axis=(-2, -1))
    out = out + np.sum(inp.grad_v * (-gamma * v + force), axis=(-2, -1)) / m
    out = out + gamma / m**2 * np.sum(inp.lap_v, axis=-1)
    zdrift = -k.alpha[:, None] * z - np.einsum("nm,...nd->...md", L, v)
    out = out + np.sum(inp.grad_z * zdrift, axis=(-2, -1))
    out = out + np.sum(k.alpha * inp.lap_z, axis=-1)
    return out


def lh_closed_form(state: PhaseState, m, gamma, model: Model):
    """``L H_N = -gamma|v|^2 - sum alpha|z|^2 + gamma N d / m + d sum alpha``."""
    x, v, z = _arrays(state)
    k = model.kernel
    d = model.d
    return (
        -gamma * np.sum(v * v, axis=(-2, -1))
        - np.sum(k.alpha[:, None] * z * z, axis=(-2, -1))
        + gamma * model.N * d / m
        + d * np.sum(k.alpha)
    )


# ---------------------------------------------------------------------------
# Observables with derivatives
# ---------------------------------------------------------------------------


def _zeros_like_input(x, z):
    lead = x.shape[:-2]
    return GeneratorInput(np.zeros_like(x), np.zeros_like(x), np.zeros_like(z),
                          np.zeros(lead + (x.shape[-2],)), np.zeros(lead + (z.shape[-2],)))


def hamiltonian_derivatives(state: PhaseState, m, model: Model) -> GeneratorInput:
    x, v, z = _arrays(state)
    lead = x.shape[:-2]
    return GeneratorInput(
        -model.forces(x),
        m * v,
        z.copy(),
        np.full(lead + (model.N,), m * model.d, dtype=float),
        np.full(lead + (model.kernel.n_modes,), float(model.d)),
    )


def xv_derivatives(state: PhaseState, model: Model) -> GeneratorInput:
    """Derivatives of ``<x, v>``."""
    x, v, z = _arrays(state)
    out = _zeros_like_input(x, z)
    out.grad_x = v.copy()
    out.grad_v = x.copy()
    return out


def _unit_sum(model: Model, x, v):
    """``S = sum_i <v_i, sum_{j != i} u_ij>`` and its ``x`` and ``v`` gradients.

    ``u_ij`` is the unit vector from ``x_j`` to ``x_i``; with an origin
    singularity the origin acts as an extra fixed partner.
    """
    w = np.zeros_like(x)
    gx = np.zeros_like(x)
    S = np.zeros(x.shape[:-2])
    d = x.shape[-1]
    eye = np.eye(d)
    if model.N > 1:
        I, J = pair_indices(model.N)
        sep = x[..., I, :] - x[..., J, :]
        r = np.linalg.norm(sep, axis=-1)
        u = sep / r[..., None]
        a = v[..., I, :] - v[..., J, :]
        S = S + np.sum(a * u, axis=(-2, -1))
        proj = eye - u[..., :, None] * u[..., None, :]
        g = np.einsum("...pij,...pj->...pi", proj, a) / r[..., None]
        for p, (i, j) in enumerate(zip(I, J)):
            w[..., i, :] += u[..., p, :]
            w[..., j, :] -= u[..., p, :]
            gx[..., i, :] += g[..., p, :]
            gx[..., j, :] -= g[..., p, :]
    if model.origin_singularity:
        r = np.linalg.norm(x, axis=-1)
        u = x / r[..., None]
        S = S + np.sum(v * u, axis=(-2, -1))
        w = w + u
        proj = eye - u[..., :, None] * u[..., None, :]
        gx = gx + np.einsum("...nij,...nj->...ni", proj, v) / r[..., None]
    return S, gx, w


def unit_sum(model: Model, x, v):
    return _unit_sum(model, np.asarray(x, float), np.asarray(v, float))[0]


def q_radicand(state: PhaseState, m, model: Model, R):
    """``R^6 sum|z_{i,1}|^2 + m|v|^2 + 2 sum U + 2 sum G + R^2``."""
    x, v, z = _arrays(state)
    z1 = z[..., model.kernel.first_mode, :]
    Q = R**6 * np.sum(z1 * z1, axis=(-2, -1)) + m * np.sum(v * v, axis=(-2, -1)) + 2 * potential_energy(model, x) + R**2
    if np.any(~(Q > 0)):
        raise NonPositiveRadicand("radicand is not positive; check the shift constants of U and G")
    return Q


def vN1_parts(state: PhaseState, m, model: Model, params: LyapunovParams):
    """Value and derivatives of ``H + eps m <x,v> - eps m S``."""
    x, v, z = _arrays(state)
    eps = params.epsilon
    H = hamiltonian_N(state, m, model)
    S, gx, w = _unit_sum(model, x, v)
    value = H + eps * m * np.sum(x * v, axis=(-2, -1)) - eps * m * S
    der = hamiltonian_derivatives(state, m, model)
    der.grad_x = der.grad_x + eps * m * v - eps * m * gx
    der.grad_v = der.grad_v + eps * m * x - eps * m * w
    return value, der


def vN2_parts(state: PhaseState, m, model: Model, params: LyapunovParams):
    """Value and derivatives of
    ``H + eps R m <x,v> + eps R^2 m sum <v_i, z_{i,1}> - eps m S sqrt(Q)``."""
    x, v, z = _arrays(state)
    eps, R = params.epsilon, params.R
    d = model.d
    first = model.kernel.first_mode
    H = hamiltonian_N(state, m, model)
    Q = q_radicand(state, m, model, R)
    sq = np.sqrt(Q)
    S, gx, w = _unit_sum(model, x, v)
    z1 = z[..., first, :]
    value = (
        H
        + eps * R * m * np.sum(x * v, axis=(-2, -1))
        + eps * R**2 * m * np.sum(v * z1, axis=(-2, -1))
        - eps * m * S * sq
    )
    der = hamiltonian_derivatives(state, m, model)
    # gradients of sqrt(Q)
    F = model.forces(x)
    sq_x = -F / sq[..., None, None]
    sq_v = m * v / sq[..., None, None]
    sq_z = np.zeros_like(z)
    sq_z[..., first, :] = R**6 * z1 / sq[..., None, None]
    vv = np.sum(v * v, axis=-1)
    lap_sq_v = m * d / sq[..., None] - m**2 * vv / (Q**1.5)[..., None]
    lap_sq_z = np.zeros(z.shape[:-1])
    zz = np.sum(z1 * z1, axis=-1)
    lap_sq_z[..., first] = R**6 * d / sq[..., None] - R**12 * zz / (Q**1.5)[..., None]
    c = eps * m
    Sx = S[..., None, None]
    der.grad_x = der.grad_x + eps * R * m * v - c * (sq[..., None, None] * gx + Sx * sq_x)
    der.grad_v = der.grad_v + eps * R * m * x + eps * R**2 * m * z1 - c * (sq[..., None, None] * w + Sx * sq_v)
    gz = np.zeros_like(z)
    gz[..., first, :] = eps * R**2 * m * v
    der.grad_z = der.grad_z + gz - c * Sx * sq_z
    der.lap_v = der.lap_v - c * (2 * np.sum(w * sq_v, axis=-1) + S[..., None] * lap_sq_v)
    der.lap_z = der.lap_z - c * S[..., None] * lap_sq_z
    return value, der


def _single_particle_model(model: Model):
    if model.N != 1:
        raise DimensionMismatch("single-particle candidates need N = 1")
    if not model.origin_singularity:
        model = Model(model.U, model.G, model.kernel, model.d, model.cutoff, True)
    return model


def v1_eval(state: PhaseState, m, model: Model, params: LyapunovParams):
    """``H + m eps <x,v> - m eps <x,v>/|x|`` for one particle around a singularity at 0."""
    return vN1_parts(state, m, _single_particle_model(model), params)[0]


def v2_eval(state: PhaseState, m, model: Model, params: LyapunovParams):
    """``H + eps R m <x,v> + eps R^2 m <v,z_1> - eps m <x,v>/|x| sqrt(Q_R)``."""
    return vN2_parts(state, m, _single_particle_model(model), params)[0]


def vN1_eval(state, m, model, params):
    return vN1_parts(state, m, model, params)[0]


def vN2_eval(state, m, model, params):
    return vN2_parts(state, m, model, params)[0]


# ---------------------------------------------------------------------------
# Overdamped energies
# ---------------------------------------------------------------------------


def _pair_distances(q):
    n = q.shape[-2]
    I, J = pair_indices(n)
    r = np.linalg.norm(q[..., I, :] - q[..., J, :], axis=-1)
    if np.any(r <= 0):
        raise CoincidentParticles("configuration has coinciding particles")
    return r


def _quadratic_part(state: OverdampedState, gamma, model: Model):
    q = np.asarray(state.q, dtype=float)
    f = np.asarray(state.f, dtype=float)
    alpha = model.kernel.alpha
    return 0.5 * gamma * np.sum(q * q, axis=(-2, -1)) + 0.5 * np.sum(f * f / alpha[:, None], axis=(-2, -1))


def gamma1_eval(state: OverdampedState, gamma, model: Model, params: LyapunovParams):
    """``gamma|q|^2/2 + sum |f|^2/(2 alpha) + eps gamma sum_{i<j} |q_i - q_j|^{-(beta1 - 1)}``."""
    if model.G is None or not model.G.beta1 > 1:
        raise WrongBetaRegime("Gamma_1 needs beta1 > 1")
    r = _pair_distances(np.asarray(state.q, dtype=float))
    return _quadratic_part(state, gamma, model) + params.epsilon * gamma * np.sum(r ** (1 - model.G.beta1), axis=-1)


def gamma2_eval(state: OverdampedState, gamma, model: Model, params: LyapunovParams):
    """As :func:`gamma1_eval` with ``-eps gamma sum log|q_i - q_j|`` (the ``beta1 = 1`` case)."""
    if model.G is None or model.G.beta1 != 1:
        raise WrongBetaRegime("Gamma_2 needs beta1 = 1")
    r = _pair_distances(np.asarray(state.q, dtype=float))
    return _quadratic_part(state, gamma, model) - params.epsilon * gamma * np.sum(np.log(r), axis=-1)


# ---------------------------------------------------------------------------
# Drift scan
# ---------------------------------------------------------------------------

CANDIDATES = ("H", "V1", "V2", "VN1", "VN2")


def candidate_parts(name, state, m, model, params):
    if name == "H":
        return hamiltonian_N(state, m, model), hamiltonian_derivatives(state, m, model)
    if name in ("V1", "VN1"):
        if name == "V1":
            model = _single_particle_model(model)
        return vN1_parts(state, m, model, params)
    if name in ("V2", "VN2"):
        if name == "V2":
            model = _single_particle_model(model)
        return vN2_parts(state, m, model, params)
    raise ValueError(f"unknown candidate {name!r}")


def check_regime(name, model: Model, gamma):
    if name in ("V1", "VN1") and not gamma > 0:
        raise RegimeMismatch(f"{name} needs gamma > 0")
    if name in ("V2", "VN2"):
        if gamma != 0:
            raise RegimeMismatch(f"{name} is the gamma = 0 candidate")
        if model.U.lam != 1:
            raise RegimeMismatch(f"{name} needs a quadratic confining potential (lambda = 1)")


def _directions(rng, shape, d):
    g = rng.standard_normal(shape + (d,))
    return g / np.linalg.norm(g, axis=-1, keepdims=True)


def stratified_samples(model: Model, m, n, rng, radius=(1e-2, 10.0), speed=(0.0, 10.0),
                       collision=(1e-3, 1e-1), collision_fraction=0.3):
    """Phase-space samples for a drift scan.

    Positions have log-uniform radii in ``radius`` and uniform directions; a
    ``collision_fraction`` of the samples places one pair (or, with an origin
    singularity, one particle and the origin) at a log-uniform distance in
    ``collision``.  Velocities and modes have uniform magnitudes in ``speed``.
    Returns a batched :class:`PhaseState`.
    """
    N, d, M = model.N, model.d, model.kernel.n_modes
    rad = np.exp(rng.uniform(np.log(radius[0]), np.log(radius[1]), (n, N)))
    x = rad[..., None] * _directions(rng, (n, N), d)
    n_col = int(round(collision_fraction * n))
    if n_col and (N > 1 or model.origin_singularity):
        sep = np.exp(rng.uniform(np.log(collision[0]), np.log(collision[1]), n_col))
        dirs = _directions(rng, (n_col,), d)
        if N > 1:
            i = rng.integers(0, N, n_col)
            j = (i + rng.integers(1, N, n_col)) % N
            x[np.arange(n_col), j] = x[np.arange(n_col), i] + sep[:, None] * dirs
        else:
            x[:n_col, 0] = sep[:, None] * dirs
    v = rng.uniform(*speed, (n, N))[..., None] * _directions(rng, (n, N), d)
    z = rng.uniform(*speed, (n, M))[..., None] * _directions(rng, (n, M), d)
    keep = model.min_distance(x) > 0
    return PhaseState(x[keep], v[keep], z[keep])


def far_field_samples(model: Model, n, rng, radius=(10.0, 100.0)):
    """Large ``|x|`` with ``v = 0`` and ``z = 0``: the negative-control region."""
    N, d, M = model.N, model.d, model.kernel.n_modes
    rad = np.exp(rng.uniform(np.log(radius[0]), np.log(radius[1]), (n, N)))
    x = rad[..., None] * _directions(rng, (n, N), d)
    keep = model.min_distance(x) > 1e-3
    x = x[keep]
    return PhaseState(x, np.zeros_like(x), np.zeros((len(x), M, d)))


def fit_drift(LV, V, core_quantile=0.5, c_grid=None):
    """Largest ``c`` on a log grid with ``LV <= -c V + D`` over every sample.

    ``D(c)`` is the maximum of ``LV + c V`` over the core (samples with ``V``
    at most the ``core_quantile`` quantile); outside the core the bound must
    hold with that ``D``.  Returns ``(c, D, bad_mask)`` where ``bad_mask``
    flags samples violating the bound at the smallest grid ``c`` when no ``c``
    works (``c`` is then ``None``).
    """
    LV = np.asarray(LV, dtype=float)
    V = np.asarray(V, dtype=float)
    if c_grid is None:
        c_grid = np.logspace(-6, 1, 141)
    core = V <= np.quantile(V, core_quantile)
    best = None
    for c in c_grid:
        D = float(np.max((LV + c * V)[core]))
        tol = 1e-9 * (np.abs(LV) + c * np.abs(V) + abs(D))
        if np.all(LV + c * V <= D + tol):
            best = (float(c), D)
    if best is not None:
        return best[0], best[1], np.zeros(len(V), dtype=bool)
    c = float(c_grid[0])
    D = float(np.max((LV + c * V)[core]))
    return None, D, LV + c * V > D + 1e-9 * (np.abs(LV) + c * np.abs(V) + abs(D))


def drift_scan(candidate, model: Model, m, gamma, params: LyapunovParams | None = None, samples=None,
               n_samples=10_000, rng=None, core_quantile=0.5, max_report=20, check=True):
    """Sampled certification of ``L V <= -c V + D``.

    Returns ``{candidate, params, n_samples, c_fit, D_fit, violations}``;
    each violation records ``state, LV, V, margin`` with
    ``margin = D - (LV + c V)`` (negative when violated).
    """
    if check and candidate != "H":
        check_regime(candidate, model, gamma)
    params = params or LyapunovParams()
    if samples is None:
        rng = rng or np.random.default_rng(0)
        samples = stratified_samples(model, m, n_samples, rng)
    V, der = candidate_parts(candidate, samples, m, model, params)
    LV = generator_apply(der, samples, m, gamma, model)
    c, D, bad = fit_drift(LV, V, core_quantile)
    c_used = c if c is not None else 1e-6
    margin = D - (LV + c_used * V)
    idx = np.nonzero(bad)[0]
    order = idx[np.argsort(margin[idx])][:max_report]
    violations = [
        {
            "state": {"x": samples.x[k].tolist(), "v": samples.v[k].tolist(), "z": samples.z[k].tolist()},
            "LV": float(LV[k]),
            "V": float(V[k]),
            "margin": float(margin[k]),
        }
        for k in order
    ]
    return {
        "candidate": candidate,
        "params": {"epsilon": params.epsilon, "R": params.R, "kappa": params.kappa, "m": m, "gamma": gamma},
        "n_samples": int(len(V)),
        "c_fit": c,
        "D_fit": D,
        "n_violations": int(len(idx)),
        "violations": violations,
        "sampling": "stratified: log-uniform radii, near-collision strata, uniform |v|, |z|",
    }


def drift_search(candidate, model: Model, m, gamma, samples, eps_grid=(1e-3, 1e-2, 1e-1), R_grid=(2.0, 5.0, 10.0),
                 core_quantile=0.5):
    """Try every ``(eps, R)`` on the grid; return the best report and all of them.

    The best report is the violation-free one with the largest ``c``; if none
    is violation-free, the one with fewest violations.
    """
    reports = []
    R_values = R_grid if candidate in ("V2", "VN2") else (R_grid[0],)
    for eps in eps_grid:
        for R in R_values:
            rep = drift_scan(candidate, model, m, gamma, LyapunovParams(epsilon=eps, R=R), samples=samples,
                             core_quantile=core_quantile)
            reports.append(rep)
    clean = [r for r in reports if r["n_violations"] == 0]
    if clean:
        best = max(clean, key=lambda r: r["c_fit"])
    else:
        best = min(reports, key=lambda r: r["n_violations"])
    return best, reports
