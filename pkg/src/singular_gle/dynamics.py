"""Integrators for the Markovian GLE system and its overdamped limit.

State arrays carry a leading ensemble axis: positions ``(B, N, d)``,
auxiliary modes ``(B, M, d)`` with the modes of all particles flattened (see
:class:`KernelSpec`).  Noise rows are ordered ``W_{1,0} .. W_{N,0}`` followed
by one row per memory mode, and the GLE and overdamped integrators consume
the same rows so they can be driven by one Brownian path.

GLE step (B-A-O-A-B splitting)::

    B  v += h/(2m) F(x)              F = -grad U - sum grad G
    A  x += h/2 v
    O  (v, z) <- exact solution of the linear block over h
    A  x += h/2 v
    B  v += h/(2m) F(x)

The O block ``dv = (-gamma v + sum lam z)/m dt + sqrt(2 gamma)/m dW0``,
``dz = (-alpha z - lam v) dt + sqrt(2 alpha) dW`` is solved exactly,
conditionally on the Brownian increments of the grid cells it spans, so the
scheme stays stable as ``m -> 0`` with ``h`` proportional to ``m`` and it
leaves ``N(0, 1/m) x N(0, 1)`` exactly invariant.
"""

from __future__ import annotations

import time as _time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid
from scipy.linalg import expm

from .errors import CoincidentParticles, GammaZero, HorizonExceeded, NonFinite, StepRejected
from .kernels import KernelSpec
from .noise import TAG_RESIDUAL, Pieces, StreamBuffer, WienerCells
from .potentials import (
    ConfiningPotential,
    SingularPotential,
    min_pair_distance,
    pair_incidence,
    pair_indices,
)

# ---------------------------------------------------------------------------
# Cutoff
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CutoffSpec:
    R: float

    def __post_init__(self):
        if not self.R > 2:
            raise ValueError("cutoff radius must exceed 2")


def smoothstep(u):
    u = np.clip(u, 0.0, 1.0)
    return u * u * u * (10.0 + u * (-15.0 + 6.0 * u))


def apply_cutoff(spec: CutoffSpec, t):
    """``theta_R(t)``: 1 on ``|t| <= R``, 0 on ``|t| >= R + 1``, C^2 in between."""
    out = 1.0 - smoothstep(np.abs(t) - spec.R)
    return out if np.ndim(out) else float(out)


# ---------------------------------------------------------------------------
# Model, parameters and states
# ---------------------------------------------------------------------------


@dataclass
class Model:
    """Potentials, memory kernel and dimension of an N-particle system.

    ``origin_singularity`` adds ``G(x_i)``, the interaction with a fixed
    particle at the origin, which turns ``N = 1`` into the single-particle
    model with a singular potential at zero.
    """

    U: ConfiningPotential
    G: SingularPotential | None
    kernel: KernelSpec
    d: int = 1
    cutoff: CutoffSpec | None = None
    origin_singularity: bool = False

    def __post_init__(self):
        self._pairs = pair_indices(self.N)
        self._inc = pair_incidence(self.N)

    @property
    def N(self) -> int:
        return self.kernel.n_particles

    @property
    def truncated(self) -> bool:
        return self.cutoff is not None

    def without_cutoff(self):
        return Model(self.U, self.G, self.kernel, self.d, None, self.origin_singularity)

    def with_cutoff(self, R):
        return Model(self.U, self.G, self.kernel, self.d, CutoffSpec(R), self.origin_singularity)

    def separations(self, x):
        I, J = self._pairs
        return x[..., I, :] - x[..., J, :]

    def _pair_grad(self, sep):
        """``grad G`` on pair separations, cut off when the model is truncated."""
        if self.cutoff is None:
            return self.G.grad(sep)
        rho = np.linalg.norm(sep, axis=-1)
        live = rho > 1.0 / (self.cutoff.R + 1.0)
        safe = np.where(live[..., None], sep, 1.0)
        theta = np.where(live, apply_cutoff(self.cutoff, 1.0 / np.where(live, rho, 1.0)), 0.0)
        return theta[..., None] * self.G.grad(safe)

    def forces(self, x):
        """``-grad U(x_i) - sum_j grad G(x_i - x_j)`` (truncated if a cutoff is set)."""
        x = np.asarray(x, dtype=float)
        gu = self.U.grad(x)
        if self.cutoff is not None:
            gu = apply_cutoff(self.cutoff, np.linalg.norm(x, axis=-1))[..., None] * gu
        out = -gu
        if self.G is not None:
            if self.N > 1:
                out -= np.einsum("np,...pd->...nd", self._inc, self._pair_grad(self.separations(x)))
            if self.origin_singularity:
                out -= self._pair_grad(x)
        return out

    def min_distance(self, x):
        dist = min_pair_distance(x)
        if self.origin_singularity:
            dist = np.minimum(dist, np.min(np.linalg.norm(x, axis=-1), axis=-1))
        return dist


@dataclass
class SimParams:
    m: float = 1.0
    gamma: float = 1.0
    dt: float = 0.01
    T: float = 1.0
    seed: int = 0
    delta_min: float = 1e-4
    max_halvings: int = 20
    noise: bool = True
    max_rel_move: float = 0.5  # largest accepted relative change of a pair distance per step

    def __post_init__(self):
        if not self.m > 0:
            raise ValueError("mass must be positive")
        if self.gamma < 0:
            raise ValueError("gamma must be nonnegative")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.T < 0:
            raise ValueError("horizon must be nonnegative")

    def check_gle_dt(self):
        limit = self.m / (10 * max(self.gamma, 1.0))
        if self.dt > limit * (1 + 1e-12):
            raise ValueError(f"dt={self.dt} does not resolve the fast scale; need dt <= {limit}")


@dataclass
class PhaseState:
    x: np.ndarray
    v: np.ndarray
    z: np.ndarray
    t: float = 0.0

    def arrays(self):
        return (self.x, self.v, self.z)


@dataclass
class OverdampedState:
    q: np.ndarray
    f: np.ndarray
    t: float = 0.0

    def arrays(self):
        return (self.q, self.f)


def _as_batch(arr, batch=None):
    arr = np.asarray(arr, dtype=float)
    if arr.ndim == 2:
        arr = arr[None]
    if batch is not None and arr.shape[0] == 1 and batch > 1:
        arr = np.repeat(arr, batch, axis=0)
    return arr


def check_domain(x):
    """Raise :class:`CoincidentParticles` unless all pairs are distinct."""
    if np.any(min_pair_distance(x) <= 0):
        raise CoincidentParticles("initial positions are not pairwise distinct")


def lift_initial_condition(x0, z0, spec: KernelSpec) -> OverdampedState:
    """``q(0) = x(0)`` and ``f_{i,l}(0) = z_{i,l}(0) + lam_{i,l} x_i(0)``."""
    x0 = np.asarray(x0, dtype=float)
    z0 = np.asarray(z0, dtype=float)
    if x0.ndim < 2:
        x0 = x0.reshape(spec.n_particles, -1)
    if z0.ndim < 2:
        z0 = z0.reshape(spec.n_modes, -1)
    check_domain(x0)
    f0 = z0 + spec.lam[:, None] * x0[..., spec.owner, :]
    return OverdampedState(x0.copy(), f0)


# ---------------------------------------------------------------------------
# Exact linear blocks
# ---------------------------------------------------------------------------


def _psd_sqrt(c):
    c = 0.5 * (c + c.T)
    w, u = np.linalg.eigh(c)
    return (u * np.sqrt(np.clip(w, 0.0, None))) @ u.T


class LinearBlock:
    """Exact conditional sampler for ``dy = A y dt + diag(s) dW``.

    Over a step made of ``n`` pieces of width ``w`` with known Brownian
    increments, the stochastic integral splits into its conditional mean
    ``sum_k E_w^(n-1-k) Phi(w) S dW_k / w`` and an independent Gaussian
    remainder whose covariance comes from Van Loan's formula.
    """

    def __init__(self, A, s):
        self.A = np.asarray(A, dtype=float)
        self.s = np.asarray(s, dtype=float)
        self._cache = {}

    def matrices(self, n, w):
        key = (int(n), float(w))
        if key in self._cache:
            return self._cache[key]
        A, R = self.A, len(self.A)
        S = np.diag(self.s)
        E = expm(A * w)
        aug = np.zeros((2 * R, 2 * R))
        aug[:R, :R] = A
        aug[:R, R:] = np.eye(R)
        phi = expm(aug * w)[:R, R:]
        van = np.zeros((2 * R, 2 * R))
        van[:R, :R] = -A
        van[:R, R:] = S @ S.T
        van[R:, R:] = A.T
        F = expm(van * w)
        Q = F[R:, R:].T @ F[:R, R:]
        P = Q - phi @ S @ S.T @ phi.T / w
        powers = [np.eye(R)]
        for _ in range(n - 1):
            powers.append(E @ powers[-1])
        weights = np.stack([powers[n - 1 - k] @ phi @ S / w for k in range(n)])
        resid = sum(Pk @ P @ Pk.T for Pk in powers)
        out = (powers[-1] @ E, weights, _psd_sqrt(resid))
        self._cache[key] = out
        return out

    def propagate(self, y, dW, w, xi=None):
        """Advance ``y (B, R, d)`` given increments ``dW (B, n, R, d)``."""
        E, weights, root = self.matrices(dW.shape[1], w)
        out = np.einsum("rs,bsd->brd", E, y) + np.einsum("krs,bksd->brd", weights, dW)
        if xi is not None:
            out += np.einsum("rs,bsd->brd", root, xi)
        return out


def gle_block(kernel: KernelSpec, m, gamma):
    """Drift matrix and noise scales of the ``(v, z)`` block."""
    N, M = kernel.n_particles, kernel.n_modes
    L = kernel.coupling()
    A = np.zeros((N + M, N + M))
    A[:N, :N] = -gamma / m * np.eye(N)
    A[:N, N:] = L / m
    A[N:, :N] = -L.T
    A[N:, N:] = -np.diag(kernel.alpha)
    s = np.concatenate([np.full(N, np.sqrt(2 * gamma) / m), np.sqrt(2 * kernel.alpha)])
    return A, s


# ---------------------------------------------------------------------------
# Steppers
# ---------------------------------------------------------------------------


class _Stepper:
    """Shared acceptance logic.  ``attempt`` returns ``(new_state, ok, nonfinite)``."""

    def __init__(self, model: Model, params: SimParams):
        self.model = model
        self.params = params
        self.rows = model.N + model.kernel.n_modes

    def _gaps(self, x):
        """Pair distances, plus distances to the origin when it is singular."""
        I, J = self.model._pairs
        gaps = np.linalg.norm(x[..., I, :] - x[..., J, :], axis=-1)
        if self.model.origin_singularity:
            gaps = np.concatenate([gaps, np.linalg.norm(x, axis=-1)], axis=-1)
        return gaps

    def _gap_sum(self, per_particle):
        I, J = self.model._pairs
        out = per_particle[..., I] + per_particle[..., J]
        if self.model.origin_singularity:
            out = np.concatenate([out, per_particle], axis=-1)
        return out

    def _judge(self, x_old, x_new, *rest, kick=None):
        """Accept a step unless it is non-finite, gets too close or moves a gap too far.

        A gap may change by at most ``max_rel_move`` times its smaller end
        value, and ``kick`` (per-particle displacement scale of the final
        force kick) must stay below that fraction of the new gaps.  Near a
        collision this shrinks the accepted step like the gap itself.
        """
        finite = np.all(np.isfinite(x_new), axis=(-2, -1))
        for arr in rest:
            finite &= np.all(np.isfinite(arr), axis=(-2, -1))
        if self.model.truncated:
            return finite, finite, ~finite
        with np.errstate(invalid="ignore"):
            dist = self.model.min_distance(x_new)
            ok = finite & (dist >= self.params.delta_min)
            if self.model.d == 1 and self.model.N > 1:
                # in one dimension particles cannot pass through each other
                ok &= np.all(
                    np.sign(self.model.separations(x_old)[..., 0]) == np.sign(self.model.separations(x_new)[..., 0]),
                    axis=-1,
                )
            if self.model.d == 1 and self.model.origin_singularity:
                ok &= np.all(np.sign(x_old[..., 0]) == np.sign(x_new[..., 0]), axis=-1)
            eta = self.params.max_rel_move
            if self.model.N > 1 or self.model.origin_singularity:
                g_old, g_new = self._gaps(x_old), self._gaps(x_new)
                ok &= np.all(np.abs(g_new - g_old) <= eta * np.minimum(g_old, g_new), axis=-1)
                if kick is not None:
                    ok &= np.all(self._gap_sum(kick) <= eta * g_new, axis=-1)
        return ok, finite, ~finite

    def _forces_where(self, x, ok):
        F = np.zeros_like(x)
        if np.any(ok):
            F[ok] = self.model.forces(x[ok])
        return F


class GLEStepper(_Stepper):
    def __init__(self, model, params):
        super().__init__(model, params)
        A, s = gle_block(model.kernel, params.m, params.gamma)
        self.block = LinearBlock(A, s)

    def attempt(self, state, dW, w, xi=None):
        x, v, z = state
        N = self.model.N
        h = dW.shape[1] * w
        c = 0.5 * h / self.params.m
        v = v + c * self.model.forces(x)
        x_new = x + 0.5 * h * v
        y = self.block.propagate(np.concatenate([v, z], axis=1), dW, w, xi)
        v, z = y[:, :N], y[:, N:]
        x_new = x_new + 0.5 * h * v
        ok, _, _ = self._judge(x, x_new, v, z)
        F = self._forces_where(x_new, ok)
        if ok.any() and not self.model.truncated:
            ok &= self._judge(x, x_new, kick=h * c * np.linalg.norm(F, axis=-1))[0]
        v = v + c * F
        fin = np.all(np.isfinite(v), axis=(-2, -1))
        return (x_new, v, z), ok & fin, ~(np.all(np.isfinite(x_new), axis=(-2, -1)) & fin)


class OverdampedStepper(_Stepper):
    def __init__(self, model, params):
        super().__init__(model, params)
        if not params.gamma > 0:
            raise GammaZero("the overdamped system needs gamma > 0")
        k = model.kernel
        self.block = LinearBlock(-np.diag(k.alpha), np.sqrt(2 * k.alpha))
        self.L = k.coupling()
        self.lam2 = (self.L**2).sum(axis=1)

    def attempt(self, state, dW, w, xi=None):
        q, f = state
        N = self.model.N
        k = self.model.kernel
        g = self.params.gamma
        h = dW.shape[1] * w
        drift = self.model.forces(q) - self.lam2[:, None] * q + np.einsum("nm,bmd->bnd", self.L, f)
        q_new = q + (h / g) * drift + np.sqrt(2.0 / g) * dW[:, :, :N].sum(axis=1)
        relax = -np.expm1(-k.alpha * h)[:, None]
        f_new = self.block.propagate(f, dW[:, :, N:], w, xi) + relax * k.lam[:, None] * q[:, k.owner]
        ok, _, nonfinite = self._judge(q, q_new, f_new)
        return (q_new, f_new), ok, nonfinite


# ---------------------------------------------------------------------------
# Driver with step rejection
# ---------------------------------------------------------------------------


class _Runner:
    def __init__(self, stepper, params, wiener: WienerCells, n_sub, residual: bool):
        self.stepper = stepper
        self.params = params
        self.wiener = wiener
        self.n_sub = n_sub
        self.w = wiener.dt
        B = wiener.batch
        self.res = StreamBuffer(params.seed, wiener.trajectories, TAG_RESIDUAL) if residual else None
        self.rejections = np.zeros(B, dtype=int)
        self.min_dist = np.full(B, np.inf)

    def _xi(self, rows=None):
        if self.res is None:
            return None
        R = self.stepper.block.A.shape[0]
        d = self.wiener.d
        n = len(self.wiener.trajectories) if rows is None else len(rows)
        return self.res.take(R * d, rows).reshape(n, R, d)

    def step(self, state, t):
        cell0 = self.wiener.cell
        dW = self.wiener.next(self.n_sub)
        new, ok, nonfinite = self.stepper.attempt(state, dW, self.w, self._xi())
        if self.stepper.model.truncated and np.any(nonfinite):
            raise NonFinite("non-finite state in truncated integrator", time=t)
        new = [np.array(a) for a in new]
        for b in np.nonzero(~ok)[0]:
            pieces = Pieces([(cell0 + k, 0, 0) for k in range(self.n_sub)], dW[b], self.w)
            sub = tuple(a[b : b + 1] for a in state)
            sub = self._recover(sub, b, pieces, 1, t, bool(nonfinite[b]))
            for a, s in zip(new, sub):
                a[b] = s[0]
        self.min_dist = np.minimum(self.min_dist, self.stepper.model.min_distance(new[0]))
        return tuple(new)

    def _recover(self, state, b, pieces, depth, t, nonfinite):
        if depth > self.params.max_halvings:
            if nonfinite:
                raise NonFinite(f"trajectory {b}: non-finite state after {depth - 1} halvings", time=t)
            raise StepRejected(
                f"trajectory {b}: pair distance below delta_min after {depth - 1} halvings", time=t
            )
        self.rejections[b] += 1
        for half in pieces.halves(self.wiener, b):
            cand, ok, bad = self.stepper.attempt(state, half.incs[None], half.width, self._xi([b]))
            if ok[0]:
                state = cand
                self.min_dist[b] = min(self.min_dist[b], self.stepper.model.min_distance(cand[0])[0])
            else:
                state = self._recover(state, b, half, depth + 1, t, bool(bad[0]))
            t += len(half) * half.width
        return state


@dataclass
class Trajectory:
    """States on the output grid.

    ``data`` maps a field name (``x, v, z`` or ``q, f``) to an array of shape
    ``(B, n_out, rows, d)``; ``min_pair_dist[b, k]`` is the smallest pair
    distance over accepted steps up to output time ``t[k]``.
    """

    t: np.ndarray
    data: dict
    min_pair_dist: np.ndarray
    rejections: np.ndarray
    wall_time: float = 0.0
    noise: list | None = field(default=None, repr=False)

    def __getattr__(self, name):
        data = self.__dict__.get("data", {})
        if name in data:
            return data[name]
        raise AttributeError(name)

    def final_hash(self):
        import hashlib

        h = hashlib.sha256()
        for key in sorted(self.data):
            h.update(np.ascontiguousarray(self.data[key][:, -1]).tobytes())
        return h.hexdigest()


def _n_steps(T, dt):
    n = int(round(T / dt))
    if abs(n * dt - T) > 1e-9 * max(T, dt):
        raise ValueError(f"horizon {T} is not a multiple of the step {dt}")
    return n


def _simulate(stepper, names, state, params, trajectories, n_sub, output_dt, log_noise, residual):
    t0 = _time.perf_counter()
    B = state[0].shape[0]
    h = params.dt
    n_steps = _n_steps(params.T, h)
    out_dt = h if output_dt is None else float(output_dt)
    n_out = _n_steps(params.T, out_dt) + 1 if params.T > 0 else 1
    t_out = np.arange(n_out) * out_dt
    wiener = WienerCells(params.seed, trajectories, stepper.rows, stepper.model.d, h / n_sub,
                         zero=not params.noise, log=log_noise)
    runner = _Runner(stepper, params, wiener, n_sub, residual and params.noise)
    rec = {k: np.empty((B, n_out) + a.shape[1:]) for k, a in zip(names, state)}
    dist = np.empty((B, n_out))
    for k, a in zip(names, state):
        rec[k][:, 0] = a
    runner.min_dist = stepper.model.min_distance(state[0]) * np.ones(B)
    dist[:, 0] = runner.min_dist
    k_out = 1
    for j in range(1, n_steps + 1):
        t_prev, t_now = (j - 1) * h, j * h
        new = runner.step(state, t_prev)
        while k_out < n_out and t_out[k_out] <= t_now + 1e-9 * h:
            frac = (t_out[k_out] - t_prev) / h
            for key, a_old, a_new in zip(names, state, new):
                rec[key][:, k_out] = a_new if frac > 1 - 1e-9 else a_old + frac * (a_new - a_old)
            dist[:, k_out] = runner.min_dist
            k_out += 1
        state = new
    return Trajectory(
        t=t_out,
        data=rec,
        min_pair_dist=dist,
        rejections=runner.rejections,
        wall_time=_time.perf_counter() - t0,
        noise=wiener.log,
    )


def _batched(fn, B, first_path, threads, chunk=None):
    """Run ``fn(trajectory_ids)`` over the ensemble, optionally in threads, and merge."""
    ids = np.arange(first_path, first_path + B)
    if threads is None or threads <= 1 or B < 2:
        return fn(ids, slice(None))
    chunk = chunk or int(np.ceil(B / threads))
    parts = [(ids[i : i + chunk], slice(i, i + chunk)) for i in range(0, B, chunk)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        results = list(pool.map(lambda p: fn(*p), parts))
    first = results[0]
    return Trajectory(
        t=first.t,
        data={k: np.concatenate([r.data[k] for r in results]) for k in first.data},
        min_pair_dist=np.concatenate([r.min_pair_dist for r in results]),
        rejections=np.concatenate([r.rejections for r in results]),
        wall_time=sum(r.wall_time for r in results),
    )


def simulate_gle(initial: PhaseState, params: SimParams, model: Model, n_paths=None, first_path=0,
                 n_sub=1, output_dt=None, threads=None, log_noise=False, check_dt=True) -> Trajectory:
    """Integrate the GLE system for an ensemble of ``n_paths`` trajectories.

    ``n_sub`` is the number of Brownian grid cells per step (cell width
    ``dt / n_sub``); trajectories ``first_path .. first_path + n_paths - 1``
    draw from their own substreams, so any split of the ensemble gives the
    same paths.
    """
    if check_dt:
        params.check_gle_dt()
    x = _as_batch(initial.x)
    B = n_paths or x.shape[0]
    state = (_as_batch(initial.x, B), _as_batch(initial.v, B), _as_batch(initial.z, B))
    if not model.truncated:
        if np.any(model.min_distance(state[0]) <= 0):
            raise CoincidentParticles("initial positions are not pairwise distinct")
    stepper = GLEStepper(model, params)

    def run(ids, sl):
        return _simulate(stepper, ("x", "v", "z"), tuple(a[sl] for a in state), params, ids, n_sub,
                         output_dt, log_noise, True)

    return _batched(run, B, first_path, threads)


def simulate_overdamped(initial: OverdampedState, params: SimParams, model: Model, n_paths=None,
                        first_path=0, n_sub=1, output_dt=None, threads=None, log_noise=False) -> Trajectory:
    """Integrate the overdamped ``(q, f)`` system (Euler in ``q``, exact OU in ``f``)."""
    q = _as_batch(initial.q)
    B = n_paths or q.shape[0]
    state = (_as_batch(initial.q, B), _as_batch(initial.f, B))
    if not model.truncated:
        if np.any(model.min_distance(state[0]) <= 0):
            raise CoincidentParticles("initial positions are not pairwise distinct")
    stepper = OverdampedStepper(model, params)

    def run(ids, sl):
        return _simulate(stepper, ("q", "f"), tuple(a[sl] for a in state), params, ids, n_sub,
                         output_dt, log_noise, True)

    return _batched(run, B, first_path, threads)


def _single_step(stepper, state_arrays, params, noise_cells, w, xi=None):
    state = tuple(_as_batch(a) for a in state_arrays)
    dW = np.zeros((state[0].shape[0], 1, stepper.rows, stepper.model.d)) if noise_cells is None else noise_cells
    new, ok, bad = stepper.attempt(state, dW, w if noise_cells is not None else params.dt, xi)
    if stepper.model.truncated and np.any(bad):
        raise NonFinite("non-finite state", time=None)
    if not np.all(ok):
        raise StepRejected("step rejected; use simulate_* for adaptive halving")
    return new


def step_gle(state: PhaseState, params: SimParams, model: Model, noise=None, residual=None) -> PhaseState:
    """One step of size ``params.dt``.

    ``noise`` holds the Wiener increments of the step, shape ``(B, n, N+M, d)``
    for ``n`` equal cells (``None`` means no noise).  ``residual`` holds the
    standard normals ``(B, N+M, d)`` for the part of the exact ``(v, z)``
    transition not fixed by the increments; without it that part is zero.
    A single step has no retry; a rejected proposal raises
    :class:`StepRejected`.
    """
    stepper = GLEStepper(model, params)
    w = params.dt if noise is None else params.dt / np.shape(noise)[1]
    x, v, z = _single_step(stepper, state.arrays(), params, noise, w, residual)
    squeeze = np.ndim(state.x) == 2
    if squeeze:
        x, v, z = x[0], v[0], z[0]
    return PhaseState(x, v, z, state.t + params.dt)


def step_gle_truncated(state, params, model: Model, noise=None, R=None, residual=None):
    if R is not None:
        model = model.with_cutoff(R)
    if not model.truncated:
        raise ValueError("truncated step needs a cutoff")
    return step_gle(state, params, model, noise, residual)


def step_overdamped(state: OverdampedState, params: SimParams, model: Model, noise=None,
                    residual=None) -> OverdampedState:
    stepper = OverdampedStepper(model, params)
    w = params.dt if noise is None else params.dt / np.shape(noise)[1]
    q, f = _single_step(stepper, state.arrays(), params, noise, w, residual)
    if np.ndim(state.q) == 2:
        q, f = q[0], f[0]
    return OverdampedState(q, f, state.t + params.dt)


def step_overdamped_truncated(state, params, model: Model, noise=None, R=None, residual=None):
    if R is not None:
        model = model.with_cutoff(R)
    if not model.truncated:
        raise ValueError("truncated step needs a cutoff")
    return step_overdamped(state, params, model, noise, residual)


def gle_drift(model: Model, params: SimParams, x, v, z):
    """Drift of ``(x, v, z)``; used for Lipschitz certificates of the truncated system."""
    L = model.kernel.coupling()
    dv = (-params.gamma * v + model.forces(x) + np.einsum("nm,...md->...nd", L, z)) / params.m
    dz = -model.kernel.alpha[:, None] * z - np.einsum("nm,...nd->...md", L, v)
    return v, dv, dz


# ---------------------------------------------------------------------------
# Small-mass coupling and Duhamel reconstruction
# ---------------------------------------------------------------------------


def sup_distance(x_a, x_b):
    """``sup_t |x_a(t) - x_b(t)|`` per trajectory over the shared output grid."""
    diff = np.asarray(x_a) - np.asarray(x_b)
    return np.max(np.sqrt(np.sum(diff * diff, axis=(-2, -1))), axis=-1)


def coupled_small_mass_pair(model: Model, m, gamma, T, seed, x0, v0=None, z0=None, n_paths=1,
                            cell=None, output_dt=None, first_path=0, delta_min=1e-4,
                            max_halvings=20, threads=None, log_noise=False, overdamped=None):
    """Drive the GLE at mass ``m`` and the overdamped system with one Brownian path.

    Both legs read the Wiener increments of the same fine grid (cell width
    ``cell``, default ``m / 50``); the GLE takes steps of ``m / 50`` rounded to
    whole cells, the overdamped leg one cell per step.  Initial conditions are
    linked by :func:`lift_initial_condition`.  A precomputed overdamped
    trajectory may be passed in to reuse it across masses.

    Returns ``(gle_traj, overdamped_traj, sup_distance)``.
    """
    if not gamma > 0:
        raise GammaZero("small-mass comparison needs gamma > 0")
    cell = m / 50 if cell is None else float(cell)
    n_sub = max(1, int(round((m / 50) / cell)))
    x0 = np.asarray(x0, dtype=float).reshape(model.N, model.d)
    v0 = np.zeros_like(x0) if v0 is None else np.asarray(v0, dtype=float).reshape(model.N, model.d)
    z0 = np.zeros((model.kernel.n_modes, model.d)) if z0 is None else np.asarray(z0, dtype=float).reshape(-1, model.d)
    output_dt = n_sub * cell if output_dt is None else output_dt
    gp = SimParams(m=m, gamma=gamma, dt=n_sub * cell, T=T, seed=seed, delta_min=delta_min,
                   max_halvings=max_halvings)
    gle = simulate_gle(PhaseState(x0, v0, z0), gp, model, n_paths=n_paths, first_path=first_path,
                       n_sub=n_sub, output_dt=output_dt, threads=threads, log_noise=log_noise, check_dt=False)
    if overdamped is None:
        op = SimParams(m=m, gamma=gamma, dt=cell, T=T, seed=seed, delta_min=delta_min,
                       max_halvings=max_halvings)
        overdamped = simulate_overdamped(lift_initial_condition(x0, z0, model.kernel), op, model,
                                         n_paths=n_paths, first_path=first_path, n_sub=1,
                                         output_dt=output_dt, threads=threads, log_noise=log_noise)
    return gle, overdamped, sup_distance(gle.x, overdamped.q)


def duhamel_reconstruct_z(times, x, z0, lam, alpha, t, dW):
    """Rebuild ``z_{i,l}(t)`` from a position path by the variation-of-constants formula.

    ``times`` is the stored grid (length ``n``), ``x`` the positions of particle
    ``i`` on it with shape ``(n, d)``, ``dW`` the increments of ``W_{i,l}`` on
    each grid interval with shape ``(n - 1, d)``.  ``t`` must be a grid time.

        z(t) = e^{-a t}(z0 + lam x0) - lam x(t) + lam a int_0^t e^{-a(t-r)} x(r) dr
               + sqrt(2 a) int_0^t e^{-a(t-r)} dW(r)

    (integrating ``-lam int e^{-a(t-r)} v(r) dr`` by parts gives the plus sign
    in front of the position integral).

    The position integral uses the trapezoid rule; each Brownian increment is
    weighted by the cell average of the exponential.
    """
    times = np.asarray(times, dtype=float)
    x = np.asarray(x, dtype=float).reshape(len(times), -1)
    z0 = np.asarray(z0, dtype=float).reshape(-1)
    if t < -1e-12 or t > times[-1] * (1 + 1e-12) + 1e-12:
        raise HorizonExceeded(f"t={t} outside the stored horizon [0, {times[-1]}]")
    k = int(np.argmin(np.abs(times - t)))
    if abs(times[k] - t) > 1e-9 * max(1.0, abs(t)):
        raise ValueError("t must lie on the stored grid")
    if k == 0:
        return z0.copy()
    tk = times[: k + 1]
    decay = np.exp(-alpha * (times[k] - tk))
    integrand = decay[:, None] * x[: k + 1]
    integral = trapezoid(integrand, tk, axis=0)
    widths = np.diff(tk)
    avg = np.exp(-alpha * (times[k] - tk[1:])) * (-np.expm1(-alpha * widths)) / (alpha * widths)
    noise = np.sqrt(2 * alpha) * np.sum(avg[:, None] * np.asarray(dW, dtype=float).reshape(-1, x.shape[1])[:k], axis=0)
    return (
        np.exp(-alpha * times[k]) * (z0 + lam * x[0])
        - lam * x[k]
        + lam * alpha * integral
        + noise
    )
