"""Confining and singular pair potentials.

All evaluators are vectorised over leading axes: a point or separation is an
array of shape ``(..., d)``; values come back with shape ``(...)``, gradients
``(..., d)`` and Hessians ``(..., d, d)``.

Confining potentials are radial polynomials in ``s = |x|^2`` so that the
Hessian stays regular at the origin.  Singular potentials are radial functions
``g(|r|)`` whose derivatives are coded by hand for each kind.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .errors import CoincidentParticles, ZeroSeparation

#: separations below this (times the interparticle scale) raise ZeroSeparation
ZERO_TOL = 1e-300


# ---------------------------------------------------------------------------
# Confining potential U
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConfiningPotential:
    """Radial polynomial ``U(x) = sum_p c_p |x|^(2p) + shift``.

    ``coeffs[p-1]`` multiplies ``|x|^(2p)``.  For ``kind="quadratic"`` the
    single coefficient is the spring constant ``k`` and ``U = k|x|^2/2 + shift``.
    The growth exponent is ``lam = degree - 1``.  When the bound constants
    ``a1, a2, a3`` are left as ``None`` they are filled in from the
    coefficients.
    """

    kind: str = "quadratic"
    coeffs: tuple = (1.0,)
    shift: float | None = None
    a1: float | None = None
    a2: float | None = None
    a3: float | None = None

    def __post_init__(self):
        if self.kind not in ("quadratic", "even-polynomial"):
            raise ValueError(f"unknown confining kind {self.kind!r}")
        coeffs = tuple(float(c) for c in np.atleast_1d(self.coeffs))
        if self.kind == "quadratic":
            if len(coeffs) != 1:
                raise ValueError("quadratic potential takes one spring constant")
            if coeffs[0] <= 0:
                raise ValueError("spring constant must be positive")
        elif coeffs[-1] <= 0:
            raise ValueError("leading coefficient must be positive")
        object.__setattr__(self, "coeffs", coeffs)
        if self.shift is None:
            object.__setattr__(self, "shift", 1.0 - self._min_unshifted())
        a1, a2, a3 = self._default_constants()
        for name, val in (("a1", a1), ("a2", a2), ("a3", a3)):
            if getattr(self, name) is None:
                object.__setattr__(self, name, val)

    @classmethod
    def quadratic(cls, k=1.0, shift=1.0, **kw):
        return cls("quadratic", (k,), shift=shift, **kw)

    @property
    def _poly(self):
        # coefficients of s^p, p = 1..P
        if self.kind == "quadratic":
            return (0.5 * self.coeffs[0],)
        return self.coeffs

    @property
    def lam(self) -> float:
        return 2.0 * len(self._poly) - 1.0

    @property
    def degree(self) -> int:
        return 2 * len(self._poly)

    def _radial(self, r):
        r = np.asarray(r, dtype=float)
        return sum(c * r ** (2 * p) for p, c in enumerate(self._poly, start=1))

    def _radial_d(self, r):
        return sum(2 * p * c * r ** (2 * p - 1) for p, c in enumerate(self._poly, start=1))

    def _min_unshifted(self):
        r = np.concatenate([[0.0], np.logspace(-4, 3, 4001)])
        return float(np.min(self._radial(r)))

    def _default_constants(self):
        if self.kind == "quadratic":
            k = self.coeffs[0]
            return max(k / 2, abs(self.shift), k), k, 0.0
        lam = self.lam
        r = np.concatenate([[0.0], np.logspace(-4, 4, 8001)])
        u = np.abs(self._radial(r) + self.shift)
        du = np.abs(self._radial_d(r))
        hess = np.maximum(np.abs(self._radial_dd(r)), np.abs(self._radial_d_over_r(r)))
        a1 = max(
            np.max(u / (1 + r ** (lam + 1))),
            np.max(du / (1 + r**lam)),
            np.max(hess / (1 + r ** (lam - 1))),
        )
        P = len(self._poly)
        a2 = P * self._poly[-1]  # half of the leading coefficient of <grad U, x>
        xdu = r * du * np.sign(self._radial_d(r))
        a3 = max(0.0, float(np.max(a2 * r ** (lam + 1) - xdu)))
        return float(a1) * (1 + 1e-9), float(a2), a3 * (1 + 1e-9)

    def _radial_dd(self, r):
        return sum(
            2 * p * (2 * p - 1) * c * r ** (2 * p - 2) for p, c in enumerate(self._poly, start=1)
        )

    def _radial_d_over_r(self, r):
        return sum(2 * p * c * r ** (2 * p - 2) for p, c in enumerate(self._poly, start=1))

    # -- evaluators ---------------------------------------------------------

    def value(self, x):
        s = np.sum(np.square(x), axis=-1)
        return sum(c * s**p for p, c in enumerate(self._poly, start=1)) + self.shift

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        s = np.sum(x * x, axis=-1)
        w = sum(2 * p * c * s ** (p - 1) for p, c in enumerate(self._poly, start=1))
        return np.asarray(w)[..., None] * x

    def hess(self, x):
        x = np.asarray(x, dtype=float)
        d = x.shape[-1]
        s = np.sum(x * x, axis=-1)
        w = sum(2 * p * c * s ** (p - 1) for p, c in enumerate(self._poly, start=1))
        w2 = sum(
            4 * p * (p - 1) * c * s ** (p - 2) if p > 1 else 0.0
            for p, c in enumerate(self._poly, start=1)
        )
        eye = np.eye(d)
        return np.asarray(w)[..., None, None] * eye + np.asarray(w2)[..., None, None] * (
            x[..., :, None] * x[..., None, :]
        )


def u_value(pot: ConfiningPotential, x):
    return pot.value(x)


def u_grad(pot: ConfiningPotential, x):
    return pot.grad(x)


def u_hess(pot: ConfiningPotential, x):
    return pot.hess(x)


# ---------------------------------------------------------------------------
# Singular potential G
# ---------------------------------------------------------------------------

SINGULAR_KINDS = ("lennard-jones", "coulomb", "riesz", "log")


@dataclass(frozen=True)
class SingularPotential:
    """Radial repulsive potential ``G(r) = strength * g(|r|) + shift``.

    kinds
        ``riesz``          g = |r|^(1 - beta1), beta1 > 1
        ``log``            g = -log|r|, beta1 = 1
        ``coulomb``        the Newtonian kernel of ``dim``: |r|^(2-d) for d >= 3,
                           -log|r| for d = 2, and |r|^-1 for d = 1
        ``lennard-jones``  g = |r|^-12 - 2|r|^-6, beta1 = 13

    The structure constants ``a4, a5, a6, beta2`` describe
    ``|grad G(r) + a4 r/|r|^(beta1+1)| <= a5 |r|^-beta2 + a6``.  Defaults are
    the exact values for each kind.
    """

    kind: str = "coulomb"
    beta1: float | None = None
    strength: float = 1.0
    dim: int | None = None
    shift: float = 0.0
    beta2: float | None = None
    a4: float | None = None
    a5: float | None = None
    a6: float | None = None
    a1: float | None = None
    scale: float = 1.0
    _family: str = field(default="", init=False, repr=False)
    _power: float = field(default=0.0, init=False, repr=False)

    def __post_init__(self):
        if self.kind not in SINGULAR_KINDS:
            raise ValueError(f"unknown singular kind {self.kind!r}")
        if self.strength <= 0:
            raise ValueError("strength must be positive (repulsive)")
        s = float(self.strength)
        kind = self.kind
        beta1 = self.beta1
        if kind == "coulomb":
            if self.dim is None:
                raise ValueError("coulomb needs dim")
            if self.dim == 2:
                family, beta1 = "log", 1.0
            else:
                family = "riesz"
                beta1 = 2.0 if self.dim == 1 else float(self.dim - 1)
        elif kind == "log":
            family, beta1 = "log", 1.0
        elif kind == "lennard-jones":
            family, beta1 = "lj", 13.0
        else:
            family = "riesz"
            if beta1 is None or beta1 <= 1:
                raise ValueError("riesz kind needs beta1 > 1")
        beta1 = float(beta1)
        object.__setattr__(self, "beta1", beta1)
        object.__setattr__(self, "_family", family)
        power = beta1 - 1.0
        object.__setattr__(self, "_power", power)
        if family == "riesz":
            defaults = dict(beta2=0.0, a4=s * power, a5=0.0, a6=0.0, a1=s * max(1.0, power * beta1))
        elif family == "log":
            defaults = dict(beta2=0.0, a4=s, a5=0.0, a6=0.0, a1=s)
        else:
            defaults = dict(beta2=7.0, a4=12.0 * s, a5=12.0 * s, a6=0.0, a1=240.0 * s)
        defaults["a1"] += abs(self.shift)
        for name, val in defaults.items():
            if getattr(self, name) is None:
                object.__setattr__(self, name, float(val))
        if not self.beta2 < self.beta1:
            raise ValueError("beta2 must be smaller than beta1")

    # -- radial profile -----------------------------------------------------

    def _g(self, rho):
        s = self.strength
        if self._family == "riesz":
            return s * rho ** (-self._power)
        if self._family == "log":
            return -s * np.log(rho)
        return s * (rho**-12 - 2.0 * rho**-6)

    def _dg(self, rho):
        s = self.strength
        if self._family == "riesz":
            return -s * self._power * rho ** (-self._power - 1)
        if self._family == "log":
            return -s / rho
        return s * (-12.0 * rho**-13 + 12.0 * rho**-7)

    def _ddg(self, rho):
        s = self.strength
        if self._family == "riesz":
            p = self._power
            return s * p * (p + 1) * rho ** (-p - 2)
        if self._family == "log":
            return s / rho**2
        return s * (156.0 * rho**-14 - 84.0 * rho**-8)

    def _norm(self, r):
        r = np.asarray(r, dtype=float)
        rho = np.sqrt(np.sum(r * r, axis=-1))
        if np.any(rho < ZERO_TOL * self.scale):
            raise ZeroSeparation("singular potential evaluated at zero separation")
        return r, rho

    # -- evaluators ---------------------------------------------------------

    def value(self, r):
        _, rho = self._norm(r)
        return self._g(rho) + self.shift

    def grad(self, r):
        r, rho = self._norm(r)
        return (self._dg(rho) / rho)[..., None] * r

    def hess(self, r):
        r, rho = self._norm(r)
        d = r.shape[-1]
        u = r / rho[..., None]
        uu = u[..., :, None] * u[..., None, :]
        dg_r = self._dg(rho) / rho
        return self._ddg(rho)[..., None, None] * uu + dg_r[..., None, None] * (np.eye(d) - uu)

    def grad_radial(self, rho):
        """``g'(rho)`` as a plain radial derivative (no direction)."""
        return self._dg(np.asarray(rho, dtype=float))


def g_value(pot: SingularPotential, r):
    return pot.value(r)


def g_grad(pot: SingularPotential, r):
    return pot.grad(r)


def g_hess(pot: SingularPotential, r):
    return pot.hess(r)


# ---------------------------------------------------------------------------
# Structural checks
# ---------------------------------------------------------------------------


def structure_residual(pot: SingularPotential, r, a4=None, beta1=None):
    """``|grad G(r) + a4 r/|r|^(beta1+1)|`` at each separation."""
    a4 = pot.a4 if a4 is None else a4
    beta1 = pot.beta1 if beta1 is None else beta1
    r = np.asarray(r, dtype=float)
    grad = pot.grad(r)
    rho = np.linalg.norm(r, axis=-1)
    resid = grad + a4 * r / rho[..., None] ** (beta1 + 1)
    return np.linalg.norm(resid, axis=-1), np.linalg.norm(grad, axis=-1)


def verify_structure(pot: SingularPotential, samples, rtol=1e-9) -> dict:
    """Check ``|grad G + a4 r/|r|^(b1+1)| <= a5 |r|^-b2 + a6`` on ``samples``.

    Returns a JSON-ready dict ``{kind, grid, worst_margin, violations}``; the
    margin is ``bound - residual`` so negative margins are violations.  A
    rounding allowance of ``rtol * (|grad G| + bound)`` is granted.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    resid, gnorm = structure_residual(pot, samples)
    rho = np.linalg.norm(samples, axis=-1)
    bound = pot.a5 * rho ** (-pot.beta2) + pot.a6
    margin = bound - resid
    allowance = rtol * (gnorm + bound)
    bad = np.nonzero(margin < -allowance)[0]
    return {
        "kind": pot.kind,
        "beta1": pot.beta1,
        "beta2": pot.beta2,
        "constants": {"a4": pot.a4, "a5": pot.a5, "a6": pot.a6},
        "grid": {"n": int(len(rho)), "rmin": float(rho.min()), "rmax": float(rho.max())},
        "worst_margin": float(np.min(margin)),
        "violations": [
            {"r": samples[k].tolist(), "residual": float(resid[k]), "bound": float(bound[k])}
            for k in bad
        ],
    }


def fit_structure_constants(pot: SingularPotential, beta1, beta2, a4, radii=None, d=1):
    """Smallest ``(a5, a6)`` making the structure bound hold on a radial grid.

    Also reports the log-log slope of the residual at the small end of the
    grid; a slope steeper than ``-beta2`` means no finite ``a5`` can work as
    ``|r| -> 0`` and the fit is flagged infeasible.
    """
    if radii is None:
        radii = np.logspace(-3, 3, 601)
    radii = np.asarray(radii, dtype=float)
    r = np.zeros((len(radii), d))
    r[:, 0] = radii
    resid, gnorm = structure_residual(pot, r, a4=a4, beta1=beta1)
    # near the singularity the residual is a difference of huge terms; drop what rounding can explain
    noise = 8 * np.finfo(float).eps * (gnorm + a4 * radii ** (-beta1))
    resid = np.where(resid > 100 * noise, resid, 0.0)
    small = radii <= 1.0
    a5 = float(np.max(resid[small] * radii[small] ** beta2)) if small.any() else 0.0
    a6 = float(max(0.0, np.max(resid - a5 * radii ** (-beta2))))
    live = np.nonzero(resid > 0)[0][:10]
    if len(live) < 3:
        slope, feasible = float("nan"), True
    else:
        slope = float(np.polyfit(np.log(radii[live]), np.log(resid[live]), 1)[0])
        feasible = slope >= -beta2 - 1e-6
    return {"a5": a5, "a6": a6, "small_r_slope": slope, "feasible": feasible}


# ---------------------------------------------------------------------------
# Pair sums
# ---------------------------------------------------------------------------


def pair_indices(n):
    """Index arrays ``(I, J)`` over unordered pairs ``i < j``."""
    pairs = np.array(list(combinations(range(n), 2)), dtype=int).reshape(-1, 2)
    return pairs[:, 0], pairs[:, 1]


def pair_incidence(n):
    """Signed ``(n, n_pairs)`` matrix scattering a pair quantity onto particles."""
    I, J = pair_indices(n)
    inc = np.zeros((n, len(I)))
    inc[I, np.arange(len(I))] = 1.0
    inc[J, np.arange(len(I))] = -1.0
    return inc


def min_pair_distance(x):
    """Smallest pairwise distance over the particle axis (``x`` is ``(..., N, d)``)."""
    x = np.asarray(x, dtype=float)
    n = x.shape[-2]
    if n < 2:
        return np.full(x.shape[:-2], np.inf)
    I, J = pair_indices(n)
    return np.min(np.linalg.norm(x[..., I, :] - x[..., J, :], axis=-1), axis=-1)


def pair_force_sum(pot: SingularPotential, positions, i):
    """``sum_{j != i} grad G(x_i - x_j)`` for one particle."""
    x = np.asarray(positions, dtype=float)
    others = np.delete(np.arange(x.shape[0]), i)
    sep = x[i] - x[others]
    if np.any(np.linalg.norm(sep, axis=-1) == 0):
        raise CoincidentParticles(f"particle {i} coincides with another particle")
    return pot.grad(sep).sum(axis=0)


def pair_gradients(pot: SingularPotential, x):
    """``sum_{j != i} grad G(x_i - x_j)`` for every ``i``; ``x`` is ``(..., N, d)``."""
    x = np.asarray(x, dtype=float)
    n = x.shape[-2]
    if n < 2:
        return np.zeros_like(x)
    I, J = pair_indices(n)
    sep = x[..., I, :] - x[..., J, :]
    if np.any(np.sum(sep * sep, axis=-1) == 0):
        raise CoincidentParticles("two particles coincide")
    grad = pot.grad(sep)
    return np.einsum("np,...pd->...nd", pair_incidence(n), grad)


def interaction_energy(pot: SingularPotential, x):
    """``sum_{i<j} G(x_i - x_j)``."""
    x = np.asarray(x, dtype=float)
    n = x.shape[-2]
    if n < 2:
        return np.zeros(x.shape[:-2])
    I, J = pair_indices(n)
    sep = x[..., I, :] - x[..., J, :]
    if np.any(np.sum(sep * sep, axis=-1) == 0):
        raise CoincidentParticles("two particles coincide")
    return np.sum(pot.value(sep), axis=-1)


def confining_energy(pot: ConfiningPotential, x):
    return np.sum(pot.value(x), axis=-1)
