import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from singular_gle.errors import CoincidentParticles, ZeroSeparation
from singular_gle.potentials import (
    ConfiningPotential,
    SingularPotential,
    confining_energy,
    fit_structure_constants,
    g_grad,
    g_hess,
    g_value,
    interaction_energy,
    pair_force_sum,
    u_grad,
    u_hess,
    u_value,
    verify_structure,
)

KINDS = [
    dict(kind="coulomb", dim=1),
    dict(kind="coulomb", dim=2),
    dict(kind="coulomb", dim=3),
    dict(kind="riesz", beta1=2.0),
    dict(kind="riesz", beta1=3.5),
    dict(kind="log"),
    dict(kind="lennard-jones"),
]


def quad():
    return ConfiningPotential.quadratic(1.0, 1.0)


# -- confining potential ------------------------------------------------------


def test_u_value_examples():
    U = quad()
    assert u_value(U, np.array([0.0])) == pytest.approx(1.0)
    assert u_value(U, np.array([2.0])) == pytest.approx(3.0)
    val = u_value(U, np.array([10.0]))
    assert val == pytest.approx(51.0)
    assert val <= 1.0 * (1 + 10.0**2)


def test_u_grad_hess_examples():
    U = quad()
    x = np.array([3.0])
    assert u_grad(U, x) == pytest.approx([3.0])
    assert np.allclose(u_hess(U, x), [[1.0]])
    assert float(u_grad(U, x) @ x) >= 1.0 * 9 - 0.0


def test_lambda_matches_degree():
    assert quad().lam == 1
    quartic = ConfiningPotential("even-polynomial", (0.5, 0.25))
    assert quartic.degree == 4
    assert quartic.lam == 3
    assert quartic.degree == quartic.lam + 1


@pytest.mark.parametrize("U", [quad(), ConfiningPotential("even-polynomial", (-1.0, 0.25)),
                               ConfiningPotential("even-polynomial", (0.3, 0.0, 0.1))])
def test_u_at_least_one_and_bounds(U):
    r = np.logspace(-3, 3, 400)
    rng = np.random.default_rng(0)
    dirs = rng.standard_normal((400, 3))
    x = r[:, None] * dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    val = U.value(x)
    assert np.all(val >= 1 - 1e-12)
    lam = U.lam
    assert np.all(np.abs(val) <= U.a1 * (1 + r ** (lam + 1)) * (1 + 1e-12))
    assert np.all(np.linalg.norm(U.grad(x), axis=-1) <= U.a1 * (1 + r**lam) * (1 + 1e-12))
    assert np.all(np.einsum("ij,ij->i", U.grad(x), x) >= U.a2 * r ** (lam + 1) - U.a3 - 1e-9 * r ** (lam + 1))


@pytest.mark.parametrize("U", [quad(), ConfiningPotential("even-polynomial", (-1.0, 0.25))])
def test_u_finite_differences(U):
    rng = np.random.default_rng(1)
    h = 1e-5
    for x in rng.normal(scale=2.0, size=(100, 3)):
        num = np.array([(U.value(x + h * e) - U.value(x - h * e)) / (2 * h) for e in np.eye(3)])
        g = U.grad(x)
        assert np.linalg.norm(num - g) <= 1e-5 * max(np.linalg.norm(g), 1.0)
        numh = np.array([(U.grad(x + h * e) - U.grad(x - h * e)) / (2 * h) for e in np.eye(3)])
        H = U.hess(x)
        assert np.linalg.norm(numh - H) <= 1e-3 * max(np.linalg.norm(H), 1.0)


# -- singular potential --------------------------------------------------------


def test_g_value_examples():
    assert g_value(SingularPotential("coulomb", dim=3), np.array([1.0, 0, 0])) == pytest.approx(1.0)
    assert g_value(SingularPotential("log"), np.array([1.0, 0.0])) == pytest.approx(0.0)
    assert g_value(SingularPotential("riesz", beta1=2.0), np.array([0.5])) == pytest.approx(2.0)


def test_g_grad_examples():
    assert g_grad(SingularPotential("coulomb", dim=3), np.array([1.0, 0, 0])) == pytest.approx([-1.0, 0, 0])
    assert g_grad(SingularPotential("coulomb", dim=2), np.array([0.0, 2.0])) == pytest.approx([0.0, -0.5])


def test_zero_separation():
    with pytest.raises(ZeroSeparation):
        g_value(SingularPotential("log"), np.zeros(2))
    with pytest.raises(ZeroSeparation):
        g_grad(SingularPotential("coulomb", dim=3), np.zeros(3))


@pytest.mark.parametrize("spec", KINDS)
def test_g_blows_up(spec):
    G = SingularPotential(**spec)
    d = spec.get("dim", 2)
    small = G.value(np.r_[1e-6, np.zeros(d - 1)])
    unit = G.value(np.r_[1.0, np.zeros(d - 1)])
    assert small - unit >= 10.0
    assert G.beta2 < G.beta1


@pytest.mark.parametrize("spec", KINDS)
def test_g_finite_differences(spec):
    G = SingularPotential(**spec)
    rng = np.random.default_rng(2)
    for rho in (0.5, 1.0, 2.0, *rng.uniform(0.7, 3.0, 97)):
        e = rng.standard_normal(3)
        r = rho * e / np.linalg.norm(e)
        h = 1e-5 * rho
        num = np.array([(G.value(r + h * b) - G.value(r - h * b)) / (2 * h) for b in np.eye(3)])
        g = G.grad(r)
        # the Lennard-Jones force vanishes at |r| = 1, so use a floor there
        assert np.linalg.norm(num - g) <= 1e-5 * max(np.linalg.norm(g), 1e-2)
        numh = np.array([(G.grad(r + h * b) - G.grad(r - h * b)) / (2 * h) for b in np.eye(3)])
        H = G.hess(r)
        assert np.linalg.norm(numh - H) <= 1e-3 * np.linalg.norm(H) + 1e-9


@pytest.mark.parametrize("spec", KINDS)
def test_rotation_symmetry(spec):
    G = SingularPotential(**spec)
    rng = np.random.default_rng(3)
    Q = Rotation.random(20, random_state=4).as_matrix()
    r = rng.uniform(0.8, 2.0, (20, 1)) * rng.standard_normal((20, 3))
    rr = np.einsum("kij,kj->ki", Q, r)
    assert np.allclose(G.value(rr), G.value(r), atol=1e-12, rtol=0)
    assert np.allclose(G.grad(rr), np.einsum("kij,kj->ki", Q, G.grad(r)), atol=1e-12, rtol=0)


@pytest.mark.parametrize("spec", KINDS)
def test_g_bounds_on_log_grid(spec):
    G = SingularPotential(**spec)
    r = np.logspace(-3, 3, 601)[:, None]
    b1 = G.beta1
    assert np.all(np.abs(G.value(r)) <= G.a1 * (1 + r[:, 0] + r[:, 0] ** -b1) * (1 + 1e-12))
    assert np.all(np.abs(G.grad(r)[:, 0]) <= G.a1 * (1 + r[:, 0] ** -b1) * (1 + 1e-12))


def test_verify_structure_exact_cases():
    rad = np.logspace(-3, 3, 200)[:, None] * np.array([[0.6, 0.8, 0.0]])
    rep = verify_structure(SingularPotential("coulomb", dim=3), rad)
    assert rep["violations"] == []
    assert rep["worst_margin"] == pytest.approx(0.0, abs=1e-9)
    rep = verify_structure(SingularPotential("log"), rad[:, :2])
    assert rep["violations"] == []
    assert rep["worst_margin"] == pytest.approx(0.0, abs=1e-9)


def test_lennard_jones_certified_constants():
    G = SingularPotential("lennard-jones")
    r = np.logspace(-3, 3, 2000)[:, None]
    rep = verify_structure(G, r)
    assert rep["violations"] == []
    assert (G.beta1, G.beta2) == (13.0, 7.0)
    fit = fit_structure_constants(G, G.beta1, G.beta2, G.a4, radii=np.logspace(-3, 3, 2000))
    assert fit["feasible"]
    assert fit["a5"] == pytest.approx(G.a5, rel=1e-3)


def test_lennard_jones_with_twelve_is_infeasible():
    # with beta1 = 12 the leading residual grows like |r|^-13 and no finite a5 can absorb it
    G = SingularPotential("lennard-jones")
    fit = fit_structure_constants(G, 12.0, 6.0, 12.0, radii=np.logspace(-3, 3, 2000))
    assert not fit["feasible"]


def test_pair_force_sum_examples():
    G = SingularPotential("coulomb", dim=3)
    x = np.array([[1.0, 0, 0], [0.0, 0, 0]])
    f0 = pair_force_sum(G, x, 0)
    f1 = pair_force_sum(G, x, 1)
    assert f0 == pytest.approx([-1.0, 0, 0])
    assert f1 == pytest.approx([1.0, 0, 0])
    assert np.allclose(f0 + f1, 0)


def test_pair_force_sum_brute_force():
    G = SingularPotential("coulomb", dim=1)
    x = np.array([[-1.3], [0.2], [2.0]])
    for i in range(3):
        brute = sum(G.grad(x[i] - x[j]) for j in range(3) if j != i)
        assert pair_force_sum(G, x, i) == pytest.approx(brute)
    assert np.allclose(sum(pair_force_sum(G, x, i) for i in range(3)), 0, atol=1e-12)


def test_coincident_particles():
    with pytest.raises(CoincidentParticles):
        pair_force_sum(SingularPotential("log"), np.array([[1.0, 0], [1.0, 0]]), 0)


@pytest.mark.parametrize("spec", KINDS)
def test_total_energy_nonnegative(spec):
    G = SingularPotential(**spec)
    U = quad()
    rng = np.random.default_rng(5)
    x = rng.normal(scale=3.0, size=(500, 4, 2))
    total = confining_energy(U, x) + interaction_energy(G, x)
    assert np.all(total >= 0)
