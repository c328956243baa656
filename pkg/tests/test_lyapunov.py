import numpy as np
import pytest
from helpers import dynkin_check

from singular_gle import (
    ConfiningPotential,
    KernelSpec,
    Model,
    OverdampedState,
    PhaseState,
    SingularPotential,
)
from singular_gle.errors import (
    CoincidentParticles,
    DimensionMismatch,
    NonPositiveRadicand,
    RegimeMismatch,
    WrongBetaRegime,
)
from singular_gle.lyapunov import (
    GeneratorInput,
    LyapunovParams,
    candidate_parts,
    drift_scan,
    drift_search,
    far_field_samples,
    gamma1_eval,
    gamma2_eval,
    generator_apply,
    hamiltonian_derivatives,
    hamiltonian_N,
    lh_closed_form,
    q_radicand,
    stratified_samples,
    v1_eval,
    vN1_eval,
    vN2_eval,
    xv_derivatives,
)

U = ConfiningPotential.quadratic(1.0, 1.0)


def model(N=2, d=1, G=None, modes=((1.0, 1.0),)):
    G = G if G is not None else SingularPotential("riesz", beta1=3.0)
    return Model(U, G, KernelSpec.uniform(N, list(modes)), d=d)


def random_states(M, n, rng, m=1.0):
    x = rng.normal(scale=2.0, size=(n, M.N, M.d))
    v = rng.normal(size=(n, M.N, M.d))
    z = rng.normal(size=(n, M.kernel.n_modes, M.d))
    return PhaseState(x, v, z)


# -- Hamiltonian and generator -----------------------------------------------------


def test_hamiltonian_example():
    s = PhaseState(np.array([[0.0], [2.0]]), np.zeros((2, 1)), np.zeros((2, 1)))
    assert hamiltonian_N(s, 1.0, model()) == pytest.approx(4.25)


def test_generator_of_hamiltonian_example():
    # -|v|^2 + gamma N d / m + d sum(alpha) = -2 + 2 + 2
    M = model()
    s = PhaseState(np.array([[-1.0], [1.0]]), np.ones((2, 1)), np.zeros((2, 1)))
    val = generator_apply(hamiltonian_derivatives(s, 1.0, M), s, 1.0, 1.0, M)
    assert val == pytest.approx(2.0)
    assert lh_closed_form(s, 1.0, 1.0, M) == pytest.approx(2.0)


@pytest.mark.parametrize("N,d", [(2, 1), (3, 2), (4, 3)])
def test_generator_matches_closed_form(N, d):
    rng = np.random.default_rng(N * 10 + d)
    M = model(N, d, SingularPotential("coulomb", dim=d), modes=((1.0, 1.0), (0.5, 2.0)))
    s = random_states(M, 1000, rng)
    for m, gamma in ((1.0, 1.0), (0.3, 2.0), (2.0, 0.0)):
        a = generator_apply(hamiltonian_derivatives(s, m, M), s, m, gamma, M)
        b = lh_closed_form(s, m, gamma, M)
        assert np.all(np.abs(a - b) <= 1e-10 * np.maximum(np.abs(b), 1.0))


def test_generator_kills_constants_and_is_linear():
    rng = np.random.default_rng(1)
    M = model(3, 2, SingularPotential("log"))
    s = random_states(M, 50, rng)
    zero = GeneratorInput(np.zeros_like(s.x), np.zeros_like(s.x), np.zeros_like(s.z),
                          np.zeros((50, 3)), np.zeros((50, 3)))
    assert np.all(generator_apply(zero, s, 1.0, 1.0, M) == 0)
    a, b = hamiltonian_derivatives(s, 1.0, M), xv_derivatives(s, M)
    lhs = generator_apply(a.scale(2.0) + b.scale(-0.5), s, 1.0, 1.0, M)
    rhs = 2 * generator_apply(a, s, 1.0, 1.0, M) - 0.5 * generator_apply(b, s, 1.0, 1.0, M)
    assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-12)


def test_generator_of_xv_term_by_term():
    rng = np.random.default_rng(2)
    M = model(3, 2, SingularPotential("riesz", beta1=2.5), modes=((1.0, 1.0), (2.0, 0.5)))
    m, gamma = 0.7, 1.3
    s = random_states(M, 1, rng)
    x, v, z = s.x[0], s.v[0], s.z[0]
    got = generator_apply(xv_derivatives(s, M), s, m, gamma, M)[0]
    # |v|^2 + (1/m) sum_i <x_i, -gamma v_i - grad U(x_i) - sum_j grad G(x_i - x_j) + sum_l lam z_il>
    expect = np.sum(v * v)
    for i in range(3):
        force = -gamma * v[i] - M.U.grad(x[i])
        force -= sum(M.G.grad(x[i] - x[j]) for j in range(3) if j != i)
        force += sum(lam * z[M.kernel.first_mode[i] + l] for l, (lam, _) in enumerate(M.kernel.modes[i]))
        expect += x[i] @ force / m
    assert got == pytest.approx(expect, rel=1e-12)


def test_generator_errors():
    M = model()
    s = PhaseState(np.array([[1.0], [1.0]]), np.zeros((2, 1)), np.zeros((2, 1)))
    with pytest.raises(CoincidentParticles):
        generator_apply(hamiltonian_derivatives(PhaseState(np.array([[0.0], [1.0]]), s.v, s.z), 1.0, M), s,
                        1.0, 1.0, M)
    ok = PhaseState(np.array([[0.0], [1.0]]), s.v, s.z)
    bad = hamiltonian_derivatives(ok, 1.0, M)
    bad.grad_z = np.zeros((3, 1))
    with pytest.raises(DimensionMismatch):
        generator_apply(bad, ok, 1.0, 1.0, M)


@pytest.mark.parametrize("name", ["H", "xv"])
def test_dynkin_short_time(name):
    est, exact, se, bias = dynkin_check(name, n_paths=20_000)
    assert abs(est - exact) <= 4 * se + bias


# -- Lyapunov candidates ---------------------------------------------------------------


def _finite_difference(f, s, field, h=1e-6):
    a = getattr(s, field)
    out = np.zeros_like(a)
    for idx in np.ndindex(a.shape):
        ap, am = a.copy(), a.copy()
        ap[idx] += h
        am[idx] -= h
        out[idx] = (f(PhaseState(**{**s.__dict__, field: ap})) - f(PhaseState(**{**s.__dict__, field: am}))) / (2 * h)
    return out


def _fd_laplacian(f, s, field, h=1e-4):
    a = getattr(s, field)
    f0 = f(s)
    out = np.zeros(a.shape[0])
    for idx in np.ndindex(a.shape):
        ap, am = a.copy(), a.copy()
        ap[idx] += h
        am[idx] -= h
        out[idx[0]] += (f(PhaseState(**{**s.__dict__, field: ap})) - 2 * f0
                        + f(PhaseState(**{**s.__dict__, field: am}))) / h**2
    return out


@pytest.mark.parametrize("name", ["H", "VN1", "VN2"])
def test_candidate_derivatives(name):
    rng = np.random.default_rng(0)
    k = KernelSpec((((1.0, 1.0), (0.5, 2.0)), ((1.0, 1.5),), ((1.0, 1.0),)))
    M = Model(U, SingularPotential("coulomb", dim=3), k, d=3)
    m, P = 0.7, LyapunovParams(0.1, 3.0)
    s = PhaseState(rng.normal(size=(3, 3)), rng.normal(size=(3, 3)), rng.normal(size=(4, 3)))
    _, der = candidate_parts(name, s, m, M, P)

    def f(state):
        return float(candidate_parts(name, state, m, M, P)[0])

    for field, g in (("x", der.grad_x), ("v", der.grad_v), ("z", der.grad_z)):
        num = _finite_difference(f, s, field)
        assert np.max(np.abs(num - g)) <= 1e-5 * max(np.max(np.abs(g)), 1.0)
    for field, lap in (("v", der.lap_v), ("z", der.lap_z)):
        num = _fd_laplacian(f, s, field)
        assert np.allclose(num, lap, rtol=1e-3, atol=1e-3)


def test_vN1_reduces_to_H_at_rest():
    rng = np.random.default_rng(3)
    M = model(3, 2, SingularPotential("log"))
    s = random_states(M, 100, rng)
    s = PhaseState(s.x, np.zeros_like(s.v), s.z)
    P = LyapunovParams(0.3, 2.0)
    assert np.allclose(vN1_eval(s, 1.0, M, P), hamiltonian_N(s, 1.0, M), rtol=0, atol=1e-12)


def test_vN2_with_zero_epsilon_is_H():
    rng = np.random.default_rng(4)
    M = model(3, 2, SingularPotential("log"))
    s = random_states(M, 100, rng)
    P = LyapunovParams(0.0, 5.0)
    assert np.allclose(vN2_eval(s, 1.0, M, P), hamiltonian_N(s, 1.0, M), rtol=0, atol=1e-12)


def test_vN1_norm_equivalence():
    rng = np.random.default_rng(5)
    M = model(3, 2, SingularPotential("coulomb", dim=2))
    s = stratified_samples(M, 1.0, 1000, rng)
    P = LyapunovParams(0.01, 2.0)
    V, H = vN1_eval(s, 1.0, M, P), hamiltonian_N(s, 1.0, M)
    assert np.all(V >= 0.5 * H - 1.0)
    assert np.all(V <= 1.5 * H + 1.0)


def test_single_particle_candidate():
    k = KernelSpec.uniform(1, [(1.0, 1.0)])
    M = Model(U, SingularPotential("coulomb", dim=3), k, d=3)
    s = PhaseState(np.array([[1.0, 2.0, 2.0]]), np.array([[0.5, 0.0, -1.0]]), np.zeros((1, 3)))
    P = LyapunovParams(0.1, 2.0)
    x, v = s.x[0], s.v[0]
    H = hamiltonian_N(s, 1.0, M) + 1 / 3.0  # the fixed partner at the origin adds G(x)
    expect = H + 0.1 * (x @ v) - 0.1 * (x @ v) / 3.0
    assert v1_eval(s, 1.0, M, P) == pytest.approx(expect)


def test_radicand_must_be_positive():
    # a negative shift in U is a misconfiguration the radicand exposes
    M = Model(ConfiningPotential.quadratic(1.0, shift=-10.0), SingularPotential("log"),
              KernelSpec.uniform(2, [(1.0, 1.0)]), d=1)
    s = PhaseState(np.array([[-0.5], [0.5]]), np.zeros((2, 1)), np.zeros((2, 1)))
    with pytest.raises(NonPositiveRadicand):
        q_radicand(s, 1.0, M, 2.0)
    assert q_radicand(s, 1.0, model(G=SingularPotential("log")), 2.0) > 0


# -- overdamped energies ------------------------------------------------------------


def test_gamma1_example():
    M = model(G=SingularPotential("riesz", beta1=2.0))
    s = OverdampedState(np.array([[0.0], [1.0]]), np.zeros((2, 1)))
    assert gamma1_eval(s, 1.0, M, LyapunovParams(0.1, 2.0)) == pytest.approx(0.6)
    # epsilon = 0 leaves the quadratic form
    s = OverdampedState(np.array([[0.0], [3.0]]), np.array([[2.0], [0.0]]))
    assert gamma1_eval(s, 1.0, M, LyapunovParams(0.0, 2.0)) == pytest.approx(4.5 + 2.0)


def test_gamma2_log_term():
    M = model(G=SingularPotential("log"))
    s = OverdampedState(np.array([[0.0], [1.0]]), np.zeros((2, 1)))
    assert gamma2_eval(s, 1.0, M, LyapunovParams(0.5, 2.0)) == pytest.approx(0.5)
    s = OverdampedState(np.array([[0.0], [np.e]]), np.zeros((2, 1)))
    assert gamma2_eval(s, 1.0, M, LyapunovParams(0.5, 2.0)) == pytest.approx(np.e**2 / 2 - 0.5)


def test_overdamped_regime_errors():
    s = OverdampedState(np.array([[0.0], [1.0]]), np.zeros((2, 1)))
    with pytest.raises(WrongBetaRegime):
        gamma1_eval(s, 1.0, model(G=SingularPotential("log")), LyapunovParams())
    with pytest.raises(WrongBetaRegime):
        gamma2_eval(s, 1.0, model(G=SingularPotential("riesz", beta1=2.0)), LyapunovParams())
    with pytest.raises(CoincidentParticles):
        gamma1_eval(OverdampedState(np.zeros((2, 1)), np.zeros((2, 1))), 1.0, model(), LyapunovParams())


# -- drift scan -----------------------------------------------------------------------


def test_regime_mismatch():
    M = model()
    with pytest.raises(RegimeMismatch):
        drift_scan("VN1", M, 1.0, 0.0, n_samples=10)
    with pytest.raises(RegimeMismatch):
        drift_scan("VN2", M, 1.0, 1.0, n_samples=10)
    quartic = Model(ConfiningPotential("even-polynomial", (0.5, 0.25)), M.G, M.kernel, d=1)
    with pytest.raises(RegimeMismatch):
        drift_scan("VN2", quartic, 1.0, 0.0, n_samples=10)


@pytest.mark.parametrize("d", [1, 3])
def test_drift_scan_certifies_both_regimes(d):
    M = model(3, d, SingularPotential("coulomb", dim=d))
    samples = stratified_samples(M, 1.0, 10_000, np.random.default_rng(0))
    for cand, gamma in (("VN1", 1.0), ("VN2", 0.0)):
        best, reports = drift_search(cand, M, 1.0, gamma, samples)
        assert best["n_violations"] == 0
        assert best["c_fit"] > 0
        assert best["n_samples"] >= 9000


def test_hamiltonian_negative_control():
    M = model(3, 2, SingularPotential("coulomb", dim=2))
    far = far_field_samples(M, 2000, np.random.default_rng(1))
    rep = drift_scan("H", M, 1.0, 1.0, samples=far)
    assert rep["c_fit"] is None
    assert rep["n_violations"] > 0
    assert all(v["margin"] < 0 for v in rep["violations"])


def test_far_field_sign():
    # with v = 0 and z = 0 the drift of V_N^1 is eventually negative
    M = model(2, 2, SingularPotential("coulomb", dim=2))
    far = far_field_samples(M, 500, np.random.default_rng(2), radius=(20.0, 100.0))
    V, der = candidate_parts("VN1", far, 1.0, M, LyapunovParams(0.1, 2.0))
    assert np.all(generator_apply(der, far, 1.0, 1.0, M) < 0)
