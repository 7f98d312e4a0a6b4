import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sloppyopt.core import loss_of
from sloppyopt.hessian import fd_jacobian
from sloppyopt.loss import DatasetError
from sloppyopt.models import (
    KineticsConstants,
    LinearResidualProblem,
    PrescribedSpectrumQuadratic,
    SumOfExponentials,
    ToySurfaceKinetics,
    generate_synthetic_dataset,
    kinetics_grid,
    sloppy_spectrum_selftest,
    sum_of_exponentials_problem,
    toy_kinetics_problem,
)


def test_prescribed_spectrum_exact():
    prob = PrescribedSpectrumQuadratic(6, decades=1.5, seed=3)
    lam = np.sort(np.linalg.eigvalsh(prob.A.T @ prob.A))[::-1]
    np.testing.assert_allclose(lam, 10.0 ** (-1.5 * np.arange(6)), rtol=1e-8)
    assert loss_of(prob.evaluate(prob.theta_star)) < 1e-28


@pytest.mark.parametrize("h", [1e-4, 1e-6, 1e-8])
def test_prescribed_spectrum_fd_jacobian(h):
    prob = PrescribedSpectrumQuadratic(5, seed=1)
    np.testing.assert_allclose(fd_jacobian(prob, np.full(5, 0.3), h), prob.A, atol=1e-8)


def test_synthetic_noise_free_zero_loss():
    prob = sum_of_exponentials_problem(5)
    assert loss_of(prob.evaluate(prob.theta_star)) == 0.0


def test_synthetic_chi_square_expectation():
    sim = SumOfExponentials(4)
    t = np.linspace(0.1, 4.0, 100)[:, None]
    theta = np.full(4, 0.3)
    phis = []
    for seed in range(400):
        data = generate_synthetic_dataset(sim, t, theta, 0.05, seed)
        from sloppyopt.models import DatasetProblem
        phis.append(loss_of(DatasetProblem(sim, data).compute_residuals(theta)))
    phis = np.array(phis)
    # r_i = -eps_i / (1 + eps_i): E[phi] is 0.125 to leading order in the noise level
    assert abs(phis.mean() - 0.125) < 3 * phis.std(ddof=1) / np.sqrt(phis.size) + 0.002


def test_synthetic_seed_determinism():
    sim = SumOfExponentials(3)
    t = np.linspace(0.1, 2, 10)[:, None]
    a = generate_synthetic_dataset(sim, t, np.full(3, 0.4), 0.05, 11)
    b = generate_synthetic_dataset(sim, t, np.full(3, 0.4), 0.05, 11)
    np.testing.assert_array_equal(a.observed, b.observed)


def test_sign_flip_clamped():
    sim = SumOfExponentials(2)
    t = np.linspace(0.1, 2, 50)[:, None]
    data = generate_synthetic_dataset(sim, t, np.full(2, 0.4), 5.0, 0)
    assert np.all(data.observed > 0)


@pytest.fixture(scope="module")
def kinetics():
    return ToySurfaceKinetics()


def test_kinetics_ode_matches_algebraic(kinetics):
    params = kinetics.defaults
    cond = kinetics_grid(5, 1)
    alg = kinetics.steady_state(params, cond)
    ode = kinetics.steady_state_ode(params, cond)
    np.testing.assert_allclose(ode.theta_f, alg.theta_f, atol=1e-8)
    np.testing.assert_allclose(ode.theta_s, alg.theta_s, atol=1e-8)


def test_kinetics_invariants(kinetics):
    ss = kinetics.steady_state(kinetics.defaults, kinetics_grid(6, 5))
    assert np.all((ss.theta_f >= 0) & (ss.theta_f <= 1))
    assert np.all((ss.theta_s >= 0) & (ss.theta_s <= 1))
    assert np.all((ss.gamma > 0) & (ss.gamma < 1))


def test_kinetics_zero_adsorption(kinetics):
    params = kinetics.defaults.copy()
    params[0] = params[1] = 0.0
    ss = kinetics.steady_state(params, kinetics_grid(2, 2))
    np.testing.assert_array_equal(ss.theta_f, 0)
    np.testing.assert_array_equal(ss.theta_s, 0)
    np.testing.assert_array_equal(ss.gamma, 0)
    assert not ss.valid.any()
    theta = (params - kinetics.bounds.lower) / kinetics.bounds.width
    with pytest.raises(DatasetError):
        generate_synthetic_dataset(kinetics, kinetics_grid(2, 2), theta)


def test_kinetics_flux_balance_without_recombination():
    sim = ToySurfaceKinetics(KineticsConstants(recombination=False))
    cond = kinetics_grid(3, 3)
    ss = sim.steady_state(sim.defaults, cond)
    k = sim.rates(sim.defaults, cond[:, 0], cond[:, 1])
    np.testing.assert_allclose(k["a_f"] * (1 - ss.theta_f), k["nu_d"] * ss.theta_f, rtol=1e-10)
    np.testing.assert_array_equal(ss.gamma, 0)


@settings(max_examples=15)
@given(st.sampled_from(list(map(tuple, kinetics_grid(4, 3)))))
def test_kinetics_gamma_monotone_in_er_factor(cond):
    sim = ToySurfaceKinetics()
    gammas = []
    for s_er in (0.2, 0.5, 0.9):
        p = sim.defaults.copy()
        p[2] = s_er
        gammas.append(sim.predict(p, np.array([cond]))[0, 0])
    assert np.all(np.diff(gammas) > 0)


def test_toy_kinetics_has_eight_parameters():
    prob = toy_kinetics_problem()
    assert prob.n == 8 and prob.reflect
    assert loss_of(prob.evaluate(prob.theta_star)) == 0.0


def test_selftest_prescribed():
    prob = PrescribedSpectrumQuadratic(8, decades=1.0)
    assert sloppy_spectrum_selftest(prob, prob.theta_star) == pytest.approx(7.0, abs=1e-4)


def test_selftest_sum_of_exponentials():
    prob = sum_of_exponentials_problem(8)
    assert sloppy_spectrum_selftest(prob, prob.theta_star) >= 6


def test_selftest_identity():
    assert sloppy_spectrum_selftest(LinearResidualProblem(np.eye(4)), np.zeros(4)) == pytest.approx(0, abs=1e-6)


def test_models_deterministic():
    prob = toy_kinetics_problem()
    th = np.full(8, 0.4)
    np.testing.assert_array_equal(prob.compute_residuals(th), prob.compute_residuals(th))
