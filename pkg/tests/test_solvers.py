import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.optimize import minimize

from sloppyopt.solvers import InnerSolverOptions, nelder_mead, powell

SOLVERS = [powell, nelder_mead]


def rosen(x):
    return (1 - x[0]) ** 2 + 100 * (x[1] - x[0] ** 2) ** 2


class Recorder:
    def __init__(self, f):
        self.f = f
        self.values = []

    def __call__(self, x):
        v = self.f(x)
        self.values.append(v)
        return v


def test_options_validated():
    with pytest.raises(ValueError):
        InnerSolverOptions(max_evals=0)
    with pytest.raises(ValueError):
        InnerSolverOptions(x_tol=0)


def test_powell_sphere():
    res = powell(lambda x: x @ x, np.ones(2), InnerSolverOptions(x_tol=1e-8, f_tol=1e-12))
    assert np.linalg.norm(res.x) < 1e-6


def test_powell_shifted_parabola():
    res = powell(lambda x: (x[0] - 3) ** 2, np.zeros(1))
    assert res.x[0] == pytest.approx(3, abs=1e-4)


def test_powell_ill_conditioned():
    res = powell(lambda x: x[0] ** 2 + 1e4 * x[1] ** 2, np.ones(2),
                 InnerSolverOptions(max_evals=500, x_tol=1e-8, f_tol=1e-14))
    assert res.nfev <= 500
    assert np.linalg.norm(res.x) < 1e-4


def test_powell_matches_scipy_oracle():
    A = np.diag([1.0, 10.0, 100.0]) + 0.5
    f = lambda x: float((x - 1) @ A @ (x - 1))
    ours = powell(f, np.zeros(3), InnerSolverOptions(max_evals=2000, x_tol=1e-8, f_tol=1e-14))
    ref = minimize(f, np.zeros(3), method="Powell", options={"xtol": 1e-8, "ftol": 1e-14})
    np.testing.assert_allclose(ours.x, ref.x, atol=1e-4)


def test_nm_sphere():
    res = nelder_mead(lambda x: x @ x, np.ones(2), InnerSolverOptions(x_tol=1e-7, f_tol=1e-14))
    assert np.linalg.norm(res.x) < 1e-5


def test_nm_constant_terminates_immediately():
    res = nelder_mead(lambda x: 1.0, np.zeros(3))
    assert res.converged
    assert res.nfev <= 3 + 1 + 4  # initial simplex plus at most one trial round


def test_nm_rosenbrock():
    res = nelder_mead(rosen, np.array([-1.2, 1.0]), InnerSolverOptions(max_evals=400, x_tol=1e-8, f_tol=1e-12))
    assert res.nfev <= 400
    assert res.fun < 1e-6


def test_nm_matches_scipy_oracle():
    ours = nelder_mead(rosen, np.array([-1.2, 1.0]), InnerSolverOptions(max_evals=2000, x_tol=1e-10, f_tol=1e-14))
    ref = minimize(rosen, [-1.2, 1.0], method="Nelder-Mead", options={"xatol": 1e-10, "fatol": 1e-14})
    np.testing.assert_allclose(ours.x, ref.x, atol=1e-4)


@pytest.mark.parametrize("solver", SOLVERS)
def test_budget_flag(solver):
    res = solver(rosen, np.array([-1.2, 1.0]), InnerSolverOptions(max_evals=15))
    assert res.budget_exhausted and not res.converged
    assert res.nfev == 15


@pytest.mark.parametrize("solver", SOLVERS)
@given(x0=arrays(float, st.integers(1, 4), elements=st.floats(-2, 2)), seed=st.integers(0, 1000))
def test_monotone_accounting_deterministic(solver, x0, seed):
    c = np.random.default_rng(seed).uniform(0.1, 10, x0.size)
    f = lambda x: float(np.sum(c * (x - 0.3) ** 2) + np.sum(np.abs(x)) * 0.1)
    rec = Recorder(f)
    opts = InnerSolverOptions(max_evals=150)
    res = solver(rec, x0, opts)
    assert res.nfev == len(rec.values)
    assert res.fun == min(rec.values)
    assert res.fun <= f(x0)
    assert np.all(np.diff(np.minimum.accumulate(rec.values)) <= 0)
    again = solver(f, x0, opts)
    np.testing.assert_array_equal(again.x, res.x)
    assert again.nfev == res.nfev


@pytest.mark.parametrize("solver", SOLVERS)
def test_nan_objective_treated_as_worse(solver):
    f = lambda x: np.nan if x[0] > 0.5 else (x[0] - 0.4) ** 2 + x[1] ** 2
    res = solver(f, np.zeros(2), InnerSolverOptions(max_evals=300))
    assert np.isfinite(res.fun) and res.fun < 1e-6
