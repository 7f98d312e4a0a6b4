"""Built-in residual problems.

* :class:`PrescribedSpectrumQuadratic` - linear residuals with a chosen
  Gauss-Newton spectrum; the test double for quadratic analysis.
* :class:`SumOfExponentials` - the classic sloppy fitting problem.
* :class:`ToySurfaceKinetics` - an 8-parameter, 2-coverage O-atom surface
  recombination model (physisorption + chemisorption sites, Eley-Rideal and
  Langmuir-Hinshelwood recombination) predicting the recombination
  probability gamma_O over a (pressure, wall temperature) grid.

Simulators map *physical* parameters and condition inputs to predictions;
:class:`DatasetProblem` glues one to a :class:`~sloppyopt.loss.Dataset` and
exposes the normalized-coordinate :class:`~sloppyopt.core.ResidualProblem`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import BoundsBox, ResidualProblem, to_physical
from .hessian import DEFAULT_FD_STEP, fd_jacobian, gauss_newton_hessian
from .loss import Dataset, DatasetError, residuals
from .subspace import eigendecompose

log = logging.getLogger(__name__)

K_B = 1.380649e-23  # J/K
K_B_EV = 8.617333262e-5  # eV/K
TORR = 133.322368  # Pa
AMU = 1.66053906660e-27  # kg


class Simulator:
    """Physical forward model: ``predict(params, inputs) -> (N, m)``."""

    names: tuple[str, ...]
    input_names: tuple[str, ...]
    observable_names: tuple[str, ...]
    bounds: BoundsBox
    defaults: np.ndarray  # physical
    reflect: bool = True

    @property
    def n(self) -> int:
        return len(self.names)

    def predict(self, params: np.ndarray, inputs: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def default_theta(self) -> np.ndarray:
        """Default parameters in normalized coordinates."""
        return (self.defaults - self.bounds.lower) / self.bounds.width


class DatasetProblem(ResidualProblem):
    """Relative residuals of a simulator against a dataset, flattened row-major."""

    def __init__(self, simulator: Simulator, dataset: Dataset):
        super().__init__()
        if dataset.m != len(simulator.observable_names):
            raise DatasetError("dataset observables do not match the simulator")
        self.simulator = simulator
        self.dataset = dataset
        self.n = simulator.n
        self.m = dataset.observed.size
        self.reflect = simulator.reflect
        self.names = simulator.names

    def compute_residuals(self, theta):
        params = to_physical(theta, self.simulator.bounds)
        pred = self.simulator.predict(params, self.dataset.inputs)
        return residuals(self.dataset.observed, pred).reshape(-1)

    def with_dataset(self, dataset: Dataset) -> "DatasetProblem":
        return DatasetProblem(self.simulator, dataset)


def generate_synthetic_dataset(
    simulator: Simulator, inputs, theta_star, noise_rel: float = 0.0, seed=None
) -> Dataset:
    """Observations ``pred(theta*) * (1 + noise_rel * N(0, 1))`` at the given conditions.

    A draw that flips the sign of a prediction is redrawn once and then
    clamped to 10% of the prediction.
    """
    if noise_rel < 0:
        raise ValueError("noise_rel must be non-negative")
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    params = to_physical(theta_star, simulator.bounds)
    pred = np.asarray(simulator.predict(params, inputs), dtype=float)
    if np.any(pred == 0) or not np.all(np.isfinite(pred)):
        raise DatasetError("model prediction is zero or non-finite at some condition")
    rng = np.random.default_rng(seed)
    obs = pred * (1.0 + noise_rel * rng.standard_normal(pred.shape))
    flipped = np.sign(obs) != np.sign(pred)
    if np.any(flipped):
        redraw = pred * (1.0 + noise_rel * rng.standard_normal(pred.shape))
        obs = np.where(flipped, redraw, obs)
        still = np.sign(obs) != np.sign(pred)
        obs = np.where(still, 0.1 * pred, obs)
    return Dataset(inputs, obs, simulator.input_names, simulator.observable_names)


# -- analytic test problems ---------------------------------------------------


class LinearResidualProblem(ResidualProblem):
    """``r(theta) = A @ theta - b``."""

    def __init__(self, A, b=None):
        super().__init__()
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.m, self.n = self.A.shape
        self.b = np.zeros(self.m) if b is None else np.asarray(b, dtype=float).reshape(-1)

    def compute_residuals(self, theta):
        return self.A @ theta - self.b


class PrescribedSpectrumQuadratic(LinearResidualProblem):
    """Linear residuals ``A (theta - theta*)`` whose Gauss-Newton Hessian has eigenvalues
    ``top * 10**(-d * i)`` for ``i = 0..n-1``.

    ``A = U diag(sigma) V^T`` with random orthogonal ``U``, ``V`` drawn from
    ``seed``; ``aligned=True`` uses ``V = I`` so the eigen-directions are the
    coordinate axes.
    """

    def __init__(self, n: int, decades: float = 1.0, m: int | None = None, seed=0,
                 aligned: bool = False, theta_star=None, top: float = 1.0):
        m = n if m is None else m
        if m < n:
            raise ValueError("need m >= n residuals for a full-rank spectrum")
        rng = np.random.default_rng(seed)
        self.eigenvalues = top * 10.0 ** (-decades * np.arange(n))
        sigma = np.sqrt(self.eigenvalues)
        U, _ = np.linalg.qr(rng.standard_normal((m, n)))
        V = np.eye(n) if aligned else np.linalg.qr(rng.standard_normal((n, n)))[0]
        A = (U * sigma) @ V.T
        if theta_star is None:
            theta_star = rng.uniform(0.2, 0.8, n)
        self.theta_star = np.asarray(theta_star, dtype=float).reshape(-1)
        self.V = V
        super().__init__(A, A @ self.theta_star)


class RosenbrockResiduals(ResidualProblem):
    """``r = (10 (x2 - x1^2), 1 - x1)``; loss is half the Rosenbrock function."""

    n, m = 2, 2

    def compute_residuals(self, theta):
        return np.array([10.0 * (theta[1] - theta[0] ** 2), 1.0 - theta[0]])


class FunctionProblem(ResidualProblem):
    """Wrap a plain callable ``theta -> residuals``."""

    def __init__(self, fn, n: int, m: int, reflect: bool = False):
        super().__init__()
        self.fn, self.n, self.m, self.reflect = fn, n, m, reflect

    def compute_residuals(self, theta):
        return self.fn(theta)


# -- sum of exponentials --------------------------------------------------------


class SumOfExponentials(Simulator):
    """``y(t) = sum_i exp(-k_i t)`` with decay rates ``k_i`` in ``[0, rate_max]``."""

    input_names = ("t",)
    observable_names = ("y",)

    def __init__(self, n: int, rate_max: float = 5.0, defaults=None):
        self.names = tuple(f"k{i + 1}" for i in range(n))
        self.bounds = BoundsBox(np.zeros(n), np.full(n, rate_max))
        self.defaults = (np.full(n, 0.5 * rate_max) if defaults is None
                         else np.asarray(defaults, dtype=float))

    def predict(self, params, inputs):
        t = np.asarray(inputs, dtype=float)[:, 0]
        return np.exp(-np.outer(t, params)).sum(axis=1)[:, None]


def exponential_rates(n: int, low: float = 0.1, high: float = 4.0) -> np.ndarray:
    """Log-spaced ground-truth decay rates."""
    return np.geomspace(low, high, n)


def sum_of_exponentials_problem(n: int, times=None, rates=None, noise_rel: float = 0.0,
                                seed=None, rate_max: float = 5.0) -> DatasetProblem:
    """Sum-of-exponentials fit with data generated at ``rates`` (log-spaced by default)."""
    sim = SumOfExponentials(n, rate_max=rate_max)
    times = np.linspace(0.1, 4.0, 40) if times is None else np.asarray(times, dtype=float)
    rates = exponential_rates(n) if rates is None else np.asarray(rates, dtype=float)
    theta_star = rates / rate_max
    data = generate_synthetic_dataset(sim, times[:, None], theta_star, noise_rel, seed)
    prob = DatasetProblem(sim, data)
    prob.theta_star = theta_star
    return prob


# -- toy surface kinetics -------------------------------------------------------


@dataclass(frozen=True)
class KineticsConstants:
    o_fraction: float = 0.1  # O-atom fraction of the gas
    site_density_f: float = 1e19  # physisorption sites per m^2
    site_ratio_s: float = 0.01  # chemisorption / physisorption site density
    diffusion_prefactor: float = 1e13  # s^-1, L-H attempt frequency
    o_mass_amu: float = 16.0
    recombination: bool = True


@dataclass(frozen=True)
class SteadyState:
    theta_f: np.ndarray
    theta_s: np.ndarray
    gamma: np.ndarray
    valid: np.ndarray


class ToySurfaceKinetics(Simulator):
    """Two-coverage O-atom surface kinetics at steady state.

    Per physisorption site and second, with ``f`` the O impingement flux per
    site and ``rho`` the chemisorption/physisorption site ratio::

        d theta_F/dt = s_F f (1 - theta_F) - nu_d theta_F - 2 k_LH theta_F^2
                       - rho k_LH theta_F theta_S
        d theta_S/dt = s_S f (1 - theta_S) - s_ER f exp(-E_ER/kT) theta_S
                       - k_LH theta_F theta_S

    with ``nu_d = 1e15 (A + B exp(E/kT))`` and ``k_LH = nu_D exp(-E_LH/kT)``.
    The recombination probability counts two atoms per recombination event
    (E-R on S sites, L-H for F+F and F+S pairs) divided by the impingement.
    """

    names = ("s_ads", "s_chem", "s_ER", "E_LH", "A_des", "B_des", "E_des", "E_ER")
    input_names = ("pressure_torr", "wall_temperature_k")
    observable_names = ("gamma_O",)
    # Toy magnitudes picked for conditioning over 0.2-10 Torr, 250-330 K; not fitted to any data.
    bounds = BoundsBox(
        np.array([0.0, 0.0, 0.0, 0.30, 0.0, 0.0, -0.70, 0.00]),
        np.array([0.05, 1.0, 1.0, 0.60, 1e-9, 2.0, -0.40, 0.30]),
    )
    defaults = np.array([0.01, 0.1, 0.5, 0.45, 1e-10, 1.0, -0.55, 0.10])

    def __init__(self, constants: KineticsConstants | None = None):
        self.constants = constants or KineticsConstants()

    def rates(self, params, pressure_torr, temperature):
        """Elementary rate coefficients per site (s^-1) at each condition."""
        c = self.constants
        s_ads, s_chem, s_er, e_lh, a_des, b_des, e_des, e_er = params
        T = np.asarray(temperature, dtype=float)
        kT = K_B_EV * T
        n_o = c.o_fraction * np.asarray(pressure_torr, dtype=float) * TORR / (K_B * T)
        v_mean = np.sqrt(8.0 * K_B * T / (np.pi * c.o_mass_amu * AMU))
        f = n_o * v_mean / 4.0 / c.site_density_f
        nu_d = 1e15 * (a_des + b_des * np.exp(e_des / kT))
        k_lh = c.diffusion_prefactor * np.exp(-e_lh / kT)
        e_r = s_er * f * np.exp(-e_er / kT)
        if not c.recombination:
            k_lh = np.zeros_like(k_lh)
            e_r = np.zeros_like(e_r)
        return dict(f=f, a_f=s_ads * f, a_s=s_chem * f, nu_d=nu_d, k_lh=k_lh, e_r=e_r)

    def _theta_s(self, tf, k):
        den = k["a_s"] + k["e_r"] + k["k_lh"] * tf
        return np.divide(k["a_s"], den, out=np.zeros_like(den), where=den > 0)

    def _rhs(self, tf, ts, k):
        rho = self.constants.site_ratio_s
        d_f = k["a_f"] * (1 - tf) - k["nu_d"] * tf - 2 * k["k_lh"] * tf**2 - rho * k["k_lh"] * tf * ts
        d_s = k["a_s"] * (1 - ts) - k["e_r"] * ts - k["k_lh"] * tf * ts
        return d_f, d_s

    def _gamma(self, tf, ts, k):
        rho = self.constants.site_ratio_s
        events = k["k_lh"] * tf**2 + rho * k["k_lh"] * tf * ts + rho * k["e_r"] * ts
        return 2.0 * events / k["f"]

    def steady_state(self, params, inputs) -> SteadyState:
        """Algebraic steady state: eliminate theta_S, then bisect the monotone theta_F balance."""
        inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
        k = self.rates(np.asarray(params, dtype=float), inputs[:, 0], inputs[:, 1])

        def g(tf):
            return self._rhs(tf, self._theta_s(tf, k), k)[0]

        lo = np.zeros(inputs.shape[0])
        hi = np.ones(inputs.shape[0])
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            pos = g(mid) > 0
            lo = np.where(pos, mid, lo)
            hi = np.where(pos, hi, mid)
        tf = 0.5 * (lo + hi)
        tf = np.where(k["a_f"] > 0, tf, 0.0)
        ts = self._theta_s(tf, k)
        gamma = self._gamma(tf, ts, k)
        valid = gamma > 0
        return SteadyState(tf, ts, gamma, valid)

    def steady_state_ode(self, params, inputs, tol: float = 1e-10) -> SteadyState:
        """Integrate the coverage ODEs from bare surface until stationary (slow; an oracle)."""
        from scipy.integrate import solve_ivp

        inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
        tf_out, ts_out = [], []
        for p, T in inputs:
            k = self.rates(np.asarray(params, dtype=float), np.array([p]), np.array([T]))
            k = {name: float(v[0]) for name, v in k.items()}

            def rhs(_t, y):
                return list(self._rhs(y[0], y[1], k))

            y = np.zeros(2)
            slowest = min(v for v in (k["a_f"] + k["nu_d"], k["a_s"] + k["e_r"]) if v > 0)
            span = 10.0 / slowest
            for _ in range(50):
                sol = solve_ivp(rhs, (0.0, span), y, method="Radau", rtol=1e-12, atol=1e-16)
                y = sol.y[:, -1]
                if np.linalg.norm(rhs(0.0, y)) < tol * max(1.0, np.max(np.abs(y))) * slowest:
                    break
            tf_out.append(y[0])
            ts_out.append(y[1])
        tf, ts = np.array(tf_out), np.array(ts_out)
        k = self.rates(np.asarray(params, dtype=float), inputs[:, 0], inputs[:, 1])
        gamma = self._gamma(tf, ts, k)
        return SteadyState(tf, ts, gamma, gamma > 0)

    def predict(self, params, inputs):
        return self.steady_state(params, inputs).gamma[:, None]


def kinetics_grid(n_pressure: int = 5, n_temperature: int = 4,
                  pressure=(0.2, 10.0), temperature=(250.0, 330.0)) -> np.ndarray:
    """Condition grid: log-spaced pressures (Torr) x linear wall temperatures (K)."""
    p = np.geomspace(*pressure, n_pressure)
    T = np.linspace(*temperature, n_temperature)
    P, TT = np.meshgrid(p, T, indexing="ij")
    return np.column_stack([P.ravel(), TT.ravel()])


def toy_kinetics_problem(conditions=None, theta_star=None, noise_rel: float = 0.0,
                         seed=None, constants: KineticsConstants | None = None) -> DatasetProblem:
    sim = ToySurfaceKinetics(constants)
    conditions = kinetics_grid() if conditions is None else conditions
    theta_star = sim.default_theta() if theta_star is None else np.asarray(theta_star, dtype=float)
    data = generate_synthetic_dataset(sim, conditions, theta_star, noise_rel, seed)
    prob = DatasetProblem(sim, data)
    prob.theta_star = theta_star
    return prob


# -- diagnostics ------------------------------------------------------------------


def sloppy_spectrum_selftest(problem: ResidualProblem, theta_star, h: float = DEFAULT_FD_STEP) -> float:
    """Decades spanned by the unregularized Gauss-Newton spectrum at ``theta_star``."""
    J = fd_jacobian(problem, theta_star, h)
    lam = eigendecompose(gauss_newton_hessian(J, 0.0)).eigenvalues
    if lam[0] <= 0:
        return 0.0
    if lam[-1] <= 0:
        return float("inf")
    return float(np.log10(lam[0] / lam[-1]))


MODEL_IDS = ("quadratic", "sum_of_exponentials", "toy_kinetics")


def simulator_for(model_id: str, **params) -> Simulator:
    if model_id == "sum_of_exponentials":
        return SumOfExponentials(**params)
    if model_id == "toy_kinetics":
        return ToySurfaceKinetics(KineticsConstants(**params) if params else None)
    raise ValueError(f"model {model_id!r} has no dataset simulator")


def default_inputs(model_id: str, **kw) -> np.ndarray:
    if model_id == "sum_of_exponentials":
        return np.linspace(0.1, 4.0, int(kw.get("n_times", 40)))[:, None]
    if model_id == "toy_kinetics":
        return kinetics_grid(int(kw.get("n_pressure", 5)), int(kw.get("n_temperature", 4)))
    raise ValueError(f"model {model_id!r} has no condition inputs")


def default_truth(model_id: str, n: int | None = None, sim: Simulator | None = None) -> np.ndarray:
    if model_id == "sum_of_exponentials":
        sim = sim or SumOfExponentials(n)
        return exponential_rates(sim.n) / sim.bounds.upper
    if model_id == "toy_kinetics":
        return (sim or ToySurfaceKinetics()).default_theta()
    raise ValueError(model_id)


def names_of(problem: ResidualProblem) -> Sequence[str]:
    return problem.names if problem.names is not None else [f"p{i + 1}" for i in range(problem.n)]
