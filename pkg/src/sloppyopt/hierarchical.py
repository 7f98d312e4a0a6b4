"""Hierarchical stiff/sloppy subspace optimization.

Each outer iteration builds a local geometry at the current iterate (the
full Gauss-Newton Hessian for the ``exact`` strategy, a sketched reduced
Hessian for ``stochastic``), then takes one meta-step:

1. Powell search over the stiff coordinates ``phi`` of ``theta + V_s phi``;
2. optional re-alignment: rotate the retained sloppy basis onto the
   eigenvectors of its own reduced Hessian at the new point;
3. Nelder-Mead search over the sloppy coordinates ``psi``.

The geometry is then rebuilt at the new point and the run stops once the
stiff subspace stops rotating (misalignment below ``eps_stop``).
"""

from __future__ import annotations

import logging
from contextlib import nullcontext
from dataclasses import dataclass, field

import numpy as np

from .core import BudgetExhausted, OptimizationTrace, ResidualProblem, Tracker, IterationDiagnostics, loss_of
from .hessian import (
    DEFAULT_FD_STEP,
    DEFAULT_LAMBDA_REG,
    directional_diffs,
    draw_sketch,
    fd_jacobian,
    gauss_newton_hessian,
    reduced_hessian,
)
from .solvers import InnerSolverOptions, nelder_mead, powell
from .subspace import EigenSpectrum, SubspacePartition, eigendecompose, misalignment, partition

log = logging.getLogger(__name__)

STRATEGIES = ("exact", "stochastic")


@dataclass(frozen=True)
class HierarchicalConfig:
    strategy: str = "exact"
    n_max: int = 50
    eps_stop: float = 1e-4
    lambda_reg: float = DEFAULT_LAMBDA_REG
    gamma: float = 0.90
    tau: float = 1e-4
    sketch_k: int | None = None
    fd_step: float = DEFAULT_FD_STEP
    seed: int = 0
    realign: bool = True
    resample_sketch: bool = True
    # Start the stiff solve from the previous sloppy offset (V_l psi_prev).
    # Off by default because it breaks the monotone-descent guarantee.
    carry_sloppy_offset: bool = False
    stiff_evals_per_dim: int = 60
    sloppy_evals_per_dim: int = 40
    inner_x_tol: float = 1e-6
    inner_f_tol: float = 1e-6
    initial_step: float = 0.05
    misalignment_window: int = 1
    max_calls: int | None = None

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.strategy == "stochastic" and (self.sketch_k is None or self.sketch_k < 1):
            raise ValueError("the stochastic strategy needs sketch_k >= 1")
        if self.n_max < 1 or self.eps_stop <= 0 or self.fd_step <= 0:
            raise ValueError("n_max, eps_stop and fd_step must be positive")
        if self.misalignment_window < 1:
            raise ValueError("misalignment_window must be >= 1")

    def check_dimension(self, n: int) -> None:
        if self.strategy == "stochastic" and not 1 <= self.sketch_k <= n:
            raise ValueError(f"sketch_k={self.sketch_k} must lie in [1, n={n}]")


@dataclass
class Geometry:
    partition: SubspacePartition
    spectrum: EigenSpectrum
    omega: np.ndarray | None
    base_residual: np.ndarray
    calls: int
    flags: list[str] = field(default_factory=list)


@dataclass
class StepResult:
    theta: np.ndarray
    residual: np.ndarray
    loss: float
    psi: np.ndarray
    stiff_evals: int
    realign_evals: int
    sloppy_evals: int
    flags: list[str] = field(default_factory=list)


@dataclass
class HierarchicalResult:
    theta_final: np.ndarray
    loss_final: float
    iterations: int
    converged: bool
    trace: OptimizationTrace
    final_spectrum: EigenSpectrum
    misalignment_history: list[float]
    loss_history: list[float]
    partition: SubspacePartition
    calls: int
    flags: list[str] = field(default_factory=list)


def _geometry_once(problem, theta, config, base, h, rng, omega):
    if config.strategy == "exact":
        J = fd_jacobian(problem, theta, h, base=base)
        spec = eigendecompose(gauss_newton_hessian(J, config.lambda_reg))
        return spec, None
    if omega is None:
        omega = draw_sketch(problem.n, config.sketch_k, rng).omega
    Y = directional_diffs(problem, theta, omega, h, base=base)
    return eigendecompose(reduced_hessian(Y)), omega


def build_geometry(problem, theta, config: HierarchicalConfig, rng=None, base=None,
                   omega=None) -> Geometry:
    """Stiff/sloppy partition at ``theta``.

    Spends ``n + 1`` simulator calls for ``exact`` and ``sketch_k + 1`` for
    ``stochastic`` (one fewer each when ``base`` already holds ``r(theta)``).
    A spectrum with every eigenvalue below ``100 * lambda_reg`` is flagged as
    a flat region and rebuilt once with a 10x larger step.
    """
    config.check_dimension(problem.n)
    theta = np.asarray(theta, dtype=float)
    rng = np.random.default_rng(config.seed) if rng is None else rng
    start = getattr(problem, "calls", 0)
    if base is None:
        base = problem.evaluate(theta)
    flags = []
    spec, om = _geometry_once(problem, theta, config, base, config.fd_step, rng, omega)
    if np.all(spec.eigenvalues < 1e2 * config.lambda_reg):
        flags.append("flat-region")
        log.warning("flat region at current iterate; rebuilding geometry with a 10x step")
        spec, om = _geometry_once(problem, theta, config, base, 10 * config.fd_step, rng, om)
    part = partition(spec, config.gamma, config.tau, omega=om)
    flags.extend(part.flags)
    return Geometry(part, spec, om, base, getattr(problem, "calls", 0) - start, flags)


class _SubspaceObjective:
    """Loss along ``origin + basis @ coords`` with a cache and best-point tracking."""

    def __init__(self, problem, origin, basis, known_residual=None):
        self.problem = problem
        self.origin = origin
        self.basis = basis
        self.cache: dict[bytes, tuple[np.ndarray, np.ndarray]] = {}
        self.best_theta = None
        self.best_residual = None
        self.best_loss = np.inf
        if known_residual is not None:
            zero = np.zeros(basis.shape[1])
            self._store(zero, origin.copy(), known_residual)

    def point(self, coords):
        return self.origin + self.basis @ coords

    def _store(self, coords, theta, r):
        self.cache[np.asarray(coords, dtype=float).tobytes()] = (theta, r)
        loss = loss_of(r)
        if loss < self.best_loss:
            self.best_loss, self.best_theta, self.best_residual = loss, theta, r
        return loss

    def __call__(self, coords):
        coords = np.asarray(coords, dtype=float)
        hit = self.cache.get(coords.tobytes())
        if hit is not None:
            return loss_of(hit[1])
        theta = self.point(coords)
        return self._store(coords, theta, self.problem.evaluate(theta))


def _inner_options(config, dim, per_dim):
    return InnerSolverOptions(
        max_evals=max(1, per_dim * dim),
        x_tol=config.inner_x_tol,
        f_tol=config.inner_f_tol,
        initial_step=config.initial_step,
    )


def step(problem, theta, geometry: Geometry, config: HierarchicalConfig, psi_prev=None) -> StepResult:
    """One meta-step: stiff Powell solve, sloppy re-alignment, sloppy Nelder-Mead solve.

    ``problem`` may be a :class:`~sloppyopt.core.Tracker`, in which case each
    sub-phase is labelled in its trace. The returned point never has a higher
    loss than ``theta``.
    """
    theta = np.asarray(theta, dtype=float)
    base = geometry.base_residual
    loss0 = loss_of(base)
    part = geometry.partition
    flags: list[str] = []
    phase = getattr(problem, "in_phase", None)

    def labelled(name):
        return phase(name) if phase is not None else nullcontext()

    # 1) stiff solve
    origin = theta.copy()
    known = base
    carry = (config.carry_sloppy_offset and psi_prev is not None and part.n_sloppy > 0)
    if carry:
        psi = np.zeros(part.n_sloppy)
        m = min(psi.size, np.asarray(psi_prev).size)
        psi[:m] = np.asarray(psi_prev)[:m]
        origin = theta + part.V_l @ psi
        known = None
    stiff = _SubspaceObjective(problem, origin, part.V_s, known)
    with labelled("stiff"):
        res_s = powell(stiff, np.zeros(part.k_s), _inner_options(config, part.k_s, config.stiff_evals_per_dim))
    if res_s.budget_exhausted:
        flags.append("stiff-budget")
    if carry:
        theta_p = theta + part.V_s @ res_s.x
        with labelled("realign"):
            r_p = problem.evaluate(theta_p)
    else:
        theta_p, r_p = stiff.best_theta, stiff.best_residual

    if part.n_sloppy == 0:
        out_theta, out_r, psi_star = theta_p, r_p, np.zeros(0)
        realign_evals = sloppy_evals = 0
    else:
        # 2) sloppy re-alignment
        V_l = part.V_l
        realign_evals = 0
        if config.realign:
            with labelled("realign"):
                Y_l = directional_diffs(problem, theta_p, V_l, config.fd_step, base=r_p)
            realign_evals = V_l.shape[1]
            U_l = eigendecompose(reduced_hessian(Y_l)).eigenvectors
            V_l = V_l @ U_l
        # 3) sloppy solve
        sloppy = _SubspaceObjective(problem, theta_p, V_l, r_p)
        with labelled("sloppy"):
            res_l = nelder_mead(sloppy, np.zeros(V_l.shape[1]),
                                _inner_options(config, V_l.shape[1], config.sloppy_evals_per_dim))
        if res_l.budget_exhausted:
            flags.append("sloppy-budget")
        sloppy_evals = res_l.nfev - 1  # the start point was served from cache
        out_theta, out_r, psi_star = sloppy.best_theta, sloppy.best_residual, res_l.x

    out_loss = loss_of(out_r)
    if out_loss > loss0:
        flags.append("rejected-step")
        out_theta, out_r, out_loss = theta, base, loss0
    stiff_evals = res_s.nfev - (0 if carry else 1)
    return StepResult(out_theta.copy(), out_r, out_loss, psi_star, stiff_evals,
                      realign_evals, sloppy_evals, flags)


def run(problem: ResidualProblem, theta0, config: HierarchicalConfig | None = None,
        tracker: Tracker | None = None) -> HierarchicalResult:
    """Iterate geometry construction and meta-steps until the stiff subspace settles."""
    config = config or HierarchicalConfig()
    config.check_dimension(problem.n)
    tracker = tracker or Tracker(problem, budget=config.max_calls)
    rng = np.random.default_rng(config.seed)
    theta = np.asarray(theta0, dtype=float).copy()
    flags: list[str] = []
    deltas: list[float] = []
    losses: list[float] = []
    converged = False
    iteration = 0
    geom = None
    r = None
    try:
        with tracker.in_phase("init"):
            r = tracker.evaluate(theta)
        losses.append(loss_of(r))
        with tracker.in_phase("geometry"):
            geom = build_geometry(tracker, theta, config, rng, base=r)
        fixed_omega = geom.omega if not config.resample_sketch else None
        tracker.trace.iterations.append(IterationDiagnostics(
            0, losses[0], float("nan"), geom.partition.k_s, geom.partition.k_l,
            geom.spectrum.eigenvalues.tolist(), tracker.calls, list(geom.flags)))
        psi = None
        for iteration in range(1, config.n_max + 1):
            res = step(tracker, theta, geom, config, psi)
            theta, r, psi = res.theta, res.residual, res.psi
            losses.append(res.loss)
            with tracker.in_phase("geometry"):
                new = build_geometry(tracker, theta, config, rng, base=r, omega=fixed_omega)
            it_flags = res.flags + new.flags
            delta = misalignment(geom.partition.V_s, new.partition.V_s)
            same_dim = new.partition.k_s == geom.partition.k_s
            if not same_dim:
                it_flags.append("stiff-dimension-changed")
            deltas.append(delta)
            tracker.trace.iterations.append(IterationDiagnostics(
                iteration, res.loss, delta, new.partition.k_s, new.partition.k_l,
                new.spectrum.eigenvalues.tolist(), tracker.calls, it_flags))
            geom = new
            window = deltas[-config.misalignment_window:]
            if same_dim and len(window) == config.misalignment_window and np.mean(window) < config.eps_stop:
                converged = True
                break
    except BudgetExhausted:
        flags.append("budget-exhausted")
        if r is None or tracker.best_loss < loss_of(r):
            theta, r = tracker.best_theta.copy(), tracker.best_residual
            losses.append(loss_of(r))
    if geom is None:
        raise RuntimeError("call budget too small to build the initial geometry")
    return HierarchicalResult(
        theta_final=theta,
        loss_final=loss_of(r),
        iterations=iteration,
        converged=converged,
        trace=tracker.trace,
        final_spectrum=geom.spectrum,
        misalignment_history=deltas,
        loss_history=losses,
        partition=geom.partition,
        calls=tracker.calls,
        flags=flags,
    )


@dataclass(frozen=True)
class GradientDiagnostics:
    grad_norm: float
    stiff_fraction: float
    bound_rhs: float
    lambda_max_sloppy: float
    delta_theta_est: np.ndarray  # estimated displacement to the minimum, H^+ g


def gradient_diagnostics(problem, result: HierarchicalResult, h: float = DEFAULT_FD_STEP,
                         config: HierarchicalConfig | None = None) -> GradientDiagnostics:
    """Post-convergence gradient check against the sloppy-curvature bound.

    The gradient ``J^T r`` comes from a fresh forward-difference Jacobian
    (``n + 1`` calls). ``stiff_fraction`` is the share of its norm inside
    the run's final stiff subspace. The bound is ``|lambda_max_sloppy| *
    ||delta_theta_est||`` where the displacement is estimated as ``H^+ g``
    from the regularized Gauss-Newton spectrum at the final point.
    """
    config = config or HierarchicalConfig()
    theta = result.theta_final
    r = problem.evaluate(theta)
    J = fd_jacobian(problem, theta, h, base=r)
    g = J.T @ r
    spec = eigendecompose(gauss_newton_hessian(J, config.lambda_reg))
    part = partition(spec, config.gamma, config.tau)
    lam = spec.eigenvalues
    lam_sloppy = float(abs(lam[part.k_s])) if part.k_s < lam.size else 0.0
    inv = np.where(lam > lam[0] * 1e-15, 1.0 / np.where(lam > 0, lam, 1.0), 0.0)
    dtheta = spec.eigenvectors @ (inv * (spec.eigenvectors.T @ g))
    gnorm = float(np.linalg.norm(g))
    V_s = result.partition.V_s
    stiff_fraction = 0.0 if gnorm < 1e-14 else float(np.linalg.norm(V_s.T @ g) / gnorm)
    return GradientDiagnostics(gnorm, stiff_fraction, lam_sloppy * float(np.linalg.norm(dtheta)),
                               lam_sloppy, dtheta)


def exact_config(**kw) -> HierarchicalConfig:
    return HierarchicalConfig(strategy="exact", **kw)


def stochastic_config(k: int, **kw) -> HierarchicalConfig:
    return HierarchicalConfig(strategy="stochastic", sketch_k=k, **kw)


__all__ = [
    "HierarchicalConfig", "HierarchicalResult", "Geometry", "StepResult", "GradientDiagnostics",
    "build_geometry", "step", "run", "gradient_diagnostics", "exact_config", "stochastic_config",
]
