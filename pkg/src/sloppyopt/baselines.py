"""Reference optimizers for sample-efficiency comparisons.

All of them draw simulator calls through a :class:`~sloppyopt.core.Tracker`
so their traces share one call-indexed format with the hierarchical runs.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .core import BoundsBox, BudgetExhausted, OptimizationTrace, ResidualProblem, Tracker, loss_of
from .hessian import DEFAULT_FD_STEP, fd_jacobian
from .solvers import InnerSolverOptions, nelder_mead, powell

log = logging.getLogger(__name__)


@dataclass
class BaselineResult:
    x: np.ndarray
    fun: float
    calls: int
    trace: OptimizationTrace
    iterations: int = 0
    flags: list[str] = field(default_factory=list)
    population: np.ndarray | None = None  # final DE population


def _as_tracker(problem, budget) -> Tracker:
    if isinstance(problem, Tracker):
        if budget is not None and problem.budget is None:
            problem.budget = budget
        return problem
    return Tracker(problem, budget=budget)


def _from_tracker(tracker: Tracker, iterations=0, flags=None) -> BaselineResult:
    return BaselineResult(tracker.best_theta.copy(), tracker.best_loss, tracker.calls,
                          tracker.trace, iterations, list(flags or []))


# -- full-space direct search ----------------------------------------------------


def _full_space(solver, problem, theta0, budget, opts):
    tracker = _as_tracker(problem, budget)
    limit = budget if budget is not None else (opts.max_evals if opts else 10_000)
    opts = opts or InnerSolverOptions(max_evals=limit)
    flags = []
    with tracker.in_phase("baseline"):
        try:
            res = solver(tracker.loss, np.asarray(theta0, dtype=float), opts)
            if res.budget_exhausted:
                flags.append("budget-exhausted")
        except BudgetExhausted:
            flags.append("budget-exhausted")
    return _from_tracker(tracker, flags=flags)


def full_space_powell(problem, theta0, budget: int | None = None,
                      opts: InnerSolverOptions | None = None) -> BaselineResult:
    """Powell's method over all parameters (non-negativity through the problem's reflection)."""
    return _full_space(powell, problem, theta0, budget, opts)


def full_space_nelder_mead(problem, theta0, budget: int | None = None,
                           opts: InnerSolverOptions | None = None) -> BaselineResult:
    return _full_space(nelder_mead, problem, theta0, budget, opts)


# -- differential evolution -------------------------------------------------------


@dataclass(frozen=True)
class DEConfig:
    """``pop_size`` is a per-dimension multiplier: the population holds ``pop_size * n`` members."""

    pop_size: int = 15
    max_generations: int = 90
    recombination: float = 0.7
    mutation: tuple[float, float] = (0.5, 1.0)
    seed: int = 42
    polish: bool = True

    def members(self, n: int) -> int:
        return max(5, self.pop_size * n)

    def __post_init__(self):
        if self.pop_size < 1:
            raise ValueError("pop_size must be >= 1")
        if not 0 <= self.recombination <= 1:
            raise ValueError("recombination must lie in [0, 1]")


def _latin_hypercube(rng, size, n):
    cuts = (np.arange(size)[:, None] + rng.random((size, n))) / size
    for j in range(n):
        cuts[:, j] = cuts[rng.permutation(size), j]
    return cuts


def differential_evolution(problem, bounds: BoundsBox | None = None, cfg: DEConfig | None = None,
                           theta0=None, budget: int | None = None, init=None) -> BaselineResult:
    """DE/best/1/bin with per-generation dithered mutation.

    Trials ``best + F (x_r1 - x_r2)`` are crossed over binomially with the
    target (one coordinate always taken from the mutant), clipped to the
    box, evaluated as a generation, and then replace their targets in index
    order when strictly better. ``theta0`` replaces the first member of the
    Latin-hypercube initial population. Stops on the generation budget (no
    population-spread test); the optional polish is a Nelder-Mead run from
    the best member using whatever call budget is left.
    """
    cfg = cfg or DEConfig()
    tracker = _as_tracker(problem, budget)
    n = tracker.n
    bounds = bounds or BoundsBox.unit(n)
    rng = np.random.default_rng(cfg.seed)
    size = cfg.members(n)
    if init is not None:
        pop = np.array(init, dtype=float)
        size = pop.shape[0]
        if size < 4:
            raise ValueError("best1bin needs at least 4 members")
    else:
        pop = bounds.lower + _latin_hypercube(rng, size, n) * bounds.width
        if theta0 is not None:
            pop[0] = bounds.clip(np.asarray(theta0, dtype=float))
    pop = bounds.clip(pop)
    flags: list[str] = []
    gen = 0
    with tracker.in_phase("baseline"):
        try:
            energies = np.array([loss_of(r) for r in tracker.evaluate_many(list(pop))])
            for gen in range(1, cfg.max_generations + 1):
                best = int(np.argmin(energies))
                F = rng.uniform(*cfg.mutation)
                trials = np.empty_like(pop)
                for i in range(size):
                    others = [j for j in range(size) if j != i and j != best]
                    r1, r2 = rng.choice(others, 2, replace=False)
                    mutant = pop[best] + F * (pop[r1] - pop[r2])
                    cross = rng.random(n) < cfg.recombination
                    cross[rng.integers(n)] = True
                    trials[i] = np.where(cross, mutant, pop[i])
                trials = bounds.clip(trials)
                trial_e = np.array([loss_of(r) for r in tracker.evaluate_many(list(trials))])
                better = trial_e < energies
                pop[better] = trials[better]
                energies[better] = trial_e[better]
            if cfg.polish:
                remaining = tracker.remaining
                limit = 40 * n if remaining is None else min(40 * n, remaining)
                if limit > n + 1:
                    best = int(np.argmin(energies))
                    nelder_mead(tracker.loss, pop[best], InnerSolverOptions(max_evals=limit))
        except BudgetExhausted:
            flags.append("budget-exhausted")
    result = _from_tracker(tracker, gen, flags)
    result.population = pop
    return result


# -- Levenberg-Marquardt with finite differences ----------------------------------


def levenberg_marquardt_fd(problem, theta0, bounds: BoundsBox | None = None, budget: int | None = None,
                           h: float = DEFAULT_FD_STEP, mu0: float = 1e-3, max_iter: int = 200,
                           x_tol: float = 1e-12, f_tol: float = 1e-15) -> BaselineResult:
    """Levenberg-Marquardt on ``J^T J + mu I`` with a forward-difference Jacobian.

    A step that raises the loss is rejected (``theta`` unchanged, ``mu *= 10``);
    an accepted one divides ``mu`` by 10. Iterates are clipped to ``bounds``.
    """
    tracker = _as_tracker(problem, budget)
    n = tracker.n
    bounds = bounds or BoundsBox.unit(n)
    theta = bounds.clip(np.asarray(theta0, dtype=float))
    mu = mu0
    flags: list[str] = []
    it = 0
    f = np.inf
    with tracker.in_phase("baseline"):
        try:
            r = tracker.evaluate(theta)
            f = loss_of(r)
            for it in range(1, max_iter + 1):
                J = fd_jacobian(tracker, theta, h, base=r)
                g = J.T @ r
                A = J.T @ J
                accepted = False
                step, f_old = np.zeros(n), f
                while mu < 1e16:
                    try:
                        delta = np.linalg.solve(A + mu * np.eye(n), -g)
                    except np.linalg.LinAlgError:
                        mu *= 10.0
                        continue
                    trial = bounds.clip(theta + delta)
                    r_new = tracker.evaluate(trial)
                    f_new = loss_of(r_new)
                    if f_new < f:
                        step = trial - theta
                        theta, r, f_old, f = trial, r_new, f, f_new
                        mu = max(mu / 10.0, 1e-15)
                        accepted = True
                        break
                    mu *= 10.0
                if not accepted:
                    flags.append("damping-saturated")
                    break
                if np.linalg.norm(step) <= x_tol * (np.linalg.norm(theta) + x_tol) or f_old - f <= f_tol * f_old:
                    break
                if f == 0.0:
                    break
        except BudgetExhausted:
            flags.append("budget-exhausted")
    if not np.isfinite(f):
        return _from_tracker(tracker, it, flags)
    # report the accepted iterate: the tracker's best point may be a probe outside the box
    return BaselineResult(theta.copy(), f, tracker.calls, tracker.trace, it, flags)
