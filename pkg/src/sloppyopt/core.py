"""Shared types: parameter scaling, the residual-problem interface and call tracking."""

from __future__ import annotations

import os
import threading
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

#: Loss reported for any evaluation whose residuals are not all finite.
SENTINEL_LOSS = 1e12

PHASES = ("init", "stiff", "realign", "sloppy", "geometry", "baseline")


class DimensionError(ValueError):
    pass


class BudgetExhausted(RuntimeError):
    """Raised by a :class:`Tracker` once its simulator-call budget is spent."""


def as_parameter_vector(theta, n: int | None = None) -> np.ndarray:
    """Validate and copy a parameter vector (1-d, finite, optional length check)."""
    x = np.array(theta, dtype=float).reshape(-1)
    if n is not None and x.size != n:
        raise DimensionError(f"expected a parameter vector of length {n}, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise ValueError("parameter vector has non-finite entries")
    return x


@dataclass(frozen=True)
class BoundsBox:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float).reshape(-1)
        hi = np.asarray(self.upper, dtype=float).reshape(-1)
        if lo.shape != hi.shape:
            raise DimensionError("lower and upper bounds differ in length")
        if not np.all(lo < hi):
            raise ValueError("every lower bound must be strictly below its upper bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def unit(cls, n: int) -> "BoundsBox":
        return cls(np.zeros(n), np.ones(n))

    @property
    def n(self) -> int:
        return self.lower.size

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def clip(self, x: np.ndarray) -> np.ndarray:
        return np.clip(x, self.lower, self.upper)

    def contains(self, x: np.ndarray) -> bool:
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper))


def to_physical(theta, box: BoundsBox) -> np.ndarray:
    """Map normalized coordinates to the physical box: ``lower + theta * (upper - lower)``."""
    x = as_parameter_vector(theta)
    if x.size != box.n:
        raise DimensionError(f"theta has length {x.size}, box has {box.n}")
    return box.lower + x * box.width


def to_normalized(values, box: BoundsBox) -> np.ndarray:
    """Inverse of :func:`to_physical`."""
    x = as_parameter_vector(values)
    if x.size != box.n:
        raise DimensionError(f"values have length {x.size}, box has {box.n}")
    return (x - box.lower) / box.width


def reflect_nonnegative(theta) -> np.ndarray:
    return np.abs(np.asarray(theta, dtype=float))


def thread_count() -> int:
    """Worker count for concurrent probe evaluation, capped by ``SLOPPYOPT_THREADS``."""
    raw = os.environ.get("SLOPPYOPT_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


class ResidualProblem:
    """Deterministic map from a normalized parameter vector to a residual vector.

    Subclasses implement :meth:`compute_residuals` as a pure function and set
    ``n`` (parameter dimension) and ``m`` (flattened residual length).
    :meth:`evaluate` is the counted entry point used by every optimizer: each
    call is one simulator run. When ``reflect`` is true the parameters pass
    through :func:`reflect_nonnegative` before simulation, which lets the
    unconstrained inner solvers stay inside the non-negative orthant.
    """

    n: int
    m: int
    reflect: bool = False
    names: Sequence[str] | None = None

    def __init__(self):
        self._calls = 0
        self._lock = threading.Lock()

    @property
    def calls(self) -> int:
        return self._calls

    def reset_calls(self) -> None:
        with self._lock:
            self._calls = 0

    def compute_residuals(self, theta: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def evaluate(self, theta) -> np.ndarray:
        x = as_parameter_vector(theta, self.n)
        with self._lock:
            self._calls += 1
        if self.reflect:
            x = reflect_nonnegative(x)
        r = np.asarray(self.compute_residuals(x), dtype=float).reshape(-1)
        if r.size != self.m:
            raise DimensionError(f"simulator returned {r.size} residuals, expected {self.m}")
        return r


def loss_of(residuals: np.ndarray) -> float:
    """Half sum of squares, with the sentinel for failed simulations."""
    if not np.all(np.isfinite(residuals)):
        return SENTINEL_LOSS
    return 0.5 * float(residuals @ residuals)


@dataclass(frozen=True)
class EvaluationRecord:
    call_index: int
    theta: np.ndarray
    loss: float
    phase: str


@dataclass
class IterationDiagnostics:
    iteration: int
    loss: float
    misalignment: float
    k_s: int
    k_l: int
    eigenvalues: list[float]
    calls: int
    flags: list[str] = field(default_factory=list)


@dataclass
class OptimizationTrace:
    """Per-call loss records plus per-outer-iteration geometry diagnostics."""

    records: list[EvaluationRecord] = field(default_factory=list)
    iterations: list[IterationDiagnostics] = field(default_factory=list)

    @property
    def losses(self) -> np.ndarray:
        return np.array([r.loss for r in self.records])

    def best_so_far(self) -> np.ndarray:
        """Running minimum of the loss, indexed by call."""
        if not self.records:
            return np.empty(0)
        return np.minimum.accumulate(self.losses)

    def calls_to_threshold(self, threshold: float) -> int | None:
        """First call index (1-based) whose loss is at or below ``threshold``."""
        for rec in self.records:
            if rec.loss <= threshold:
                return rec.call_index
        return None


class Tracker:
    """Counts and records simulator calls for a single optimization run.

    Quacks like a :class:`ResidualProblem` (``n``, ``m``, ``evaluate``) so the
    finite-difference helpers accept either. Every evaluation is appended to
    ``trace`` with the active phase label and its loss. The best point seen so
    far is kept so a run interrupted by the budget can still report it.
    """

    def __init__(
        self,
        problem: ResidualProblem,
        budget: int | None = None,
        on_call: Callable[["Tracker"], None] | None = None,
    ):
        self.problem = problem
        self.budget = budget
        self.on_call = on_call
        self.trace = OptimizationTrace()
        self.phase = "init"
        self.best_theta: np.ndarray | None = None
        self.best_loss = np.inf
        self.best_residual: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.problem.n

    @property
    def m(self) -> int:
        return self.problem.m

    @property
    def calls(self) -> int:
        return len(self.trace.records)

    @property
    def remaining(self) -> int | None:
        return None if self.budget is None else self.budget - self.calls

    @contextmanager
    def in_phase(self, phase: str) -> Iterator[None]:
        if phase not in PHASES:
            raise ValueError(f"unknown phase {phase!r}")
        prev, self.phase = self.phase, phase
        try:
            yield
        finally:
            self.phase = prev

    def _check_budget(self, needed: int = 1) -> None:
        if self.budget is not None and self.calls + needed > self.budget:
            raise BudgetExhausted(f"simulator budget of {self.budget} calls exhausted")

    def _record(self, theta: np.ndarray, r: np.ndarray) -> float:
        loss = loss_of(r)
        self.trace.records.append(
            EvaluationRecord(self.calls + 1, theta.copy(), loss, self.phase)
        )
        if loss < self.best_loss:
            self.best_loss = loss
            self.best_theta = theta.copy()
            self.best_residual = r.copy()
        if self.on_call is not None:
            self.on_call(self)
        return loss

    def evaluate(self, theta) -> np.ndarray:
        self._check_budget()
        x = as_parameter_vector(theta, self.n)
        r = self.problem.evaluate(x)
        self._record(x, r)
        return r

    def evaluate_many(self, thetas: Sequence[np.ndarray]) -> list[np.ndarray]:
        """Evaluate several points, possibly concurrently; records stay in input order."""
        xs = [as_parameter_vector(t, self.n) for t in thetas]
        workers = min(thread_count(), len(xs))
        if workers <= 1:
            return [self.evaluate(x) for x in xs]
        self._check_budget(len(xs))
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(self.problem.evaluate, xs))
        for x, r in zip(xs, results):
            self._record(x, r)
        return results

    def loss(self, theta) -> float:
        return loss_of(self.evaluate(theta))
