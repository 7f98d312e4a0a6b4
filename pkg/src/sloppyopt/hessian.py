"""Finite-difference curvature: full Jacobians, Gauss-Newton Hessians and sketched reduced Hessians."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

DEFAULT_FD_STEP = 1e-6
DEFAULT_LAMBDA_REG = 1e-6


@dataclass(frozen=True)
class SketchBasis:
    omega: np.ndarray  # (n, k), orthonormal columns
    seed: int | None = None

    @property
    def k(self) -> int:
        return self.omega.shape[1]


@dataclass(frozen=True)
class CurvatureEstimate:
    Y: np.ndarray  # (M, k) approximation of J @ omega
    H_small: np.ndarray  # (k, k) = Y.T @ Y
    base_residual: np.ndarray


def _probe_columns(problem, theta, directions, h, base) -> np.ndarray:
    if h <= 0:
        raise ValueError("finite-difference step must be positive")
    theta = np.asarray(theta, dtype=float)
    if base is None:
        base = problem.evaluate(theta)
    points = [theta + h * directions[:, i] for i in range(directions.shape[1])]
    if hasattr(problem, "evaluate_many"):
        probes = problem.evaluate_many(points)
    else:
        probes = [problem.evaluate(p) for p in points]
    out = np.empty((base.size, len(points)))
    for i, r in enumerate(probes):
        col = (r - base) / h
        if not np.all(np.isfinite(col)):
            log.warning("simulator failed on finite-difference probe %d; column zeroed", i)
            col = np.zeros_like(col)
        out[:, i] = col
    return out


def fd_jacobian(problem, theta, h: float = DEFAULT_FD_STEP, base=None) -> np.ndarray:
    """Forward-difference Jacobian of the residuals.

    Costs ``n + 1`` simulator calls, or ``n`` when the residual at ``theta`` is
    passed in as ``base``.
    """
    n = problem.n
    return _probe_columns(problem, theta, np.eye(n), h, base)


def directional_diffs(problem, theta, basis, h: float = DEFAULT_FD_STEP, base=None) -> np.ndarray:
    """Forward differences of the residuals along each column of ``basis``.

    Column ``i`` is ``(r(theta + h * basis[:, i]) - r(theta)) / h`` which
    approximates ``J @ basis[:, i]`` without forming ``J``. Costs ``p + 1``
    calls for ``p`` columns, or ``p`` with a cached ``base``.
    """
    basis = np.atleast_2d(np.asarray(basis, dtype=float))
    if basis.shape[0] != problem.n:
        raise ValueError(f"basis has {basis.shape[0]} rows, problem dimension is {problem.n}")
    norms = np.linalg.norm(basis, axis=0)
    if not np.allclose(norms, 1.0, atol=1e-8):
        raise ValueError("basis columns must have unit norm")
    return _probe_columns(problem, theta, basis, h, base)


def gauss_newton_hessian(J, lambda_reg: float = DEFAULT_LAMBDA_REG) -> np.ndarray:
    """``J.T @ J + lambda_reg * I`` (Tikhonov-regularized Gauss-Newton Hessian)."""
    if lambda_reg < 0:
        raise ValueError("lambda_reg must be non-negative")
    J = np.asarray(J, dtype=float)
    H = J.T @ J
    H = 0.5 * (H + H.T)
    H[np.diag_indices_from(H)] += lambda_reg
    return H


def draw_sketch(n: int, k: int, seed=None) -> SketchBasis:
    """Random ``n x k`` orthonormal basis: Gaussian matrix, QR, sign-fixed by R's diagonal.

    Fixing the signs with ``diag(R)`` makes the distribution of the column
    space uniform (Haar) rather than biased by the QR convention.
    """
    if not 1 <= k <= n:
        raise ValueError(f"sketch rank k={k} must satisfy 1 <= k <= n={n}")
    rng = np.random.default_rng(seed)
    G = rng.standard_normal((n, k))
    Q, R = np.linalg.qr(G)
    signs = np.sign(np.diag(R))
    signs[signs == 0] = 1.0
    return SketchBasis(Q * signs, seed if isinstance(seed, (int, np.integer)) else None)


def reduced_hessian(Y) -> np.ndarray:
    Y = np.asarray(Y, dtype=float)
    if not np.all(np.isfinite(Y)):
        raise ValueError("Y has non-finite entries")
    H = Y.T @ Y
    return 0.5 * (H + H.T)


def sketch_curvature(problem, theta, sketch: SketchBasis, h: float = DEFAULT_FD_STEP, base=None) -> CurvatureEstimate:
    """Implicit reduced Hessian ``Omega^T J^T J Omega`` from ``k`` directional probes."""
    theta = np.asarray(theta, dtype=float)
    if base is None:
        base = problem.evaluate(theta)
    Y = directional_diffs(problem, theta, sketch.omega, h, base=base)
    return CurvatureEstimate(Y, reduced_hessian(Y), base)
