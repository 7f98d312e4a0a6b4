"""Derivative-free local solvers: Powell's conjugate-direction method and Nelder-Mead.

Both are unconstrained, deterministic and count every objective call. When
the evaluation budget runs out they return the best point seen with
``budget_exhausted`` set instead of raising.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

GOLDEN = 0.3819660112501051  # 2 - golden ratio
GROW = 1.618033988749895


@dataclass(frozen=True)
class InnerSolverOptions:
    max_evals: int = 1000
    x_tol: float = 1e-6
    f_tol: float = 1e-6
    initial_step: float = 0.05

    def __post_init__(self):
        if self.max_evals < 1:
            raise ValueError("max_evals must be >= 1")
        if self.x_tol <= 0 or self.f_tol <= 0 or self.initial_step <= 0:
            raise ValueError("tolerances and initial_step must be positive")


@dataclass
class SolveResult:
    x: np.ndarray
    fun: float
    nfev: int
    converged: bool
    budget_exhausted: bool = False
    message: str = ""


class _OutOfEvals(Exception):
    pass


class _Counted:
    """Objective wrapper: counts calls, enforces the budget, remembers the best point."""

    def __init__(self, f, max_evals):
        self.f = f
        self.max_evals = max_evals
        self.nfev = 0
        self.best_x = None
        self.best_f = np.inf

    def __call__(self, x):
        if self.nfev >= self.max_evals:
            raise _OutOfEvals
        self.nfev += 1
        fx = float(self.f(x))
        if np.isnan(fx):
            fx = np.inf
        if fx < self.best_f:
            self.best_f = fx
            self.best_x = np.array(x, dtype=float)
        return fx


def _finish(fc: _Counted, x0, converged, exhausted, message) -> SolveResult:
    x = fc.best_x if fc.best_x is not None else np.array(x0, dtype=float)
    return SolveResult(x.copy(), fc.best_f, fc.nfev, converged, exhausted, message)


# -- line search ------------------------------------------------------------


def _bracket(g, f0):
    """Golden-ratio bracketing of a 1-d minimum starting from steps 0 and 1."""
    a, fa = 0.0, f0
    b, fb = 1.0, g(1.0)
    if fb > fa:
        a, b, fa, fb = b, a, fb, fa
    c = b + GROW * (b - a)
    fc = g(c)
    for _ in range(60):
        if fc >= fb:
            break
        # parabolic extrapolation, capped at 100x the current interval
        r = (b - a) * (fb - fc)
        q = (b - c) * (fb - fa)
        denom = 2.0 * np.copysign(max(abs(q - r), 1e-21), q - r)
        u = b - ((b - c) * q - (b - a) * r) / denom
        ulim = b + 100.0 * (c - b)
        if (b - u) * (u - c) > 0:
            fu = g(u)
            if fu < fc:
                return (b, u, c), (fb, fu, fc)
            if fu > fb:
                return (a, b, u), (fa, fb, fu)
            u = c + GROW * (c - b)
            fu = g(u)
        elif (c - u) * (u - ulim) > 0:
            fu = g(u)
            if fu < fc:
                b, c, u = c, u, u + GROW * (u - c)
                fb, fc, fu = fc, fu, g(u)
        elif (u - ulim) * (ulim - c) >= 0:
            u = ulim
            fu = g(u)
        else:
            u = c + GROW * (c - b)
            fu = g(u)
        a, b, c = b, c, u
        fa, fb, fc = fb, fc, fu
    return (a, b, c), (fa, fb, fc)


def _brent(g, bracket, fvals, tol, abs_tol=1e-11, max_iter=100):
    """Brent's parabolic/golden-section minimizer on a bracketing triple."""
    a, b, c = bracket
    lo, hi = min(a, c), max(a, c)
    x = w = v = b
    fx = fw = fv = fvals[1]
    d = e = 0.0
    for _ in range(max_iter):
        xm = 0.5 * (lo + hi)
        tol1 = tol * abs(x) + abs_tol
        tol2 = 2.0 * tol1
        if abs(x - xm) <= tol2 - 0.5 * (hi - lo):
            break
        use_golden = True
        if abs(e) > tol1 and np.isfinite(fv) and np.isfinite(fw):  # no parabola through inf
            r = (x - w) * (fx - fv)
            q = (x - v) * (fx - fw)
            p = (x - v) * q - (x - w) * r
            q = 2.0 * (q - r)
            if q > 0:
                p = -p
            q = abs(q)
            etemp = e
            e = d
            if abs(p) < abs(0.5 * q * etemp) and q * (lo - x) < p < q * (hi - x):
                d = p / q
                u = x + d
                if u - lo < tol2 or hi - u < tol2:
                    d = np.copysign(tol1, xm - x)
                use_golden = False
        if use_golden:
            e = (lo - x) if x >= xm else (hi - x)
            d = GOLDEN * e
        u = x + d if abs(d) >= tol1 else x + np.copysign(tol1, d)
        fu = g(u)
        if fu <= fx:
            if u >= x:
                lo = x
            else:
                hi = x
            v, w, x = w, x, u
            fv, fw, fx = fw, fx, fu
        else:
            if u < x:
                lo = u
            else:
                hi = u
            if fu <= fw or w == x:
                v, w = w, u
                fv, fw = fw, fu
            elif fu <= fv or v == x or v == w:
                v, fv = u, fu
    return x, fx


def _line_min(f, x, d, fx, tol, x_tol):
    def g(t):
        return f(x + t * d)

    # resolve the step no finer than x_tol in parameter space
    abs_tol = max(1e-11, 0.5 * x_tol / max(np.linalg.norm(d), 1e-300))
    bracket, fvals = _bracket(g, fx)
    t, ft = _brent(g, bracket, fvals, tol, abs_tol)
    if ft > fx:  # never step uphill
        return 0.0, fx
    return t, ft


# -- Powell -----------------------------------------------------------------


def powell(f, x0, opts: InnerSolverOptions | None = None) -> SolveResult:
    """Powell's method with the direction-replacement rule.

    Each sweep line-minimizes along every direction in the set; the net
    displacement of the sweep replaces the direction that gave the largest
    decrease when the usual extrapolation test says it is worth it. Line
    searches bracket with golden-ratio growth and refine with Brent.
    """
    opts = opts or InnerSolverOptions()
    x = np.array(x0, dtype=float).reshape(-1)
    fc = _Counted(f, opts.max_evals)
    p = x.size
    if p == 0:
        return SolveResult(x, float(f(x)), 1, True, False, "empty problem")
    line_tol = min(opts.x_tol * 100.0, 1e-2)
    direc = opts.initial_step * np.eye(p)
    try:
        fx = fc(x)
        if not np.isfinite(fx):
            raise ValueError("objective is not finite at x0")
        while True:
            x_start, f_start = x.copy(), fx
            big_ind, big_drop = 0, 0.0
            for i in range(p):
                f_prev = fx
                t, fx = _line_min(fc, x, direc[i], fx, line_tol, opts.x_tol)
                x = x + t * direc[i]
                if f_prev - fx > big_drop:
                    big_drop, big_ind = f_prev - fx, i
            if 2.0 * (f_start - fx) <= opts.f_tol * (abs(f_start) + abs(fx)) + 1e-20:
                return _finish(fc, x0, True, False, "f_tol reached")
            step = x - x_start
            if np.max(np.abs(step)) <= opts.x_tol:
                return _finish(fc, x0, True, False, "x_tol reached")
            if p == 1:
                continue  # replacing the only direction would just rescale it
            f_ext = fc(x + step)
            if f_ext < f_start:
                crit = 2.0 * (f_start - 2.0 * fx + f_ext) * (f_start - fx - big_drop) ** 2
                crit -= big_drop * (f_start - f_ext) ** 2
                if crit < 0:
                    t, fx = _line_min(fc, x, step, fx, line_tol, opts.x_tol)
                    x = x + t * step
                    direc[big_ind] = direc[-1]
                    direc[-1] = step
    except _OutOfEvals:
        return _finish(fc, x0, False, True, "evaluation budget exhausted")


# -- Nelder-Mead --------------------------------------------------------------

RHO, CHI, PSI, SIGMA = 1.0, 2.0, 0.5, 0.5


def _degenerate(sim: np.ndarray) -> bool:
    edges = sim[1:] - sim[0]
    s = np.linalg.svd(edges, compute_uv=False)
    return s[0] == 0 or s[-1] / s[0] < 1e-12


def nelder_mead(f, x0, opts: InnerSolverOptions | None = None) -> SolveResult:
    """Nelder-Mead simplex search with coefficients (1, 2, 0.5, 0.5).

    Terminates when the spread of function values over the simplex is within
    ``f_tol`` and its diameter (max-norm) within ``x_tol``, or at once when
    every vertex has the same value. A collapsed simplex is rebuilt once
    around the best vertex.
    """
    opts = opts or InnerSolverOptions()
    x0 = np.array(x0, dtype=float).reshape(-1)
    fc = _Counted(f, opts.max_evals)
    p = x0.size
    if p == 0:
        return SolveResult(x0, float(f(x0)), 1, True, False, "empty problem")

    def fresh_simplex(center, f_center):
        sim = np.vstack([center, center + opts.initial_step * np.eye(p)])
        fs = np.empty(p + 1)
        fs[0] = f_center
        for i in range(1, p + 1):
            fs[i] = fc(sim[i])
        return sim, fs

    restarted = False
    try:
        f0 = fc(x0)
        if not np.isfinite(f0):
            raise ValueError("objective is not finite at x0")
        sim, fsim = fresh_simplex(x0, f0)
        while True:
            order = np.argsort(fsim, kind="stable")
            sim, fsim = sim[order], fsim[order]
            f_spread = np.max(np.abs(fsim[1:] - fsim[0]))
            if f_spread == 0:
                return _finish(fc, x0, True, False, "flat simplex")
            if f_spread <= opts.f_tol and np.max(np.abs(sim[1:] - sim[0])) <= opts.x_tol:
                return _finish(fc, x0, True, False, "tolerance reached")
            if _degenerate(sim):
                if restarted:
                    return _finish(fc, x0, False, True, "degenerate simplex")
                restarted = True
                sim, fsim = fresh_simplex(sim[0], fsim[0])
                continue

            xbar = sim[:-1].mean(axis=0)
            xr = xbar + RHO * (xbar - sim[-1])
            fr = fc(xr)
            if fr < fsim[0]:
                xe = xbar + CHI * (xr - xbar)
                fe = fc(xe)
                if fe < fr:
                    sim[-1], fsim[-1] = xe, fe
                else:
                    sim[-1], fsim[-1] = xr, fr
                continue
            if fr < fsim[-2]:
                sim[-1], fsim[-1] = xr, fr
                continue
            if fr < fsim[-1]:
                xc = xbar + PSI * (xr - xbar)
                fcv = fc(xc)
                if fcv <= fr:
                    sim[-1], fsim[-1] = xc, fcv
                    continue
            else:
                xcc = xbar - PSI * (xbar - sim[-1])
                fcc = fc(xcc)
                if fcc < fsim[-1]:
                    sim[-1], fsim[-1] = xcc, fcc
                    continue
            for i in range(1, p + 1):
                sim[i] = sim[0] + SIGMA * (sim[i] - sim[0])
                fsim[i] = fc(sim[i])
    except _OutOfEvals:
        return _finish(fc, x0, False, True, "evaluation budget exhausted")
