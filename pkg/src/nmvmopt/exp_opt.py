"""Closed-form exponential-utility optimizer.

Maximizing E[-exp(-a W(x))] over portfolios reduces to minimizing the
scalar function

    H(theta) = exp(c_scalar * theta) * L_Z(a_scalar/2 - theta^2 c_scalar/2)

over theta in (-theta0, 0]; the optimal portfolio is then

    x* = (1 / (a W0)) [Sigma^-1 gamma - q_min Sigma^-1 (mu - 1 r_f)].

``minimize_h`` locates q_min with a grid-seeded bounded search;
``solve_foc`` solves the stationarity condition L(s) = theta L'(s)
independently, as a cross-check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .errors import DegenerateModelError, InfeasiblePortfolioError, NoRootError
from .mixing import MixingDistribution
from .model import (
    MarketModel,
    Portfolio,
    TransformedModel,
    degenerate_check,
    log_neg_expected_exp_utility,
    quadratic_exponent,
    transform,
)

__all__ = [
    "ExpOptResult",
    "SolverInfo",
    "h_function",
    "log_h_function",
    "minimize_h",
    "solve_foc",
    "optimal_portfolio",
    "optimize",
    "log_g_min",
]

# offset keeping theta strictly inside (-theta0, theta0)
_EDGE = 1e-9
_XATOL = 1e-12
_GRID_POINTS = 33


@dataclass(frozen=True)
class SolverInfo:
    iterations: int
    bracket: tuple[float, float]
    achieved_tol: float
    method: str
    boundary_pinned: bool = False


@dataclass(frozen=True)
class ExpOptResult:
    q_min: float
    x_star: np.ndarray
    optimal_utility: float
    log_neg_utility: float
    g_value: float
    solver_info: SolverInfo
    transformed: TransformedModel


def _check_theta(tm: TransformedModel, theta: float) -> None:
    if not abs(theta) < tm.theta0:
        raise ValueError(
            f"theta={theta} outside the h-function domain (-{tm.theta0}, {tm.theta0})"
        )


def log_h_function(tm: TransformedModel, mix: MixingDistribution, theta: float) -> float:
    """log H(theta); the preferred evaluation near the domain boundary."""
    _check_theta(tm, theta)
    s = 0.5 * tm.a_scalar - 0.5 * theta * theta * tm.c_scalar
    return tm.c_scalar * theta + mix.log_laplace(s)


def h_function(tm: TransformedModel, mix: MixingDistribution, theta: float) -> float:
    """H(theta) = exp(C theta) L_Z(A/2 - theta^2 C / 2)."""
    return math.exp(log_h_function(tm, mix, theta))


def _default_left_edge(tm, mix, log_h) -> float:
    """Left end of the search interval for the full problem."""
    if math.isfinite(tm.theta0):
        return -tm.theta0 + _EDGE * max(1.0, tm.theta0)
    # theta0 = +inf: expand leftward until H stops decreasing at the edge
    left = 1.0
    for _ in range(200):
        if log_h(-2.0 * left) > log_h(-left):
            return -2.0 * left
        left *= 2.0
    raise RuntimeError("h-function appears to decrease indefinitely")  # pragma: no cover


def _minimize_on_interval(log_h, stationarity, lo: float, hi: float):
    """Grid-seeded bounded minimization; returns (theta, evals).

    A value-only search cannot place a smooth minimum better than about
    sqrt(eps), so interior minima get a final polish by root-finding the
    sign of H' inside the winning bracket.
    """
    evals = 0

    def f(t):
        nonlocal evals
        evals += 1
        return log_h(t)

    grid = np.linspace(lo, hi, _GRID_POINTS)
    vals = np.array([f(t) for t in grid])
    best_t, best_v = float(grid[np.argmin(vals)]), float(np.min(vals))
    best_bracket = (lo, hi)
    # refine every local grid minimum (guards against multiple local minima)
    for i in range(_GRID_POINTS):
        left_ok = i == 0 or vals[i] <= vals[i - 1]
        right_ok = i == _GRID_POINTS - 1 or vals[i] <= vals[i + 1]
        if not (left_ok and right_ok):
            continue
        a = grid[max(i - 1, 0)]
        b = grid[min(i + 1, _GRID_POINTS - 1)]
        if b - a <= _XATOL:
            continue
        res = minimize_scalar(
            f, bounds=(a, b), method="bounded", options={"xatol": _XATOL, "maxiter": 500}
        )
        if res.fun < best_v:
            best_t, best_v = float(res.x), float(res.fun)
            best_bracket = (float(a), float(b))
    if lo < best_t < hi:
        a, b = best_bracket
        try:
            if stationarity(a) < 0.0 < stationarity(b):
                best_t = float(brentq(stationarity, a, b, xtol=1e-15))
        except ValueError:  # pragma: no cover - multiple roots in bracket
            pass
    # endpoints win ties at tolerance (leftmost deterministic choice)
    for t in (lo, hi):
        if log_h(t) < best_v - 1e-15:
            best_t, best_v = t, log_h(t)
    return best_t, best_v, evals


def _stationarity(tm, mix, theta: float) -> float:
    """Same sign as H'(theta): 1 - theta * (log L)'(A/2 - theta^2 C/2)."""
    s = 0.5 * tm.a_scalar - 0.5 * theta * theta * tm.c_scalar
    return 1.0 - theta * mix.laplace_log_deriv(s)


def _minimize_h_impl(tm, mix, domain=None):
    log_h = lambda t: log_h_function(tm, mix, t)
    if domain is None:
        lo = _default_left_edge(tm, mix, log_h)
        hi = 0.0
    else:
        lo, hi = float(domain[0]), float(domain[1])
        if math.isfinite(tm.theta0):
            edge = tm.theta0 - _EDGE * max(1.0, tm.theta0)
            lo, hi = max(lo, -edge), min(hi, edge)
        if lo > hi:
            raise InfeasiblePortfolioError(
                f"q-domain [{domain[0]}, {domain[1]}] does not intersect "
                f"(-theta0, theta0) = (-{tm.theta0}, {tm.theta0})"
            )
    if lo >= 0.0:
        # all-nonnegative domain: H strictly increasing there, minimum at its left end
        return lo, SolverInfo(1, (lo, hi), 0.0, "monotone-left-endpoint")
    theta, _, evals = _minimize_on_interval(
        log_h, lambda t: _stationarity(tm, mix, t), lo, hi
    )
    pinned = abs(theta - lo) <= 2.0 * _XATOL and domain is None
    return theta, SolverInfo(evals, (lo, hi), _XATOL, "grid+bounded-brent", pinned)


def minimize_h(tm: TransformedModel, mix: MixingDistribution, domain=None) -> float:
    """Global minimizer of H on the closure of ``domain``.

    ``domain`` is a (lo, hi) interval in theta, or None for the full
    problem, in which case the search interval is (-theta0, 0].
    """
    q, _ = _minimize_h_impl(tm, mix, domain)
    return q


def solve_foc(tm: TransformedModel, mix: MixingDistribution) -> tuple[float, float]:
    """Solve the stationarity condition of H by bracketed root-finding.

    In tau = a_scalar/2 - theta^2 c_scalar/2 coordinates the condition
    L(tau) - theta L'(tau) = 0 becomes

        L(tau) + sqrt((a_scalar - 2 tau)/c_scalar) * L'(tau) = 0,

    solved here on the theta grid (dividing through by L for stability).
    Among multiple roots the one with smallest H wins.  Returns
    (tau_star, theta_star).
    """
    if tm.c_scalar <= 0:
        raise DegenerateModelError("solve_foc requires c_scalar > 0")

    stationarity = lambda t: _stationarity(tm, mix, t)
    log_h = lambda t: log_h_function(tm, mix, t)
    lo = _default_left_edge(tm, mix, log_h)
    grid = np.linspace(lo, -1e-14, 512)
    vals = np.array([stationarity(t) for t in grid])
    roots = []
    for i in range(len(grid) - 1):
        if vals[i] == 0.0:
            roots.append(float(grid[i]))
        elif vals[i] * vals[i + 1] < 0.0:
            roots.append(float(brentq(stationarity, grid[i], grid[i + 1], xtol=1e-14)))
    if not roots:
        raise NoRootError(
            "no stationarity root bracketed in "
            f"({lo}, 0); use minimize_h for the boundary case"
        )
    theta_star = min(roots, key=log_h)
    tau_star = 0.5 * tm.a_scalar - 0.5 * theta_star**2 * tm.c_scalar
    return tau_star, theta_star


def optimal_portfolio(
    tm: TransformedModel,
    model: MarketModel,
    a: float,
    w0: float,
    q_min: float,
) -> np.ndarray:
    """x* = (1/(a W0)) [Sigma^-1 gamma - q_min Sigma^-1 (mu - 1 r_f)].

    Computed through the structure matrix: Sigma^-1 v = A^-T A^-1 v, so
    x* = A^-T (gamma0 - q_min mu0) / (a W0).
    """
    y = tm.gamma0 - q_min * tm.mu0
    return np.linalg.solve(model.a_matrix.T, y) / (a * w0)


def log_g_min(tm: TransformedModel, mix: MixingDistribution, q: float) -> float:
    """log of the minimized drift-adjusted transform e^{-B} H(q)."""
    return -tm.b_scalar + log_h_function(tm, mix, q)


def optimize(
    model: MarketModel,
    mix: MixingDistribution,
    a: float = 1.0,
    w0: float = 1.0,
    domain=None,
) -> ExpOptResult:
    """End-to-end closed-form solve.

    ``domain``, if given, is an interval (c_lo, c_hi) constraining
    c = x'(mu - 1 r_f); it is mapped to the q-coordinate via
    q_c = (b_scalar - a W0 c) / c_scalar.
    """
    tm = transform(model, mix)
    degenerate_check(tm)
    q_domain = None
    if domain is not None:
        c_lo, c_hi = float(domain[0]), float(domain[1])
        if c_lo > c_hi:
            raise ValueError(f"empty c-interval ({c_lo}, {c_hi})")
        aw = a * w0
        q_domain = (
            (tm.b_scalar - aw * c_hi) / tm.c_scalar,
            (tm.b_scalar - aw * c_lo) / tm.c_scalar,
        )
    q_min, info = _minimize_h_impl(tm, mix, q_domain)
    x_star = optimal_portfolio(tm, model, a, w0, q_min)
    pf = Portfolio(x=x_star, w0=w0, a=a)
    log_neg = log_neg_expected_exp_utility(model, mix, pf)
    return ExpOptResult(
        q_min=q_min,
        x_star=x_star,
        optimal_utility=-math.exp(log_neg),
        log_neg_utility=log_neg,
        g_value=quadratic_exponent(model, pf),
        solver_info=info,
        transformed=tm,
    )
