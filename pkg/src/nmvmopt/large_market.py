"""Large financial market: countably many factor-structured NMVM assets.

Asset 1 is a market index, assets i >= 2 load on the index factor plus an
idiosyncratic factor.  For each finite segment of n assets a martingale
measure exists with conditional factor drifts b_i(z); rewriting portfolio
returns through sqrt(Z)(eps_i - b_i(Z)) (the h-parametrization) turns the
segment into an n-asset NMVM market with identity structure matrix, so the
closed-form exponential optimizer applies directly.  U_n, the minimal
expected exponential disutility using the first n assets, is nonincreasing
in n; the convergence study tracks its Cauchy behavior numerically.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .exp_opt import log_g_min, minimize_h
from .mixing import MixingDistribution
from .model import TransformedModel

__all__ = [
    "LargeMarketSpec",
    "ConvergenceRow",
    "b_function",
    "d_coefficient",
    "effective_nmvm_segment",
    "segment_scalars",
    "u_n",
    "optimal_h",
    "martingale_density",
    "convergence_study",
]


def _materialize(seq, max_n: int, start: int = 1) -> np.ndarray:
    """Accept an array-like or a callable i -> value (i starting at ``start``)."""
    if callable(seq):
        return np.array([float(seq(i)) for i in range(start, max_n + 1)])
    arr = np.asarray(seq, dtype=float).reshape(-1)
    if arr.size < max_n - start + 1:
        raise ValueError(
            f"sequence of length {arr.size} too short for max_n={max_n}"
        )
    return arr[: max_n - start + 1].copy()


@dataclass(frozen=True)
class LargeMarketSpec:
    """Coefficient sequences plus a bounded mixing law.

    ``gamma_seq``/``mu_seq``/``beta_bar_seq`` are indexed from asset 1,
    ``beta_seq`` from asset 2 (asset 1 carries no index loading).  Each may
    be an explicit array or a callable i -> value; power decay kappa/i**p
    is then just ``lambda i: kappa / i**p``.
    """

    gamma_seq: object
    mu_seq: object
    beta_seq: object
    beta_bar_seq: object
    mix: MixingDistribution
    max_n: int
    cauchy_tol: float = 1e-3
    gamma: np.ndarray = field(init=False)
    mu: np.ndarray = field(init=False)
    beta: np.ndarray = field(init=False)
    beta_bar: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.max_n < 1:
            raise ValueError(f"max_n={self.max_n} must be >= 1")
        lo, hi = self.mix.support()
        if not (lo > 0 and math.isfinite(hi)):
            raise ValueError(
                f"large market requires a bounded mixing support inside (0, inf), "
                f"got [{lo}, {hi}] from {self.mix!r}"
            )
        gamma = _materialize(self.gamma_seq, self.max_n)
        mu = _materialize(self.mu_seq, self.max_n)
        beta_bar = _materialize(self.beta_bar_seq, self.max_n)
        beta = np.zeros(self.max_n)
        if self.max_n >= 2:
            beta[1:] = _materialize(self.beta_seq, self.max_n, start=2)
        if np.any(beta_bar == 0.0):
            raise ValueError("beta_bar coefficients must all be nonzero")
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "beta_bar", beta_bar)
        if self.max_n >= 4:
            tail = d2_tail(self, self.max_n // 2)
            if tail >= self.cauchy_tol:
                warnings.warn(
                    f"square-summability proxy fails at the configured horizon: "
                    f"sum of d_i^2 over ({self.max_n // 2}, {self.max_n}] = {tail:.3e} "
                    f">= {self.cauchy_tol}",
                    stacklevel=2,
                )

    @property
    def z_bounds(self) -> tuple[float, float]:
        return self.mix.support()


def _check_z(spec: LargeMarketSpec, z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    lo, hi = spec.z_bounds
    if np.any(z < lo - 1e-12) or np.any(z > hi + 1e-12):
        raise ValueError(f"z={z} outside the mixing support [{lo}, {hi}]")
    return z


def b_function(spec: LargeMarketSpec, i: int, z):
    """Conditional factor drift b_i(z) making the first n returns centered.

    b_1(z) = -gamma_1 sqrt(z)/bb_1 - mu_1/(sqrt(z) bb_1); for i >= 2 the
    index correction enters as -beta_i b_1(z)/bb_i.
    """
    if not 1 <= i <= spec.max_n:
        raise ValueError(f"asset index i={i} outside 1..{spec.max_n}")
    z = _check_z(spec, z)
    rz = np.sqrt(z)
    g, m, bb = spec.gamma[i - 1], spec.mu[i - 1], spec.beta_bar[i - 1]
    out = -g * rz / bb - m / (rz * bb)
    if i >= 2:
        b1 = (
            -spec.gamma[0] * rz / spec.beta_bar[0]
            - spec.mu[0] / (rz * spec.beta_bar[0])
        )
        out = out - spec.beta[i - 1] * b1 / bb
    return float(out) if out.ndim == 0 else out


def effective_nmvm_segment(spec: LargeMarketSpec, n: int) -> tuple[np.ndarray, np.ndarray]:
    """(mu', gamma') with sqrt(Z)(eps_i - b_i(Z)) = mu'_i + gamma'_i Z + sqrt(Z) eps_i.

    Substituting b_i makes sqrt(z) b_i(z) affine in z; reading off the
    coefficients gives mu'_1 = mu_1/bb_1, gamma'_1 = gamma_1/bb_1 and, for
    i >= 2, mu'_i = (mu_i - beta_i mu_1 / bb_1)/bb_i and likewise for gamma'.
    """
    if not 1 <= n <= spec.max_n:
        raise ValueError(f"segment size n={n} outside 1..{spec.max_n}")
    bb1 = spec.beta_bar[0]
    ratio = spec.beta[:n] / spec.beta_bar[:n]
    mu_p = spec.mu[:n] / spec.beta_bar[:n] - ratio * (spec.mu[0] / bb1)
    gamma_p = spec.gamma[:n] / spec.beta_bar[:n] - ratio * (spec.gamma[0] / bb1)
    mu_p[0] = spec.mu[0] / bb1
    gamma_p[0] = spec.gamma[0] / bb1
    return mu_p, gamma_p


def d_coefficient(spec: LargeMarketSpec, i: int) -> float:
    """d_i = sup over the mixing support of |b_i(z)|.

    |a sqrt(z) + b / sqrt(z)| attains its supremum at an endpoint or at the
    stationary point z = b/a; all candidates are evaluated exactly.
    """
    lo, hi = spec.z_bounds
    candidates = [lo, hi]
    mu_p, gamma_p = effective_nmvm_segment(spec, i)
    a, b = -gamma_p[i - 1], -mu_p[i - 1]
    if a != 0.0:
        z_star = b / a
        if lo < z_star < hi:
            candidates.append(z_star)
    return max(abs(b_function(spec, i, z)) for z in candidates)


def d2_tail(spec: LargeMarketSpec, n: int) -> float:
    """Sum of d_i^2 over i in (n, min(2n, max_n)]: the Cauchy proxy."""
    top = min(2 * n, spec.max_n)
    return float(sum(d_coefficient(spec, i) ** 2 for i in range(n + 1, top + 1)))


def segment_scalars(spec: LargeMarketSpec, n: int) -> TransformedModel:
    """Reduce the n-asset h-parametrized segment (structure matrix = I)."""
    mu_p, gamma_p = effective_nmvm_segment(spec, n)
    return TransformedModel(
        mu0=mu_p,
        gamma0=gamma_p,
        a_scalar=float(gamma_p @ gamma_p),
        b_scalar=float(gamma_p @ mu_p),
        c_scalar=float(mu_p @ mu_p),
        theta0=math.inf,  # bounded support => s0 = -inf
        s0=-math.inf,
    )


def u_n(spec: LargeMarketSpec, n: int) -> float:
    """Minimal E[exp(-V(h))] over portfolios in the first n assets."""
    tm = segment_scalars(spec, n)
    if tm.c_scalar <= 1e-300:
        # no excess drift to trade against: optimum is h = gamma'
        return math.exp(spec.mix.log_laplace(0.5 * tm.a_scalar))
    q = minimize_h(tm, spec.mix)
    return math.exp(log_g_min(tm, spec.mix, q))


def optimal_h(spec: LargeMarketSpec, n: int) -> np.ndarray:
    """Minimizing h for the n-asset segment (identity structure matrix)."""
    tm = segment_scalars(spec, n)
    mu_p, gamma_p = effective_nmvm_segment(spec, n)
    if tm.c_scalar <= 1e-300:
        return gamma_p
    q = minimize_h(tm, spec.mix)
    return gamma_p - q * mu_p


def martingale_density(spec: LargeMarketSpec, n: int, z, eps):
    """f_n = exp(sum_i [b_i(z) eps_i - b_i(z)^2 / 2]).

    This is the Gaussian tilt moving each factor mean to b_i(z): it has
    E[f_n(z)] = 1 and E[f_n(z) eps_i] = b_i(z), which is exactly what the
    martingale measure for the first n assets requires.  ``z`` may be a
    scalar with ``eps`` of shape (n,), or draws of shape (m,) with ``eps``
    of shape (m, n).
    """
    z = _check_z(spec, z)
    eps = np.asarray(eps, dtype=float)
    scalar = z.ndim == 0
    z2 = z.reshape(-1)
    e2 = eps.reshape(1, -1) if eps.ndim == 1 else eps
    if e2.shape != (z2.size, n):
        raise ValueError(
            f"eps shape {eps.shape} incompatible with n={n} and {z2.size} z draws"
        )
    expo = np.zeros(z2.size)
    for i in range(1, n + 1):
        b = b_function(spec, i, z2)
        expo += b * e2[:, i - 1] - 0.5 * b * b
    out = np.exp(expo)
    return float(out[0]) if scalar else out


@dataclass(frozen=True)
class ConvergenceRow:
    n: int
    u_n: float
    gap_to_double: float  # U_n - U_2n; nan when 2n exceeds the horizon
    d2_tail: float


def convergence_study(
    spec: LargeMarketSpec, n_list, tol: float = 1e-4
) -> tuple[list[ConvergenceRow], bool]:
    """U_n sweep with doubling gaps.

    Returns the table and a flag declaring numerical convergence when the
    last available doubling gap falls below ``tol``.
    """
    n_list = [int(n) for n in n_list]
    if any(b <= a for a, b in zip(n_list, n_list[1:])) or not n_list:
        raise ValueError(f"n_list must be strictly increasing and nonempty: {n_list}")
    if n_list[-1] > spec.max_n:
        raise ValueError(f"max(n_list)={n_list[-1]} exceeds max_n={spec.max_n}")
    values = {n: u_n(spec, n) for n in n_list}
    rows = []
    for n in n_list:
        gap = math.nan
        if 2 * n <= spec.max_n:
            if 2 * n not in values:
                values[2 * n] = u_n(spec, 2 * n)
            gap = values[n] - values[2 * n]
        rows.append(ConvergenceRow(n, values[n], gap, d2_tail(spec, n)))
    finite_gaps = [r.gap_to_double for r in rows if not math.isnan(r.gap_to_double)]
    converged = bool(finite_gaps) and abs(finite_gaps[-1]) < tol
    return rows, converged
