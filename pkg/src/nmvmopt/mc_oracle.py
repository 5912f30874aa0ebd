"""Independent Monte Carlo verification path.

Samples the NMVM return vector directly from its definition
X = mu + gamma Z + sqrt(Z) A N and estimates expected utility empirically.
Everything is driven by a Philox (counter-based) generator pinned per seed,
so estimates are bit-reproducible, and the common-random-numbers objective
used by the brute-force optimizers is a deterministic function of the
portfolio.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .mixing import MixingDistribution
from .model import MarketModel, Portfolio

__all__ = [
    "McConfig",
    "McEstimate",
    "sample_returns",
    "mc_expected_utility",
    "crn_objective",
    "brute_force_optimize",
    "block_mean",
]


@dataclass(frozen=True)
class McConfig:
    seed: int = 0
    paths: int = 100_000
    antithetic: bool = False

    def __post_init__(self):
        if self.paths < 1:
            raise ValueError(f"paths={self.paths} must be >= 1")


@dataclass(frozen=True)
class McEstimate:
    estimate: float
    stderr: float
    n_nonfinite: int = 0

    def within(self, value: float, k: float = 3.0) -> bool:
        """True if ``value`` lies within k standard errors of the estimate."""
        return abs(self.estimate - value) <= k * self.stderr


def block_mean(values: np.ndarray, block: int = 65536) -> float:
    """Mean via fixed-size index blocks reduced in index order.

    The block partition depends only on the array length, so the result is
    independent of how the work would be scheduled across threads.
    """
    values = np.asarray(values, dtype=float).reshape(-1)
    partials = [
        float(np.sum(values[i : i + block])) for i in range(0, values.size, block)
    ]
    return math.fsum(partials) / values.size


def _streams(cfg: McConfig) -> tuple[np.random.Generator, np.random.Generator]:
    root = np.random.Philox(key=cfg.seed)
    return np.random.Generator(root), np.random.Generator(root.jumped(1))


def _draw(model: MarketModel, mix: MixingDistribution, cfg: McConfig):
    """(z, g) draws; antithetic pairs the normal block with its negation."""
    normal_rng, mix_rng = _streams(cfg)
    if cfg.antithetic:
        half = (cfg.paths + 1) // 2
        g0 = normal_rng.standard_normal((half, model.n))
        z0 = mix.sample(half, rng=mix_rng)
        return np.concatenate([z0, z0]), np.vstack([g0, -g0])
    g = normal_rng.standard_normal((cfg.paths, model.n))
    z = mix.sample(cfg.paths, rng=mix_rng)
    return z, g


def sample_returns(
    model: MarketModel, mix: MixingDistribution, cfg: McConfig
) -> np.ndarray:
    """paths x n matrix of return draws mu + gamma z + sqrt(z) A g."""
    z, g = _draw(model, mix, cfg)
    return (
        model.mu[None, :]
        + model.gamma[None, :] * z[:, None]
        + np.sqrt(z)[:, None] * (g @ model.a_matrix.T)
    )


def _utility_fn(utility):
    return utility.value if hasattr(utility, "value") else utility


def _wealth(model: MarketModel, returns: np.ndarray, x: np.ndarray, w0: float):
    return w0 * (1.0 + model.r_f) + w0 * ((returns - model.r_f) @ x)


def mc_expected_utility(
    model: MarketModel,
    mix: MixingDistribution,
    utility,
    portfolio: Portfolio,
    cfg: McConfig,
) -> McEstimate:
    """Empirical E[U(W(x))] with standard error.

    ``utility`` is a callable w -> U(w) or any object with a ``value``
    attribute (e.g. a UtilitySpec).  Non-finite draws (such as log utility
    hit by nonpositive wealth) propagate into the estimate and are counted.
    """
    returns = sample_returns(model, mix, cfg)
    vals = _utility_fn(utility)(_wealth(model, returns, portfolio.x, portfolio.w0))
    vals = np.asarray(vals, dtype=float)
    n_bad = int(np.size(vals) - np.count_nonzero(np.isfinite(vals)))
    with np.errstate(invalid="ignore", over="ignore"):
        if cfg.antithetic:
            half = vals.size // 2
            pair = 0.5 * (vals[:half] + vals[half : 2 * half])
            est = block_mean(pair)
            se = float(np.std(pair, ddof=1) / math.sqrt(pair.size)) if pair.size > 1 else 0.0
        else:
            est = block_mean(vals)
            se = float(np.std(vals, ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else 0.0
    return McEstimate(estimate=est, stderr=se, n_nonfinite=n_bad)


def crn_objective(
    model: MarketModel,
    mix: MixingDistribution,
    utility,
    w0: float,
    cfg: McConfig,
):
    """Deterministic common-random-numbers objective x -> estimated E[U(W)].

    One sample set is drawn up front and shared by every probe portfolio,
    so the surrogate is a smooth deterministic function suitable for argmax
    comparisons.
    """
    returns = sample_returns(model, mix, cfg)
    ufn = _utility_fn(utility)
    half = returns.shape[0] // 2 if cfg.antithetic else None

    def objective(x: np.ndarray) -> float:
        vals = ufn(_wealth(model, returns, np.asarray(x, dtype=float), w0))
        if half is not None:
            vals = 0.5 * (vals[:half] + vals[half : 2 * half])
        return block_mean(vals)

    return objective


def _grid_axes(box, points: int):
    return [np.linspace(lo, hi, points) for lo, hi in box]


def brute_force_optimize(
    model: MarketModel,
    mix: MixingDistribution,
    utility,
    cfg: McConfig,
    method: str = "simplex-descent",
    box=None,
    w0: float = 1.0,
    grid_points: int = 11,
) -> np.ndarray:
    """Argmax of the CRN objective over the box; the test-oracle optimizer.

    ``method`` is "grid" (n <= 6, pure lattice argmax) or "simplex-descent"
    (coarse lattice seed + Nelder-Mead refinement, objective clipped to the
    box).  Deterministic for a fixed config.
    """
    if box is None:
        box = [(-5.0, 5.0)] * model.n
    box = [(float(lo), float(hi)) for lo, hi in box]
    if method == "grid" and model.n > 6:
        raise ValueError("grid search is limited to n <= 6")
    objective = crn_objective(model, mix, utility, w0, cfg)

    seed_points = _grid_axes(box, grid_points if method == "grid" else 5)
    best_x, best_v = None, -math.inf
    for combo in itertools.product(*seed_points):
        x = np.array(combo)
        v = objective(x)
        if v > best_v:
            best_x, best_v = x, v
    if method == "grid":
        return best_x

    def neg(x):
        for xi, (lo, hi) in zip(x, box):
            if xi < lo or xi > hi:
                return math.inf
        return -objective(x)

    res = minimize(
        neg,
        best_x,
        method="Nelder-Mead",
        options={"xatol": 1e-7, "fatol": 1e-12, "maxiter": 4000, "maxfev": 8000},
    )
    return np.asarray(res.x)
