import math

import numpy as np
import pytest

from conftest import random_spd_market
from nmvmopt.mixing import Constant, Exponential
from nmvmopt.model import MarketModel, Portfolio
from nmvmopt.mc_oracle import (
    McConfig,
    McEstimate,
    block_mean,
    brute_force_optimize,
    crn_objective,
    mc_expected_utility,
    sample_returns,
)


def test_config_validation():
    with pytest.raises(ValueError):
        McConfig(paths=0)


def test_block_mean_matches_numpy(rng):
    v = rng.normal(size=200_001)
    assert block_mean(v) == pytest.approx(float(np.mean(v)), rel=1e-14)
    # independent of block size (fixed partition by index, fsum combine)
    assert block_mean(v, block=1000) == pytest.approx(block_mean(v, block=65536), abs=1e-15)


def test_sample_returns_shape_and_determinism(rng):
    m = random_spd_market(rng, 3)
    cfg = McConfig(seed=5, paths=1000)
    a = sample_returns(m, Exponential(1.0), cfg)
    b = sample_returns(m, Exponential(1.0), cfg)
    assert a.shape == (1000, 3)
    assert np.array_equal(a, b)
    c = sample_returns(m, Exponential(1.0), McConfig(seed=6, paths=1000))
    assert not np.array_equal(a, c)


def test_constant_mixing_rows(rng):
    m = random_spd_market(rng, 2)
    x = sample_returns(m, Constant(1.0), McConfig(seed=1, paths=50_000))
    # E X = mu + gamma, Cov = Sigma
    se = x.std(axis=0) / math.sqrt(50_000)
    assert np.all(np.abs(x.mean(axis=0) - (m.mu + m.gamma)) < 4 * se)


def test_sample_mean_and_covariance_identities(rng):
    m = random_spd_market(rng, 3)
    e = Exponential(1.0)
    x = sample_returns(m, e, McConfig(seed=2, paths=400_000))
    mean_th = m.mu + m.gamma * e.mean
    se = x.std(axis=0) / math.sqrt(x.shape[0])
    assert np.all(np.abs(x.mean(axis=0) - mean_th) < 4 * se)

    cov_th = e.mean * m.sigma + e.variance * np.outer(m.gamma, m.gamma)
    centered = x - x.mean(axis=0)
    prods = centered[:, :, None] * centered[:, None, :]
    cov_se = prods.std(axis=0) / math.sqrt(x.shape[0])
    assert np.all(np.abs(np.cov(x.T) - cov_th) < 5 * cov_se)


def test_zero_portfolio_exact():
    m = MarketModel(n=2, r_f=0.03, mu=[0.1, 0.1], gamma=[0.0, 0.0], a_matrix=np.eye(2))
    est = mc_expected_utility(
        m,
        Exponential(1.0),
        lambda w: -np.exp(-w),
        Portfolio(np.zeros(2), w0=2.0),
        McConfig(seed=9, paths=1000),
    )
    assert est.estimate == pytest.approx(-math.exp(-2.06), rel=1e-14)
    assert est.stderr == 0.0


def test_nonfinite_draws_counted(rng):
    m = random_spd_market(rng, 2)
    est = mc_expected_utility(
        m,
        Constant(1.0),
        lambda w: np.where(w > 1.0, np.log(np.where(w > 1.0, w, 1.0)), -np.inf),
        Portfolio(np.array([3.0, 3.0])),
        McConfig(seed=4, paths=10_000),
    )
    assert est.n_nonfinite > 0
    assert est.estimate == -math.inf


def test_antithetic_reduces_stderr(rng):
    m = random_spd_market(rng, 2)
    e = Exponential(1.0)
    pf = Portfolio(np.array([0.4, 0.2]))
    plain = mc_expected_utility(
        m, e, lambda w: -np.exp(-w), pf, McConfig(seed=11, paths=200_000)
    )
    anti = mc_expected_utility(
        m, e, lambda w: -np.exp(-w), pf, McConfig(seed=11, paths=200_000, antithetic=True)
    )
    assert anti.stderr < plain.stderr


def test_crn_bit_reproducible(rng):
    m = random_spd_market(rng, 2)
    e = Exponential(1.0)
    o1 = crn_objective(m, e, lambda w: -np.exp(-w), 1.0, McConfig(seed=1, paths=50_000))
    o2 = crn_objective(m, e, lambda w: -np.exp(-w), 1.0, McConfig(seed=1, paths=50_000))
    x = np.array([0.3, -0.2])
    assert o1(x) == o2(x)


def test_grid_search_symmetric_instance():
    # exchangeable assets: optimizer returns equal weights at grid resolution
    m = MarketModel(
        n=2, r_f=0.0, mu=[0.1, 0.1], gamma=[0.02, 0.02],
        a_matrix=[[0.2, 0.05], [0.05, 0.2]],
    )
    x = brute_force_optimize(
        m,
        Constant(1.0),
        lambda w: -np.exp(-w),
        McConfig(seed=3, paths=100_000, antithetic=True),
        method="grid",
        box=[(0.0, 1.0)] * 2,
        grid_points=21,
    )
    assert x[0] == pytest.approx(x[1], abs=1e-12)


def test_grid_rejects_large_n(rng):
    m = random_spd_market(rng, 7)
    with pytest.raises(ValueError):
        brute_force_optimize(
            m, Constant(1.0), lambda w: -np.exp(-w), McConfig(seed=1, paths=10), "grid"
        )


def test_brute_force_recovers_gaussian_optimum():
    m = MarketModel(
        n=2, r_f=0.01, mu=[0.15, 0.25], gamma=[0.10, -0.05],
        a_matrix=[[1.0, 0.0], [0.2, 0.9]],
    )
    want = np.linalg.solve(m.sigma, m.gamma + m.excess_mean)
    got = brute_force_optimize(
        m,
        Constant(1.0),
        lambda w: -np.exp(-w),
        McConfig(seed=7, paths=1_000_000, antithetic=True),
        box=[(-2.0, 2.0)] * 2,
    )
    assert np.allclose(got, want, atol=1e-3)


def test_estimate_within_helper():
    e = McEstimate(1.0, 0.1)
    assert e.within(1.25, 3.0)
    assert not e.within(1.5, 3.0)
