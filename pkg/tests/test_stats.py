"""Statistical helpers: summaries, KS, chi-square, profile fits."""

import math

import numpy as np
import pytest

from fliplab.gibbs import exact_sample, gibbs_measure
from fliplab.stats import (
    empirical_vs_exact,
    ks_distance,
    profile_fit,
    relaxation_spacing,
    summarize,
)


def test_summarize_matches_numpy():
    rng = np.random.default_rng(1)
    x = rng.normal(2.0, 3.0, 5000)
    s = summarize("x", x)
    assert s.n_samples == 5000
    assert s.mean == pytest.approx(x.mean())
    assert s.variance == pytest.approx(x.var(ddof=1))
    assert s.stderr == pytest.approx(x.std(ddof=1) / math.sqrt(5000))
    assert s.quantiles == pytest.approx(
        list(np.quantile(x, [0.05, 0.25, 0.5, 0.75, 0.95])))
    single = summarize("one", [3.0])
    assert single.variance == 0.0 and single.stderr == 0.0
    with pytest.raises(ValueError):
        summarize("empty", [])


def test_ks_calibration():
    # same law twice: the p-value must clear 0.001 in >= 99 of 100 seeded
    # repetitions (it is approximately uniform)
    rng = np.random.default_rng(42)
    hits = 0
    for _ in range(100):
        a = rng.normal(size=10000)
        b = rng.normal(size=10000)
        _, p = ks_distance(a, b)
        hits += p > 1e-3
    assert hits >= 99, f"only {hits}/100 calibration repetitions passed"


def test_ks_power():
    rng = np.random.default_rng(4)
    a = rng.normal(0.0, 1.0, 2000)
    b = rng.normal(0.5, 1.0, 2000)
    d, p = ks_distance(a, b)
    assert p < 1e-6 and d > 0.15
    with pytest.raises(ValueError):
        ks_distance([], [1.0])


def test_empirical_vs_exact_tv_by_hand():
    mu = gibbs_measure("bridge", 1, 0.0)   # two states, uniform
    s0, s1 = mu.states
    chi2, p, tv = empirical_vs_exact([s0, s0, s0, s1], mu)
    assert tv == pytest.approx(0.25)       # |3/4-1/2|/2 + |1/4-1/2|/2


def test_empirical_vs_exact_consistency():
    mu = gibbs_measure("bridge-wall", 3, "linear:1")
    draws = exact_sample("bridge-wall", 3, 30000, "linear:1", seed=77)
    chi2, p, tv = empirical_vs_exact(draws, mu)
    assert p > 1e-3
    assert tv < 0.02


def test_empirical_vs_exact_rejects_foreign_states():
    mu = gibbs_measure("bridge-wall", 2, 0.0)
    bad = np.array([0, -1, 0, 1, 0])       # dips below the wall
    with pytest.raises(ValueError):
        empirical_vs_exact([bad], mu)
    with pytest.raises(ValueError):
        empirical_vs_exact([], mu)


def test_profile_fit_exact_and_noisy():
    rng = np.random.default_rng(10)
    m, B = 32, 400
    x = np.arange(m + 1) / m
    target = x * (1 - x)
    clean = np.tile(target, (B, 1))
    fit = profile_fit(clean, lambda t: t * (1 - t))
    assert fit.sup_deviation == 0.0 and fit.n_outside == 0
    noisy = clean + 0.05 * rng.standard_normal(clean.shape)
    fit = profile_fit(noisy, lambda t: t * (1 - t))
    assert fit.sup_deviation < 0.02
    assert fit.outside_fraction <= 0.03    # 3-sigma bands: ~0.3% expected
    assert fit.x.shape == fit.mean.shape == fit.stderr.shape
    with pytest.raises(ValueError):
        profile_fit(noisy[:50], lambda t: 0.0)  # ensembles must be >= 100


def test_relaxation_spacing_scales_like_n_squared():
    # frozen value at n=8, c=10: 10 / ((2N)^2 (1 - cos(pi/2N)))
    assert relaxation_spacing(8) == pytest.approx(2.0329, abs=1e-3)
    assert relaxation_spacing(8, c_relax=5.0) == pytest.approx(
        relaxation_spacing(8) / 2.0)
    # the gap closes like (pi/2N)^2/2, so the spacing saturates near
    # 2 c / pi^2 for large N
    big = relaxation_spacing(256)
    assert big == pytest.approx(20.0 / math.pi ** 2, rel=1e-3)
