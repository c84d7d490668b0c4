"""Continuum side: path samplers, reweighting, SPDE steppers, heat kernel."""

import math

import numpy as np
import pytest

from fliplab.continuum import (
    GridFunction,
    SpdeConfig,
    area_sigma,
    bridge_ensemble,
    dt_max,
    excursion_ensemble,
    heat_kernel,
    heat_kernel_table,
    kernel_bound,
    mild_residual,
    pair_rshe_integrate,
    penalization_refinement_study,
    reweighted_expectation,
    rshe_integrate,
    sample_bridge,
    sample_excursion,
    sample_watermelon,
    she_ensemble,
    she_integrate,
)
from fliplab import IntegerInterface, simulate

RNG = lambda s: np.random.Generator(np.random.PCG64(s))


# ---------------------------------------------------------------------------
# path samplers

def test_bridge_moments():
    m, B = 256, 20000
    H = bridge_ensemble(m, B, RNG(1))
    assert H.shape == (B, m + 1)
    assert np.all(H[:, 0] == 0.0) and np.all(H[:, -1] == 0.0)
    mid = H[:, m // 2]
    assert abs(mid.mean()) < 3 * mid.std() / math.sqrt(B)
    assert abs(mid.var() - 0.25) < 0.015
    # Cov(h(1/4), h(3/4)) = (1/4)(1 - 3/4) = 1/16
    c = np.cov(H[:, m // 4], H[:, 3 * m // 4])[0, 1]
    assert abs(c - 1.0 / 16.0) < 0.006


def test_excursion_frozen_midpoint_mean():
    # brute-force oracle: mean of the normalized excursion at x=1/2,
    # estimated once from 2^21 fine-grid bridge paths through the cyclic
    # shift construction and frozen here = 0.7848 (the continuum value is
    # sqrt(2/pi) = 0.7979; the gap is the m-resolution bias, which the
    # sampler must reproduce, not hide)
    m, B = 1024, 20000
    E = excursion_ensemble(m, B, RNG(2))
    assert np.all(E >= -1e-12)
    assert np.all(E[:, 0] == 0.0) and np.all(E[:, -1] == 0.0)
    mean_mid = E[:, m // 2].mean()
    assert abs(mean_mid - 0.7848) < 0.02 * 0.7848


def test_sample_wrappers_return_grid_functions():
    g = sample_bridge(64, seed=3)
    assert isinstance(g, GridFunction) and g.m == 64
    assert g.at(0.0) == 0.0 and g.at(1.0) == 0.0
    e = sample_excursion(64, seed=3)
    assert np.all(e.values >= -1e-12)
    up, lo = sample_watermelon(32, seed=4)
    assert np.all(up.values >= lo.values - 1e-12)
    assert up.at(0.0) == lo.at(0.0) == 0.0


def test_grid_function_interpolation():
    g = GridFunction(m=4, values=np.array([0.0, 1.0, 0.0, 1.0, 0.0]))
    assert g.at(0.125) == pytest.approx(0.5)
    assert g.at(0.25) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        GridFunction(m=4, values=np.array([1.0, 1.0, 0.0, 1.0, 0.0]))


# ---------------------------------------------------------------------------
# weighted area and reweighting

def test_area_sigma_exact_values():
    # area_sigma is 2 * int sigma h (the exponent of the tilt)
    m = 512
    x = np.arange(m + 1) / m
    tent = GridFunction(m=m, values=np.minimum(x, 1 - x))
    assert area_sigma(tent, 1.0) == pytest.approx(0.5, abs=1e-12)
    # integral of x * min(x, 1-x) = 1/8; trapezoid error is O(m^-2)
    assert area_sigma(tent, "linear:1") == pytest.approx(0.25, abs=1e-5)
    # for a pair, the area weights the gap
    lo = GridFunction(m=m, values=-np.minimum(x, 1 - x))
    assert area_sigma((tent, lo), 1.0) == pytest.approx(1.0, abs=1e-12)
    assert area_sigma((tent, tent), 1.0) == pytest.approx(0.0, abs=1e-14)


def test_reweight_trivial_when_symmetric():
    sampler = lambda rng: GridFunction(
        m=16, values=np.concatenate([[0.0], rng.normal(size=15), [0.0]]))
    res = reweighted_expectation(lambda g: g.at(0.5), sampler, 0.0, 500,
                                 seed=11)
    assert res.ess == pytest.approx(500.0)
    assert not res.degenerate
    # equal weights -> the estimate is the plain sample mean
    gen = RNG(11)
    vals = [sampler(gen).at(0.5) for _ in range(500)]
    assert res.estimate == pytest.approx(np.mean(vals), abs=1e-12)


def test_reweight_recovers_tilted_bridge_profile():
    # under the area tilt with sigma=1 the bridge mean becomes x(1-x)
    m, B = 128, 40000
    chunk = []

    def sampler(rng, buf=[]):
        if not buf:
            buf.extend(list(bridge_ensemble(m, 2048, rng)))
        return GridFunction(m=m, values=buf.pop())

    for x0, want in ((0.5, 0.25), (0.25, 0.1875)):
        res = reweighted_expectation(lambda g: g.at(x0), sampler, 1.0, B,
                                     seed=13)
        assert abs(res.estimate - want) < 3 * res.stderr + 0.01, \
            f"x={x0}: {res.estimate:.4f} vs {want} (se={res.stderr:.4f})"
        assert res.ess > B / 10


def test_reweight_input_validation():
    sampler = lambda rng: sample_bridge(8, rng=rng)
    with pytest.raises(ValueError):
        reweighted_expectation(lambda g: 1.0, sampler, 1.0, 50, seed=1)


# ---------------------------------------------------------------------------
# theta-scheme SHE

def test_dt_max_and_config_validation():
    assert dt_max(64, theta=0.5) == math.inf
    assert dt_max(64, theta=1.0) == math.inf
    assert dt_max(10, theta=0.0) == pytest.approx(1.0 / 100.0)
    SpdeConfig(m=16, dt=0.01, T=1.0, sigma=1.0)
    with pytest.raises(ValueError):
        SpdeConfig(m=1, dt=0.01, T=1.0, sigma=1.0)
    with pytest.raises(ValueError):
        SpdeConfig(m=16, dt=2.0, T=1.0, sigma=1.0)
    with pytest.raises(ValueError):
        SpdeConfig(m=16, dt=0.01, T=1.0, sigma=1.0, theta=1.5)
    with pytest.raises(ValueError):
        SpdeConfig(m=16, dt=0.02, T=1.0, sigma=1.0, theta=0.0)  # unstable
    with pytest.raises(ValueError):
        SpdeConfig(m=16, dt=0.01, T=1.0, sigma=1.0, penalization_epsilon=0.0)


def test_she_deterministic_heat_decay():
    # noise off, sin(pi x) initial: the exact solution decays at rate
    # pi^2/2; m=64 spatial bias is ~2e-4, Crank-Nicolson time bias smaller
    m, T = 64, 0.2
    x = np.arange(m + 1) / m
    cfg = SpdeConfig(m=m, dt=1e-3, T=T, sigma=0.0, noise=False)
    fields = she_integrate(cfg, initial=np.sin(np.pi * x))
    final = fields[-1].values
    want = math.exp(-math.pi ** 2 * T / 2.0) * np.sin(np.pi * x)
    assert np.max(np.abs(final - want)) < 1e-3


def test_she_source_steady_state():
    # with sigma=1, no noise, the T->infty profile solves -(1/2)h'' = 1:
    # h(x) = x(1-x), independent of dt
    m = 32
    x = np.arange(m + 1) / m
    cfg = SpdeConfig(m=m, dt=0.05, T=8.0, sigma=1.0, noise=False)
    final = she_integrate(cfg)[-1].values
    assert np.max(np.abs(final - x * (1 - x))) < 1e-6


def test_she_stationary_variance_quick():
    # small version of the acceptance check: Var h_t(1/2) -> 1/4
    cfg = SpdeConfig(m=64, dt=0.02, T=2.0, sigma=0.0, seed=21)
    vals = she_ensemble(cfg, 4000)
    mid = vals[:, 32]
    assert abs(mid.mean()) < 3 * mid.std() / math.sqrt(len(mid))
    assert abs(mid.var() - 0.25) < 0.02


def test_she_weak_order_of_the_implicit_scheme():
    # fully implicit diffusion (theta=1) is first order in dt: successive
    # dt-halvings of the t=1 mean profile shrink the change by ~2
    m, T = 32, 1.0
    x = np.arange(m + 1) / m
    init = np.sin(np.pi * x)
    outs = []
    for dt in (0.1, 0.05, 0.025):
        cfg = SpdeConfig(m=m, dt=dt, T=T, sigma=1.0, theta=1.0, noise=False)
        outs.append(she_integrate(cfg, initial=init)[-1].values)
    d1 = np.max(np.abs(outs[0] - outs[1]))
    d2 = np.max(np.abs(outs[1] - outs[2]))
    assert 1.5 <= d1 / d2 <= 2.5, f"ratio {d1/d2:.3f}"


# ---------------------------------------------------------------------------
# reflected equations

def test_rshe_noise_off_positivity():
    m = 64
    x = np.arange(m + 1) / m
    cfg = SpdeConfig(m=m, dt=1e-3, T=0.3, sigma=0.0, noise=False,
                     penalization_epsilon=1e-4)
    res = rshe_integrate(cfg, initial=np.sin(np.pi * x))
    assert res.min_value >= -10 * cfg.penalization_epsilon
    assert res.mass_per_cell.sum() < 1e-6


def test_rshe_force_balance_overshoot():
    # constant downward drift against the penalization: the steady
    # overshoot is sigma*dt/(1 - exp(-dt/eps)), about 1.05 eps at
    # dt = eps/10, and halving eps (with dt) halves it exactly
    mins = []
    for eps in (1e-4, 5e-5):
        cfg = SpdeConfig(m=128, dt=eps / 10.0, T=0.005, sigma=-1.0,
                         noise=False, penalization_epsilon=eps)
        res = rshe_integrate(cfg)
        assert res.min_value >= -10 * eps
        mins.append(res.min_value)
    for eps, mn in zip((1e-4, 5e-5), mins):
        ratio = -mn / eps
        assert 1.0 < ratio < 1.10, f"overshoot {ratio:.4f} eps"
    assert mins[1] / mins[0] == pytest.approx(0.5, abs=1e-6)
    # the injected mass balances the drift: total ~ |sigma| * T * |domain|
    cfg = SpdeConfig(m=128, dt=1e-5, T=0.005, sigma=-1.0, noise=False,
                     penalization_epsilon=1e-4)
    res = rshe_integrate(cfg)
    assert res.mass_per_cell.sum() == pytest.approx(0.005, rel=0.05)


def test_rshe_complementarity_shrinks_with_epsilon():
    x = np.arange(65) / 64
    cfg = SpdeConfig(m=64, dt=2e-5, T=0.02, sigma=-1.0, seed=31)
    rows = penalization_refinement_study(cfg, [1e-3, 1e-4],
                                         initial=0.2 * np.sin(np.pi * x))
    (e1, min1, mass1, comp1), (e2, min2, mass2, comp2) = rows
    assert comp2 < comp1
    assert min2 > min1  # smaller eps -> smaller overshoot
    assert mass1 > 0 and mass2 > 0


def test_pair_rshe_symmetric_masses():
    cfg = SpdeConfig(m=64, dt=1e-4, T=0.02, sigma=-1.0, noise=False,
                     penalization_epsilon=1e-4)
    res = pair_rshe_integrate(cfg)
    # the gap penalization pushes both interfaces symmetrically
    assert res.mass_upper.sum() == pytest.approx(res.mass_lower.sum(),
                                                 abs=1e-12)
    assert res.mass_upper.sum() > 0
    assert res.min_gap >= -10 * cfg.penalization_epsilon
    final_gap = res.trajectory_upper[-1].values - res.trajectory_lower[-1].values
    assert np.all(final_gap >= -10 * cfg.penalization_epsilon)


# ---------------------------------------------------------------------------
# discrete heat kernel

def test_heat_kernel_identity_symmetry_bounds():
    for n in (4, 8):
        two_n = 2 * n
        tab0 = heat_kernel_table(n, 0.0)
        interior = tab0.values[1:two_n, 1:two_n]
        assert np.max(np.abs(interior - np.eye(two_n - 1))) < 1e-12
        for t in (0.01, 0.1, 1.0):
            tab = heat_kernel_table(n, t)
            g = tab.values
            assert np.max(np.abs(g - g.T)) < 1e-12
            # sin(j*pi) leaves ~1e-17 dust on the k=2N row
            assert np.max(np.abs(g[[0, -1]])) < 1e-14
            assert np.all(g >= -1e-15)
            assert np.max(g) <= kernel_bound(n, t) + 1e-12
            assert kernel_bound(n, t) == pytest.approx(
                min(1.0, math.sqrt(2 * math.pi / (two_n ** 2 * t))))


def test_heat_kernel_chapman_kolmogorov():
    # plain matrix product semigroup property (no 1/2N factor)
    for n in (4, 16):
        for t, s in ((0.02, 0.05), (0.1, 0.3)):
            gt = heat_kernel_table(n, t).values
            gs = heat_kernel_table(n, s).values
            gts = heat_kernel_table(n, t + s).values
            assert np.max(np.abs(gt @ gs - gts)) < 1e-8


def test_heat_kernel_reverse_time_bound():
    # sup over r in [s,t] of g_r(k,l) <= e^{(2N)^2 (t-s)} g_t(k,l)
    n = 6
    two_n = 2 * n
    for (s, t) in ((0.02, 0.03), (0.05, 0.08)):
        rs = np.linspace(s, t, 9)
        stack = np.stack([heat_kernel_table(n, r).values for r in rs])
        sup_r = stack.max(axis=0)
        cap = math.exp(two_n ** 2 * (t - s)) * heat_kernel_table(n, t).values
        inter = slice(1, two_n)
        assert np.all(sup_r[inter, inter] <= cap[inter, inter] * (1 + 1e-12))


def test_heat_kernel_point_accessor():
    n, t = 5, 0.07
    tab = heat_kernel_table(n, t)
    assert heat_kernel(n, t, 3, 7) == pytest.approx(tab.values[3, 7], rel=1e-12)
    assert heat_kernel(n, t, 0, 3) == pytest.approx(0.0, abs=1e-14)
    with pytest.raises(ValueError):
        heat_kernel(n, -0.1, 1, 1)
    with pytest.raises(ValueError):
        heat_kernel_table(n, -0.1)


# ---------------------------------------------------------------------------
# mild formulation

def test_mild_residual_vanishes_at_zero():
    traj = simulate("bridge", IntegerInterface.flat_zigzag(8), 1.0, 0.3,
                    seed=41).trajectory
    res = mild_residual(traj, 0.0)
    assert np.max(np.abs(res)) < 1e-12


def test_mild_residual_is_centered():
    # light version of the acceptance criterion: N=8, a few hundred runs
    n, B, t = 8, 400, 0.25
    init = IntegerInterface.flat_zigzag(n)
    acc = np.zeros((B, 2 * n + 1))
    for i in range(B):
        traj = simulate("bridge", init, 1.0, t, seed=500 + i).trajectory
        acc[i] = mild_residual(traj, t)
    mean = acc.mean(axis=0)
    se = acc.std(axis=0, ddof=1) / math.sqrt(B)
    inter = slice(1, 2 * n)
    z = np.abs(mean[inter]) / se[inter]
    assert np.max(z) < 4.0, f"max |z| = {np.max(z):.2f}"
    # ensemble variance stays below the explicit bracket bound
    assert acc[:, n].var() <= 8.0 * math.sqrt(2 * math.pi * t)


def test_mild_residual_rejects_other_models():
    wall = simulate("bridge-wall", IntegerInterface.flat_zigzag(4), 1.0,
                    0.1, seed=1).trajectory
    with pytest.raises(ValueError):
        mild_residual(wall, 0.05)
    bare = simulate("bridge", IntegerInterface.flat_zigzag(4), 1.0, 0.1,
                    seed=1, record_events=False).trajectory
    with pytest.raises(ValueError):
        mild_residual(bare, 0.05)
    ok = simulate("bridge", IntegerInterface.flat_zigzag(4), 1.0, 0.1,
                  seed=1).trajectory
    with pytest.raises(ValueError):
        mild_residual(ok, 0.2)  # beyond the horizon
