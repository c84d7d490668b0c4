"""Event-driven simulation: reproducibility, replay, reflection measures."""

import dataclasses
import math

import numpy as np
import pytest

from fliplab import (
    IntegerInterface,
    ModelKind,
    PairInterface,
    interpolate,
    simulate,
    support_check,
    zeta_integral,
)


def _zigzag(n):
    return IntegerInterface.flat_zigzag(n)


def _pair_zigzag(n):
    z = _zigzag(n)
    return PairInterface(z, z)


def test_same_seed_same_run():
    a = simulate("bridge", _zigzag(5), 1.0, 0.5, seed=42).trajectory
    b = simulate("bridge", _zigzag(5), 1.0, 0.5, seed=42).trajectory
    assert a.n_events == b.n_events
    assert np.array_equal(a.times, b.times)
    assert np.array_equal(a.sites, b.sites)
    assert np.array_equal(a.dirs, b.dirs)
    assert np.array_equal(a.final_heights, b.final_heights)
    c = simulate("bridge", _zigzag(5), 1.0, 0.5, seed=43).trajectory
    assert not np.array_equal(a.times, c.times)


def test_event_replay_matches_final_state():
    for model, init in [("bridge", _zigzag(4)),
                        ("bridge-wall", _zigzag(4)),
                        ("pair", _pair_zigzag(3))]:
        traj = simulate(model, init, "linear:1", 0.4, seed=3).trajectory
        assert np.array_equal(traj.heights_at(traj.t_final),
                              traj.final_heights)
        # cadlag: just before the first event we are still at the start
        if traj.n_events:
            t0 = float(traj.times[0])
            assert np.array_equal(traj.heights_at(0.999 * t0),
                                  traj._initial_heights())


def test_snapshots_match_replay():
    times = [0.0, 0.1, 0.25, 0.4]
    traj = simulate("bridge", _zigzag(6), 1.0, 0.4, seed=11,
                    snapshot_times=times).trajectory
    assert np.allclose(traj.snapshot_times, times)
    for i, t in enumerate(times):
        assert np.array_equal(traj.snapshot_heights[i], traj.heights_at(t))


def test_every_event_is_a_legal_flip():
    # replay a wall run event by event; heights stay >= 0 and each flip
    # lands on a genuine corner
    traj = simulate("bridge-wall", _zigzag(4), 1.0, 0.3, seed=7).trajectory
    H = traj._initial_heights().copy()
    for t, k, i, d in zip(traj.times, traj.sites, traj.ifaces, traj.dirs):
        assert H[i, k - 1] == H[i, k + 1] == H[i, k] + d
        H[i, k] += 2 * d
        assert H[i, k] >= 0, "wall model dug below the floor"
    assert np.array_equal(H, traj.final_heights)


def test_pair_never_crosses():
    traj = simulate("pair", _pair_zigzag(4), 1.0, 0.5, seed=19).trajectory
    for t in np.linspace(0.0, traj.t_final, 23):
        H = traj.heights_at(t)
        assert np.all(H[0] >= H[1])


def test_interpolate_is_linear_on_the_micro_grid():
    n = 4
    traj = simulate("bridge", _zigzag(n), 0.0, 0.5, seed=2).trajectory
    two_n = 2 * n
    scale = 1.0 / math.sqrt(two_n)
    # on grid points m/(2N)^2 interpolation equals the replayed state
    for m in (0, 3, 17):
        t = m / two_n ** 2
        assert np.allclose(interpolate(traj, t),
                           traj.heights_at(t)[0] * scale)
    # halfway between grid points it is the exact average of the bracket
    t0, t1 = 5 / two_n ** 2, 6 / two_n ** 2
    mid = interpolate(traj, (t0 + t1) / 2)
    want = 0.5 * (traj.heights_at(t0)[0] + traj.heights_at(t1)[0]) * scale
    assert np.allclose(mid, want)
    assert mid.shape == (two_n + 1,)
    # needs the right bracket state; beyond the horizon it must refuse
    cut = simulate("bridge", _zigzag(n), 0.0, 0.5, seed=2,
                   max_events=25).trajectory
    assert (cut.t_final * two_n ** 2) % 1.0 != 0.0
    with pytest.raises(ValueError):
        interpolate(cut, cut.t_final)


def test_reflection_measure_bookkeeping():
    run = simulate("bridge-wall", _zigzag(4), 1.0, 1.0, seed=5)
    z = run.zeta
    assert z.mass_per_site[0] == z.mass_per_site[-1] == 0.0
    assert z.has_intervals
    # mass per site is exactly line_rate * total blocked time
    acc = np.zeros_like(z.mass_per_site)
    for k, a, b in zip(z.sites, z.starts, z.ends):
        acc[k] += z.line_rate[k] * (b - a)
    assert np.allclose(acc, z.mass_per_site, rtol=0, atol=1e-12)
    assert z.total_mass == pytest.approx(acc.sum())
    # the intervals all sit inside the run window
    assert np.all(z.starts >= 0.0) and np.all(z.ends <= run.trajectory.t_final)
    assert np.all(z.ends > z.starts)


def test_zeta_integral_against_space_integral():
    run = simulate("bridge-wall", _zigzag(4), 1.0, 1.0, seed=5)
    z = run.zeta
    got = zeta_integral(z, lambda t, x: 1.0)
    assert got == pytest.approx(z.total_mass, rel=1e-10)
    got_x = zeta_integral(z, lambda t, x: x * (1 - x))
    assert got_x == pytest.approx(z.space_integral(lambda x: x * (1 - x)),
                                  rel=1e-8)
    # interval bookkeeping is independent of the event log
    bare = simulate("bridge-wall", _zigzag(4), 1.0, 1.0, seed=5,
                    record_events=False).zeta
    assert bare.has_intervals
    assert np.array_equal(bare.mass_per_site, z.mass_per_site)
    stripped = dataclasses.replace(z, sites=None, starts=None, ends=None)
    with pytest.raises(ValueError):
        zeta_integral(stripped, lambda t, x: 1.0)


def test_support_check_clean_runs():
    wall = simulate("bridge-wall", _zigzag(5), 1.0, 1.0, seed=23)
    rep = support_check(wall.trajectory, wall.zeta)
    assert rep.ok and rep.n_violations == 0
    # every blocked site sits at height 1, so int h dzeta = mass / sqrt(2N)
    want = rep.mass / math.sqrt(2 * wall.trajectory.n)
    assert rep.height_integral == pytest.approx(want, abs=1e-12)

    pair = simulate("pair", _pair_zigzag(4), 1.0, 0.5, seed=29)
    for z in pair.zetas:
        rep = support_check(pair.trajectory, z)
        assert rep.ok
        assert abs(rep.height_integral) < 1e-12  # contact means zero gap


def test_pair_zetas_charge_contact_sites_only():
    # zeta^1 charges blocked down-flips of the upper interface, zeta^2
    # blocked up-flips of the lower one; in both cases the interfaces must
    # touch at the charged site when the interval opens.
    run = simulate("pair", _pair_zigzag(3), 1.0, 0.5, seed=31)
    zu, zl = run.zetas
    assert zu.interface_id == 1 and zl.interface_id == 2
    traj = run.trajectory
    for z, want_curv in ((zu, -2), (zl, +2)):
        assert z.sites.size, "expected some contact in this run"
        for k, a in zip(z.sites, z.starts):
            H = traj.heights_at(a)
            assert H[0, k] == H[1, k]
            row = H[0] if z.interface_id == 1 else H[1]
            assert row[k + 1] - 2 * row[k] + row[k - 1] == want_curv


def test_max_events_and_statuses():
    run = simulate("bridge", _zigzag(4), 1.0, 100.0, seed=9, max_events=100)
    assert run.trajectory.status == 1
    assert run.trajectory.n_events == 100
    assert run.trajectory.t_final < 100.0
    done = simulate("bridge", _zigzag(2), 1.0, 0.05, seed=9)
    assert done.trajectory.status == 0
    assert done.trajectory.t_final == 0.05


def test_record_events_off():
    traj = simulate("bridge", _zigzag(4), 1.0, 0.2, seed=13,
                    record_events=False,
                    snapshot_times=[0.1, 0.2]).trajectory
    assert traj.times.size == 0 and traj.n_events > 0
    assert traj.snapshot_heights.shape[0] == 2
    with pytest.raises(ValueError):
        traj.heights_at(0.1)


def test_zero_horizon_run():
    run = simulate("bridge", _zigzag(3), 1.0, 0.0, seed=1)
    assert run.trajectory.n_events == 0
    assert run.trajectory.t_final == 0.0
    assert np.array_equal(run.trajectory.final_heights,
                          run.trajectory._initial_heights())


def test_input_validation():
    with pytest.raises(TypeError):
        simulate("pair", _zigzag(3), 1.0, 0.1, seed=1)
    with pytest.raises(TypeError):
        simulate("bridge", _pair_zigzag(3), 1.0, 0.1, seed=1)
    with pytest.raises(ValueError):
        simulate("bridge", _zigzag(3), 1.0, -1.0, seed=1)
    with pytest.raises(ValueError):
        simulate("no-such-model", _zigzag(3), 1.0, 0.1, seed=1)
    # wall start must respect the wall
    below = IntegerInterface(2, [0, -1, 0, 1, 0])
    with pytest.raises(ValueError):
        simulate("bridge-wall", below, 1.0, 0.1, seed=1)


def test_event_view_is_one_based():
    run = simulate("pair", _pair_zigzag(3), 1.0, 0.2, seed=37)
    evs = run.trajectory.events()
    assert evs, "expected at least one event"
    assert {e.interface_id for e in evs} <= {1, 2}
    assert all(e.direction in (-1, +1) for e in evs)
    times = [e.time for e in evs]
    assert times == sorted(times)
