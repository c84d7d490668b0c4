"""Interfaces, rate tables, corner flips and the particle dictionary."""

import math

import numpy as np
import pytest

from fliplab import (
    AsymmetryProfile,
    IntegerInterface,
    ModelKind,
    PairInterface,
    allowed_flips,
    apply_flip,
    build_rates,
    discrete_laplacian,
    from_particles,
    scaled_weight_exponent,
    to_particles,
    weighted_area,
)
from fliplab.gibbs import enumerate_states


# ---------------------------------------------------------------------------
# interface containers

def test_interface_validation():
    IntegerInterface(2, [0, 1, 2, 1, 0])
    IntegerInterface(0, [0])  # degenerate single point is allowed
    with pytest.raises(ValueError):
        IntegerInterface(2, [0, 1, 2, 1, 1])     # bad right endpoint
    with pytest.raises(ValueError):
        IntegerInterface(2, [1, 0, 1, 0, 0])     # bad left endpoint
    with pytest.raises(ValueError):
        IntegerInterface(2, [0, 2, 0, 1, 0])     # step of size 2
    with pytest.raises(ValueError):
        IntegerInterface(2, [0, 1, 0])           # wrong length


def test_pair_validation():
    up = IntegerInterface(2, [0, 1, 2, 1, 0])
    lo = IntegerInterface(2, [0, -1, -2, -1, 0])
    PairInterface(up, lo)
    PairInterface(up, up)  # contact everywhere is fine, crossing is not
    with pytest.raises(ValueError):
        PairInterface(lo, up)


def test_flat_zigzag():
    z = IntegerInterface.flat_zigzag(4)
    assert z.heights[0] == z.heights[-1] == 0
    assert set(np.unique(z.heights)) == {0, 1}
    assert np.all(np.abs(np.diff(z.heights)) == 1)
    assert z.is_nonnegative()


def test_interface_helpers():
    iface = IntegerInterface(2, [0, 1, 2, 1, 0])
    assert np.array_equal(iface.steps(), [1, 1, -1, -1])
    assert np.allclose(iface.h_values(), iface.heights / 2.0)
    assert np.allclose(iface.lattice_x(), [0, 0.25, 0.5, 0.75, 1.0])
    # heights array is read-only
    with pytest.raises(ValueError):
        iface.heights[1] = 5


# ---------------------------------------------------------------------------
# asymmetry profiles and rates

def test_profile_families_and_specs():
    rng = np.random.default_rng(0)
    x = rng.uniform(0, 1, 32)
    for prof, ref in [
        (AsymmetryProfile.constant(1.5), lambda x: 1.5 * np.ones_like(x)),
        (AsymmetryProfile.linear(2.0, -1.0), lambda x: 2.0 * x - 1.0),
        (AsymmetryProfile.sinusoidal(0.7, 2.0),
         lambda x: 0.7 * np.sin(2.0 * np.pi * x)),
    ]:
        assert np.allclose(prof(x), ref(x))
        again = AsymmetryProfile.from_spec(prof.spec_string)
        assert np.allclose(again(x), prof(x))
        assert again.spec_string == prof.spec_string

    step = AsymmetryProfile.piecewise([0.5], [1.0, -1.0])
    assert step(0.25) == 1.0 and step(0.75) == -1.0
    again = AsymmetryProfile.from_spec(step.spec_string)
    assert again(0.25) == 1.0 and again(0.75) == -1.0

    for bad in ("const:", "linear:a", "gauss:1", "sin:1"):
        with pytest.raises(ValueError):
            AsymmetryProfile.from_spec(bad)


def test_rate_table_identities():
    # p + q = (2N)^2 exactly, and log(p/q) = 4 sigma(k/2N) / (2N)^(3/2)
    for n in (2, 5, 16):
        two_n = 2 * n
        sig = AsymmetryProfile.linear(2.0, -0.5)
        rt = build_rates(sig, n)
        k = np.arange(1, two_n)
        assert np.all(rt.p[1:two_n] + rt.q[1:two_n] == float(two_n) ** 2)
        want = 4.0 * sig(k / two_n) * two_n ** (-1.5)
        assert np.allclose(np.log(rt.p[1:two_n] / rt.q[1:two_n]), want,
                           rtol=0, atol=1e-13)
        # boundary sites never flip
        assert rt.p[0] == rt.q[0] == rt.p[two_n] == rt.q[two_n] == 0.0


def test_symmetric_rates_are_flat():
    rt = build_rates(AsymmetryProfile.constant(0.0), 4)
    assert np.all(rt.p[1:8] == 32.0) and np.all(rt.q[1:8] == 32.0)


def test_build_rates_rejects_bad_input():
    with pytest.raises(ValueError):
        build_rates(AsymmetryProfile.constant(1.0), 0)
    with pytest.raises(ValueError):
        build_rates(AsymmetryProfile(sigma=lambda x: np.inf * np.asarray(x)), 3)


# ---------------------------------------------------------------------------
# corner flips

def _flips_brute(state, model):
    """Independent re-derivation of the allowed flip set."""
    out = []
    if model is ModelKind.Pair:
        hu, hl = state.upper.heights, state.lower.heights
        for k in range(1, 2 * state.n):
            if hu[k - 1] == hu[k + 1] == hu[k] + 1:
                out.append((k, 1, +1))
            if hu[k - 1] == hu[k + 1] == hu[k] - 1 and hu[k] - 2 >= hl[k]:
                out.append((k, 1, -1))
            if hl[k - 1] == hl[k + 1] == hl[k] + 1 and hl[k] + 2 <= hu[k]:
                out.append((k, 2, +1))
            if hl[k - 1] == hl[k + 1] == hl[k] - 1:
                out.append((k, 2, -1))
        return out
    h = state.heights
    for k in range(1, 2 * state.n):
        if h[k - 1] == h[k + 1] == h[k] + 1:
            out.append((k, +1))
        if h[k - 1] == h[k + 1] == h[k] - 1:
            if model is ModelKind.BridgeWall and h[k] - 2 < 0:
                continue
            out.append((k, -1))
    return out


def test_allowed_flips_match_brute_force():
    for model in (ModelKind.Bridge, ModelKind.BridgeWall, ModelKind.Pair):
        for state in enumerate_states(model, 3):
            got = allowed_flips(state, model)
            if model is ModelKind.Pair:
                got = [(k, i, d) for (k, i, d, _) in got]
            else:
                got = [(k, d) for (k, d, _) in got]
            assert sorted(got) == sorted(_flips_brute(state, model)), state


def test_allowed_flips_rate_kind():
    # up-flips ride on p, down-flips on q -- except the lower interface of a
    # pair, where the roles swap (its drift points the other way).
    z = IntegerInterface.flat_zigzag(3)
    for k, d, kind in allowed_flips(z, ModelKind.Bridge):
        assert kind == ("p" if d == +1 else "q")
    pair = PairInterface(IntegerInterface(2, [0, 1, 2, 1, 0]),
                         IntegerInterface(2, [0, -1, -2, -1, 0]))
    for k, i, d, kind in allowed_flips(pair, ModelKind.Pair):
        if i == 1:
            assert kind == ("p" if d == +1 else "q")
        else:
            assert kind == ("q" if d == +1 else "p")


def test_apply_flip_round_trip():
    state = IntegerInterface.flat_zigzag(4)
    for k, d, _ in allowed_flips(state, ModelKind.Bridge):
        new = apply_flip(state, k, d)
        assert new.heights[k] == state.heights[k] + 2 * d
        back = apply_flip(new, k, -d)
        assert back == state


def test_apply_flip_pair_interfaces():
    up = IntegerInterface(2, [0, 1, 2, 1, 0])
    lo = IntegerInterface(2, [0, -1, -2, -1, 0])
    pair = PairInterface(up, lo)
    moved = apply_flip(pair, 2, -1, interface_id=1)
    assert moved.upper.heights[2] == 0 and moved.lower == lo
    moved = apply_flip(pair, 2, +1, interface_id=2)
    assert moved.lower.heights[2] == 0 and moved.upper == up


def test_discrete_laplacian():
    iface = IntegerInterface(3, [0, 1, 2, 1, 0, -1, 0])
    for k in range(1, 6):
        h = iface.heights
        assert discrete_laplacian(iface, k) == h[k + 1] - 2 * h[k] + h[k - 1]
    with pytest.raises(IndexError):
        discrete_laplacian(iface, 0)
    with pytest.raises(IndexError):
        discrete_laplacian(iface, 6)


# ---------------------------------------------------------------------------
# particle dictionary

def test_particle_maps_round_trip():
    for state in enumerate_states(ModelKind.Bridge, 3):
        bits = to_particles(state)
        assert np.array_equal(bits.bits, (state.steps() == 1).astype(int))
        assert from_particles(bits) == state


def test_wall_condition_in_particle_language():
    from fliplab.lattice_core import wall_partial_sum_ok
    for state in enumerate_states(ModelKind.Bridge, 3):
        assert wall_partial_sum_ok(to_particles(state)) == state.is_nonnegative()


# ---------------------------------------------------------------------------
# weighted area

def test_weighted_area_scaling_identity():
    # (2N)^(3/2) * A_N(h) must equal the half-integer combination
    # (1/2) sum log(p/q)(k) H(k) used for the Gibbs weights.
    n = 3
    rt = build_rates(AsymmetryProfile.linear(1.0), n)
    for state in enumerate_states(ModelKind.Bridge, n):
        a = weighted_area(state, rt)
        e = scaled_weight_exponent(state, rt)
        assert abs((2 * n) ** 1.5 * a - e) < 1e-12


def test_weighted_area_pair_uses_gap():
    n = 2
    rt = build_rates(AsymmetryProfile.constant(1.0), n)
    up = IntegerInterface(2, [0, 1, 2, 1, 0])
    lo = IntegerInterface(2, [0, -1, -2, -1, 0])
    pair = PairInterface(up, lo)
    want = weighted_area(up, rt) - weighted_area(lo, rt)
    assert abs(weighted_area(pair, rt) - want) < 1e-14
    # equal interfaces -> zero gap -> zero area
    flat = PairInterface(up, up)
    assert weighted_area(flat, rt) == 0.0


def test_weighted_area_flip_increment():
    # one up-flip at k changes the exponent by exactly log(p/q)(k)
    n = 3
    rt = build_rates(AsymmetryProfile.linear(1.5, -0.2), n)
    state = IntegerInterface.flat_zigzag(n)
    lr = np.log(rt.p[1:2 * n] / rt.q[1:2 * n])
    for k, d, _ in allowed_flips(state, ModelKind.Bridge):
        delta = scaled_weight_exponent(apply_flip(state, k, d), rt) \
            - scaled_weight_exponent(state, rt)
        assert abs(delta - d * lr[k - 1]) < 1e-12
