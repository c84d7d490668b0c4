"""The compiled and pure-Python event kernels must agree bit for bit."""

import os
import subprocess
import sys

import numpy as np
import pytest

import fliplab
from fliplab import _kernels_py


def _run_both(model_id, heights0, p, q, t_end, snaps, seed, **kw):
    compiled = pytest.importorskip(
        "fliplab._kernels", reason="compiled kernel not built")
    out = []
    for impl in (compiled, _kernels_py):
        gen = np.random.Generator(np.random.PCG64(seed))
        out.append(impl.run_gillespie(model_id, heights0, p, q, t_end,
                                      snaps, gen, **kw))
    return out


def _zig(n):
    h = np.zeros(2 * n + 1, dtype=np.int64)
    h[1::2] = 1
    return h


CASES = [
    # (model_id, n, n_interfaces)  -- ids shared by both backends
    (0, 5, 1),   # free bridge
    (1, 4, 1),   # wall
    (2, 3, 2),   # pair
]


@pytest.mark.parametrize("model_id,n,n_if", CASES)
def test_backends_bit_identical(model_id, n, n_if):
    from fliplab.lattice_core import AsymmetryProfile, build_rates
    rt = build_rates(AsymmetryProfile.linear(2.0, -0.5), n)
    heights0 = np.stack([_zig(n)] * n_if)
    snaps = np.array([0.05, 0.1, 0.2])
    a, b = _run_both(model_id, heights0, rt.p, rt.q, 0.2, snaps, seed=1234)
    assert a["n_events"] == b["n_events"] and a["n_events"] > 10
    assert a["t_final"] == b["t_final"]          # bitwise, not approx
    assert a["status"] == b["status"]
    for key in ("ev_time", "ev_site", "ev_iface", "ev_dir",
                "snap_heights", "final_heights"):
        assert np.array_equal(np.asarray(a[key]), np.asarray(b[key])), key
    for za, zb in zip(a["z_mass"], b["z_mass"]):
        assert np.array_equal(np.asarray(za), np.asarray(zb))
    for key in ("z_site", "z_start", "z_end"):
        for za, zb in zip(a[key], b[key]):
            assert np.array_equal(np.asarray(za), np.asarray(zb)), key


def test_backend_name_is_reported():
    assert fliplab.kernel_backend() in ("compiled", "python")


SNIPPET = """\
import json
import fliplab
from fliplab import IntegerInterface, simulate
run = simulate("bridge-wall", IntegerInterface.flat_zigzag(4), "linear:1",
               0.3, seed=99)
t = run.trajectory
print(json.dumps({
    "backend": fliplab.kernel_backend(),
    "events": [t.times.sum(), int(t.sites.sum()), int(t.dirs.sum())],
    "final": t.final_heights.tolist(),
    "mass": run.zeta.mass_per_site.tolist(),
}))
"""


def test_forced_fallback_reproduces_simulation():
    # a full simulate() under FLIPLAB_PURE_PYTHON=1 must match the
    # in-process result exactly, whichever backend that one uses
    import json

    from fliplab import IntegerInterface, simulate

    run = simulate("bridge-wall", IntegerInterface.flat_zigzag(4), "linear:1",
                   0.3, seed=99)
    t = run.trajectory
    env = dict(os.environ, FLIPLAB_PURE_PYTHON="1")
    proc = subprocess.run([sys.executable, "-c", SNIPPET], env=env,
                          capture_output=True, text=True, check=True)
    got = json.loads(proc.stdout)
    assert got["backend"] == "python"
    assert got["events"] == [t.times.sum(), int(t.sites.sum()),
                             int(t.dirs.sum())]
    assert got["final"] == t.final_heights.tolist()
    assert got["mass"] == run.zeta.mass_per_site.tolist()
