"""Event-driven dynamics: simulate runs, replay states, reflection measures.

The heavy loop lives in a kernel backend.  ``_kernels`` is the compiled
(Cython) version, ``_kernels_py`` the pure-Python twin; both consume the
same numpy Generator and produce bit-identical output, so results never
depend on which one got picked.  Set FLIPLAB_PURE_PYTHON=1 to force the
fallback (useful for debugging and for the equivalence test).

Time is macroscopic throughout: site rates already carry the (2N)^2
speed-up, so a run to t_end=1.0 is one unit of diffusive time.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence, Union

import numpy as np
from scipy.integrate import quad

from .lattice_core import (
    AsymmetryProfile,
    IntegerInterface,
    ModelKind,
    PairInterface,
    RateTable,
    build_rates,
)

if os.environ.get("FLIPLAB_PURE_PYTHON", "") not in ("", "0"):
    from . import _kernels_py as _impl
    _BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]
        _BACKEND = "compiled"
    except ImportError:
        from . import _kernels_py as _impl
        _BACKEND = "python"

_MODEL_ID = {ModelKind.Bridge: 0, ModelKind.BridgeWall: 1, ModelKind.Pair: 2}


def kernel_backend() -> str:
    """Which event-loop implementation is active: 'compiled' or 'python'."""
    return _BACKEND


class Event(NamedTuple):
    time: float
    site: int
    interface_id: int  # 1 = single/upper, 2 = lower
    direction: int     # +1 up-flip, -1 down-flip


@dataclass
class ReflectionMeasure:
    """Mass accrued at blocked flips, site by site.

    mass_per_site[k] = (line rate at k) * (total blocked time at k); the
    line rate is 2 q(k) / (2N)^{3/2}.  When the generating run kept its
    interval log, `sites/starts/ends` list every maximal blocked interval,
    which is what time-dependent integrals need.
    """

    n: int
    mass_per_site: np.ndarray          # float64, length 2N+1, zero at ends
    line_rate: np.ndarray              # float64, length 2N+1
    sites: Optional[np.ndarray] = None      # int32 per interval
    starts: Optional[np.ndarray] = None     # float64
    ends: Optional[np.ndarray] = None       # float64
    interface_id: int = 1              # 1 = single/upper contact, 2 = lower

    @property
    def total_mass(self) -> float:
        return float(self.mass_per_site.sum())

    @property
    def has_intervals(self) -> bool:
        return self.sites is not None

    def space_integral(self, g: Callable[[float], float]) -> float:
        """sum_k g(k/2N) * mass_per_site[k]  (time-independent integrand)."""
        two_n = 2 * self.n
        ks = np.nonzero(self.mass_per_site)[0]
        return float(sum(g(k / two_n) * self.mass_per_site[k] for k in ks))


@dataclass
class Trajectory:
    model: ModelKind
    initial: Union[IntegerInterface, PairInterface]
    rates: RateTable
    t_final: float
    status: int                      # 0 t_end reached, 1 max_events, 2 absorbed
    n_events: int
    times: np.ndarray                # empty unless record_events
    sites: np.ndarray
    ifaces: np.ndarray               # 0-based interface index
    dirs: np.ndarray
    snapshot_times: np.ndarray
    snapshot_heights: np.ndarray     # int64 (n_snaps, n_ifaces, 2N+1)
    final_heights: np.ndarray        # int64 (n_ifaces, 2N+1)
    record_events: bool = True

    @property
    def n(self) -> int:
        return self.rates.n

    @property
    def n_interfaces(self) -> int:
        return self.final_heights.shape[0]

    def events(self) -> list:
        return [Event(float(t), int(k), int(i) + 1, int(d))
                for t, k, i, d in zip(self.times, self.sites, self.ifaces, self.dirs)]

    def _initial_heights(self) -> np.ndarray:
        if isinstance(self.initial, PairInterface):
            return np.stack([self.initial.upper.heights, self.initial.lower.heights])
        return self.initial.heights[None, :]

    def heights_at(self, t: float) -> np.ndarray:
        """Raw integer heights at time t (cadlag: includes flips at exactly t)."""
        if t < 0.0 or t > self.t_final:
            raise ValueError(f"t={t} outside [0, {self.t_final}]")
        if not self.record_events:
            raise ValueError("run was made with record_events=False; "
                             "only snapshots are available")
        H = self._initial_heights().copy()
        idx = int(np.searchsorted(self.times, t, side="right"))
        if idx:
            np.add.at(H, (self.ifaces[:idx].astype(np.intp),
                          self.sites[:idx].astype(np.intp)),
                      2 * self.dirs[:idx].astype(np.int64))
        return H

    def _wrap_state(self, H: np.ndarray):
        if self.model is ModelKind.Pair:
            return PairInterface(IntegerInterface(self.n, H[0]),
                                 IntegerInterface(self.n, H[1]))
        return IntegerInterface(self.n, H[0])

    def state_at(self, t: float):
        return self._wrap_state(self.heights_at(t))

    @property
    def final_state(self):
        return self._wrap_state(self.final_heights)

    def snapshot_state(self, i: int):
        return self._wrap_state(self.snapshot_heights[i])


@dataclass
class SimulationRun:
    trajectory: Trajectory
    zetas: tuple  # () bridge, (zeta,) wall, (zeta_upper, zeta_lower) pair

    @property
    def zeta(self) -> ReflectionMeasure:
        if len(self.zetas) != 1:
            raise ValueError("single reflection measure only exists for the wall model")
        return self.zetas[0]


def _coerce_sigma(sigma) -> AsymmetryProfile:
    if isinstance(sigma, AsymmetryProfile):
        return sigma
    if callable(sigma):
        return AsymmetryProfile(sigma)
    if isinstance(sigma, str):
        return AsymmetryProfile.from_spec(sigma)
    return AsymmetryProfile.constant(float(sigma))


def _coerce_model(model) -> ModelKind:
    return model if isinstance(model, ModelKind) else ModelKind(model)


def simulate(model, initial, sigma, t_end, *, seed=None, rng=None,
             snapshot_times: Optional[Sequence[float]] = None,
             max_events: Optional[int] = None, record_events: bool = True,
             rebuild_every: int = 4096, debug: bool = False) -> SimulationRun:
    """Run the flip dynamics on [0, t_end].

    initial must match the model (PairInterface for Pair, nonnegative
    interface for BridgeWall).  Exactly one of seed/rng drives the run;
    passing the same seed always reproduces the same trajectory,
    regardless of kernel backend.
    """
    model = _coerce_model(model)
    t_end = float(t_end)
    if t_end < 0.0 or not math.isfinite(t_end):
        raise ValueError(f"t_end must be a finite time >= 0, got {t_end}")

    if model is ModelKind.Pair:
        if not isinstance(initial, PairInterface):
            raise TypeError("Pair model needs a PairInterface initial state")
        n = initial.n
        H0 = np.stack([initial.upper.heights, initial.lower.heights])
    else:
        if not isinstance(initial, IntegerInterface):
            raise TypeError(f"{model.value} model needs an IntegerInterface initial state")
        if model is ModelKind.BridgeWall and not initial.is_nonnegative():
            raise ValueError("wall model requires heights >= 0")
        n = initial.n
        H0 = initial.heights[None, :]
    if n < 1:
        raise ValueError("dynamics needs n >= 1")

    rates = build_rates(_coerce_sigma(sigma), n)

    if rng is not None and seed is not None:
        raise ValueError("pass either seed or rng, not both")
    gen = rng if rng is not None else np.random.Generator(np.random.PCG64(seed))

    if snapshot_times is None:
        snap = np.empty(0)
    else:
        snap = np.asarray(snapshot_times, dtype=np.float64)
        if snap.ndim != 1 or (len(snap) > 1 and np.any(np.diff(snap) < 0)):
            raise ValueError("snapshot_times must be a 1-d nondecreasing sequence")
        if len(snap) and (snap[0] < 0.0 or snap[-1] > t_end):
            raise ValueError("snapshot_times must lie inside [0, t_end]")

    out = _impl.run_gillespie(_MODEL_ID[model], H0, rates.p, rates.q, t_end,
                              snap, gen, max_events=max_events,
                              record_events=record_events,
                              rebuild_every=rebuild_every, debug=debug)

    traj = Trajectory(
        model=model, initial=initial, rates=rates,
        t_final=out["t_final"], status=out["status"], n_events=out["n_events"],
        times=out["ev_time"], sites=out["ev_site"], ifaces=out["ev_iface"],
        dirs=out["ev_dir"],
        snapshot_times=snap[:out["snap_count"]],
        snapshot_heights=out["snap_heights"],
        final_heights=out["final_heights"],
        record_events=record_events,
    )

    two_n = 2 * n
    line_rate = np.zeros(two_n + 1)
    line_rate[1:two_n] = 2.0 * rates.q[1:two_n] / two_n ** 1.5
    zetas = tuple(
        ReflectionMeasure(n=n, mass_per_site=out["z_mass"][m], line_rate=line_rate,
                          sites=out["z_site"][m], starts=out["z_start"][m],
                          ends=out["z_end"][m], interface_id=m + 1)
        for m in range(len(out["z_site"]))
    )
    return SimulationRun(trajectory=traj, zetas=zetas)


def interpolate(traj: Trajectory, t: float) -> np.ndarray:
    """Linearly interpolated scaled profile at time t.

    The raw process is piecewise constant; for tightness-style functionals
    we interpolate between its values on the grid m/(2N)^2.  Returns h
    values (heights / sqrt(2N)) of shape (2N+1,) for single-interface
    models and (2, 2N+1) for pairs.  Raises if the right grid point falls
    beyond the simulated horizon.
    """
    two_n = 2 * traj.n
    s = t * two_n ** 2
    m = math.floor(s)
    w = s - m
    scale = 1.0 / math.sqrt(two_n)
    left = traj.heights_at(m / two_n ** 2).astype(np.float64)
    if w == 0.0:
        out = left * scale
    else:
        t_right = (m + 1) / two_n ** 2
        if t_right > traj.t_final:
            raise ValueError(
                f"interpolation at t={t} needs the state at {t_right}, "
                f"beyond the simulated horizon {traj.t_final}")
        right = traj.heights_at(t_right).astype(np.float64)
        out = ((1.0 - w) * left + w * right) * scale
    return out[0] if traj.n_interfaces == 1 else out


def zeta_integral(measure: ReflectionMeasure, f: Callable[[float, float], float],
                  *, rtol: float = 1e-8) -> float:
    """integral of f(t, x) against the reflection measure.

    Needs the interval log (present on measures coming straight out of
    simulate); each maximal blocked interval contributes
    line_rate(k) * int_a^b f(t, k/2N) dt, evaluated by adaptive quadrature.
    """
    if not measure.has_intervals:
        raise ValueError("measure has no interval log; only space_integral "
                         "is available")
    two_n = 2 * measure.n
    total = 0.0
    for k, a, b in zip(measure.sites, measure.starts, measure.ends):
        x = k / two_n
        val, _ = quad(f, a, b, args=(x,), epsrel=rtol, epsabs=1e-14)
        total += measure.line_rate[k] * val
    return total


@dataclass
class SupportReport:
    n_intervals: int
    n_violations: int
    mass: float
    height_integral: float  # wall: int h dzeta ; pair: int (h_up - h_lo) dzeta

    @property
    def ok(self) -> bool:
        return self.n_violations == 0


def support_check(traj: Trajectory, measure: ReflectionMeasure) -> SupportReport:
    """Verify the reflection measure only ever charged blocked sites.

    Replays the trajectory and checks, for every logged interval, that the
    site really was blocked at the interval start and that no flip touched
    its neighbourhood strictly inside the interval.  Also accumulates the
    exact height integral over the measure: for the wall this must come
    out as mass / sqrt(2N) (the blocked site sits at height 1); for pairs
    the gap integral must vanish.
    """
    if not measure.has_intervals:
        raise ValueError("support check needs the interval log")
    if not traj.record_events:
        raise ValueError("support check needs recorded events")
    two_n = 2 * traj.n
    scale = 1.0 / math.sqrt(two_n)
    wall = traj.model is ModelKind.BridgeWall
    own_if = measure.interface_id - 1
    n_viol = 0
    h_int = 0.0
    for k, a, b in zip(measure.sites, measure.starts, measure.ends):
        k = int(k)
        H = traj.heights_at(float(a))
        if wall:
            d = H[0, k + 1] - 2 * H[0, k] + H[0, k - 1]
            if not (d < 0 and H[0, k] == 1):
                n_viol += 1
            h_int += measure.line_rate[k] * (b - a) * H[0, k] * scale
        else:
            row = H[own_if]
            d = row[k + 1] - 2 * row[k] + row[k - 1]
            want_sign = -1 if own_if == 0 else 1
            if not (d * want_sign > 0 and H[0, k] == H[1, k]):
                n_viol += 1
            h_int += measure.line_rate[k] * (b - a) * (H[0, k] - H[1, k]) * scale
        # nothing may move the site's neighbourhood strictly inside (a, b):
        # any such flip would have unblocked it, ending the interval
        lo = int(np.searchsorted(traj.times, a, side="right"))
        hi = int(np.searchsorted(traj.times, b, side="left"))
        if hi > lo:
            ks = traj.sites[lo:hi]
            js = traj.ifaces[lo:hi]
            touched = (js == own_if) & (np.abs(ks - k) <= 1)
            if not wall:
                touched |= (js != own_if) & (ks == k)
            if bool(np.any(touched)):
                n_viol += 1
    return SupportReport(n_intervals=len(measure.sites), n_violations=n_viol,
                         mass=measure.total_mass, height_integral=h_int)


__all__ = [
    "Event", "ReflectionMeasure", "Trajectory", "SimulationRun",
    "SupportReport", "simulate", "interpolate", "zeta_integral",
    "support_check", "kernel_backend",
]
