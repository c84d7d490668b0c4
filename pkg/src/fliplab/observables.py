"""Observables along flip trajectories.

Fourier modes of the interface, the discrete dynamical martingales M / L / K
with their exact compensators, block-average statistics of the particle
picture, fractional Sobolev norms, and a metric on reflection measures.

Everything here replays recorded events; time integrals of quantities that
are piecewise constant between flips are computed exactly, interval by
interval (no time-discretization error anywhere in this module).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .dynamics import SimulationRun, zeta_integral
from .lattice_core import IntegerInterface, ModelKind, ParticleConfiguration
from .continuum import GridFunction


# ---------------------------------------------------------------------------
# Fourier modes

@dataclass(frozen=True)
class FourierCoefficients:
    n_modes: int
    values: np.ndarray  # entries 0..n_modes


def fourier_matrix(n: int, n_modes: int) -> np.ndarray:
    """Coefficient matrix C with rows c_{m,.}: mode m of a height profile is
    sum_k C[m,k] h(k/2N).  Mode 0 is the plain lattice average; mode m >= 1
    pairs against the cosine basis through exact second differences, which
    keeps every entry below sqrt(2)/(2N)."""
    two_n = 2 * n
    k = np.arange(two_n + 1)
    C = np.empty((n_modes + 1, two_n + 1))
    C[0] = 1.0 / two_n
    for mode in range(1, n_modes + 1):
        amp = 4.0 * math.sqrt(2.0) * n / (mode * math.pi) ** 2
        C[mode] = amp * np.cos(mode * np.pi * k / two_n) \
            * (1.0 - math.cos(mode * math.pi / two_n))
    return C


def fourier(iface: IntegerInterface, n_modes: int) -> FourierCoefficients:
    """Fourier coefficients of the diffusively rescaled interface."""
    if n_modes < 0:
        raise ValueError("n_modes must be >= 0")
    n = iface.n
    h = iface.heights / math.sqrt(2 * n)
    return FourierCoefficients(n_modes, fourier_matrix(n, n_modes) @ h)


# ---------------------------------------------------------------------------
# local functionals of the particle picture

@dataclass(frozen=True)
class LocalFunctional:
    """Map from l-bit windows to reals; table[idx] with idx reading the
    window big-endian (first bit most significant)."""

    window: int
    table: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.table, dtype=np.float64)
        if self.window < 1 or self.window > 16:
            raise ValueError("window size must be in 1..16")
        if t.shape != (2 ** self.window,):
            raise ValueError(f"table must have 2^{self.window} entries")
        if not np.all(np.isfinite(t)):
            raise ValueError("table must be finite")
        object.__setattr__(self, "table", t)


def default_local_functional() -> LocalFunctional:
    """The two-site disagreement functional 2 eta1 (1-eta2) + 2 (1-eta1) eta2."""
    return LocalFunctional(2, np.array([0.0, 2.0, 2.0, 0.0]))


def phi_tilde(phi: LocalFunctional, a) -> Union[float, np.ndarray]:
    """Expectation of the local functional under iid Bernoulli(a) bits."""
    a_arr = np.asarray(a, dtype=np.float64)
    if np.any(a_arr < 0.0) or np.any(a_arr > 1.0):
        raise ValueError("density must lie in [0, 1]")
    l = phi.window
    idx = np.arange(2 ** l)
    ones = np.array([bin(i).count("1") for i in idx])
    probs = a_arr[..., None] ** ones * (1.0 - a_arr[..., None]) ** (l - ones)
    out = probs @ phi.table
    return float(out) if np.isscalar(a) or a_arr.ndim == 0 else out


def _circ_window_sums(arr: np.ndarray, start_off: int, size: int) -> np.ndarray:
    """sums[i] = sum of arr[(i+start_off+r) mod L] over r in 0..size-1."""
    L = len(arr)
    reps = (L + size) // L + 1
    cs = np.concatenate([[0.0], np.cumsum(np.tile(arr, reps))])
    i0 = (np.arange(L) + start_off) % L
    return cs[i0 + size] - cs[i0]


def v_statistic(eta: ParticleConfiguration, epsilon: float,
                phi: LocalFunctional = None) -> float:
    """Block-average defect sum over all circular positions:

        V = sum_i | box-average of Phi over shifts j in [i-l, i+l]
                    - phi_tilde(density of the bits that box reads) |

    with l = floor(epsilon * N).  The density window is exactly the span of
    bits entering the box (size 2l + window), which makes V invariant under
    bit reversal for palindromic Phi and gives the alternating configuration
    the clean value 2N.
    """
    if phi is None:
        phi = default_local_functional()
    bits = np.asarray(eta.bits, dtype=np.int64)
    two_n = len(bits)
    n = two_n // 2
    l = int(math.floor(epsilon * n))
    if l < 1:
        raise ValueError("window floor(epsilon*N) must be at least 1")
    lf = phi.window
    # window words read by Phi at every circular start position
    idx = np.zeros(two_n, dtype=np.int64)
    for r in range(lf):
        idx = (idx << 1) | np.roll(bits, -r)
    phiv = phi.table[idx]
    box_phi = _circ_window_sums(phiv, -l, 2 * l + 1) / (2 * l + 1)
    dens = _circ_window_sums(bits.astype(np.float64), -l, 2 * l + lf) / (2 * l + lf)
    return float(np.abs(box_phi - phi_tilde(phi, dens)).sum())


# ---------------------------------------------------------------------------
# exact event-timeline replay shared by the martingale observables

class _Timelines:
    """Per-interface piecewise-constant site data between consecutive events.

    bounds has n_int+1 entries; interval i spans [bounds[i], bounds[i+1])
    and row i of heights/curv is the state holding there (cadlag).
    """

    def __init__(self, run: SimulationRun, t_max: float):
        traj = run.trajectory
        if not traj.record_events:
            raise ValueError("martingale replay needs recorded events")
        if t_max > traj.t_final:
            raise ValueError(f"t={t_max} beyond the simulated horizon")
        self.traj = traj
        n = traj.n
        two_n = 2 * n
        cut = int(np.searchsorted(traj.times, t_max, side="right"))
        self.bounds = np.concatenate([[0.0], traj.times[:cut], [t_max]])
        n_int = len(self.bounds) - 1
        H0 = traj._initial_heights()
        n_if = H0.shape[0]
        self.heights = []
        self.curv = []
        for m in range(n_if):
            mask = traj.ifaces[:cut] == m
            rows = np.where(mask)[0] + 1
            kk = traj.sites[:cut][mask].astype(np.intp)
            dd = traj.dirs[:cut][mask].astype(np.int64)
            dh = np.zeros((n_int, two_n + 1), dtype=np.int64)
            np.add.at(dh, (rows, kk), 2 * dd)
            H = H0[m][None, :] + np.cumsum(dh, axis=0)
            self.heights.append(H)
            c = np.zeros_like(H)
            c[:, 1:two_n] = H[:, 2:] - 2 * H[:, 1:two_n] + H[:, :two_n - 1]
            self.curv.append(c)

    def integrate(self, integrand: np.ndarray, t: float) -> float:
        """Exact integral over [0, t] of a per-interval piecewise value."""
        b = np.minimum(self.bounds, t)
        return float(np.dot(integrand, np.diff(b)))


def _active_masks(model: ModelKind, tl: _Timelines, interface: int):
    """(up_ok, down_ok) boolean interval arrays for one interface, and the
    (up_rate, down_rate) site arrays that drive those flips."""
    rates = tl.traj.rates
    if model is ModelKind.Bridge:
        c = tl.curv[0]
        return (c > 0), (c < 0), rates.p, rates.q
    if model is ModelKind.BridgeWall:
        c, H = tl.curv[0], tl.heights[0]
        return (c > 0), (c < 0) & (H > 1), rates.p, rates.q
    c0, c1 = tl.curv
    H0, H1 = tl.heights
    if interface == 1:
        return (c0 > 0), (c0 < 0) & (H0 > H1), rates.p, rates.q
    return (c1 > 0) & (H1 < H0), (c1 < 0), rates.q, rates.p


def _phi_grid(phi, n: int) -> np.ndarray:
    two_n = 2 * n
    if callable(phi):
        vals = np.array([float(phi(k / two_n)) for k in range(two_n + 1)])
    else:
        vals = np.asarray(phi, dtype=np.float64)
        if vals.shape != (two_n + 1,):
            raise ValueError("test function array must have 2N+1 values")
    if abs(vals[0]) > 1e-12 or abs(vals[-1]) > 1e-12:
        raise ValueError("test function must vanish at both endpoints")
    return vals


def _pairing_weight(n: int) -> float:
    return 1.0 / (2 * n)


def _zeta_pairing(measure: ReflectionMeasure, phi_vals: np.ndarray,
                  t: float) -> float:
    """time-and-space pairing of phi (space only) against zeta up to t."""
    if not measure.has_intervals:
        raise ValueError("zeta pairing needs the interval log")
    if len(measure.sites) == 0:
        return 0.0
    sites = np.asarray(measure.sites, dtype=np.intp)
    starts = np.asarray(measure.starts)
    ends = np.asarray(measure.ends)
    dur = np.clip(np.minimum(ends, t) - starts, 0.0, None)
    return float(np.sum(phi_vals[sites] * measure.line_rate[sites] * dur))


def _require_interface(model: ModelKind, interface: int):
    if interface not in (1, 2):
        raise ValueError("interface must be 1 or 2")
    if interface == 2 and model is not ModelKind.Pair:
        raise ValueError("interface 2 exists only for the pair model")


def martingale_M(run: SimulationRun, phi, times: Sequence[float], *,
                 interface: int = 1) -> np.ndarray:
    """The dynamical martingale of <h, phi>_N along one interface.

    M_t = <h_t,phi> - <h_0,phi> - int_0^t [ sym + s*asym + s*zeta-rate ] ds
    where sym is the discrete half-Laplacian term, asym the (p - total/2)
    excess on flippable sites, s = +1 for the upper/single interface and
    -1 for the lower one, and the zeta term only exists when the model
    carries a reflection measure.  All integrals are exact.
    """
    traj = run.trajectory
    model = traj.model
    _require_interface(model, interface)
    times = np.atleast_1d(np.asarray(times, dtype=np.float64))
    n = traj.n
    two_n = 2 * n
    scale = 1.0 / math.sqrt(two_n)
    phi_vals = _phi_grid(phi, n)
    w = _pairing_weight(n)
    t_max = float(times.max()) if len(times) else 0.0
    tl = _Timelines(run, t_max)
    m_idx = interface - 1
    sign = 1.0 if interface == 1 else -1.0

    total = float(two_n) ** 2
    curv = tl.curv[m_idx]
    sym = (total / 2.0) * scale * w * (curv @ phi_vals)
    excess = traj.rates.p - total / 2.0
    asym = (2.0 * scale) * w * ((curv != 0).astype(np.float64) @ (excess * phi_vals))

    H0 = traj._initial_heights()[m_idx]
    pair0 = w * float(phi_vals @ H0) * scale
    out = np.empty(len(times))
    for i, t in enumerate(times):
        H_t = traj.heights_at(float(t))[m_idx]
        pair_t = w * float(phi_vals @ H_t) * scale
        drift = tl.integrate(sym, float(t)) + sign * tl.integrate(asym, float(t))
        z = 0.0
        if model is not ModelKind.Bridge:
            z = sign * _zeta_pairing(run.zetas[m_idx], phi_vals, float(t))
        out[i] = pair_t - pair0 - drift - z
    return out


def l_bracket_integrand(run: SimulationRun, phi, *, interface: int = 1):
    """(bounds, values): the predictable quadratic-variation density of
    M(phi), piecewise constant between events.  Never exceeds 4 <phi,phi>_N
    because active rates sum to at most (2N)^2 per site."""
    traj = run.trajectory
    _require_interface(traj.model, interface)
    phi_vals = _phi_grid(phi, traj.n)
    tl = _Timelines(run, traj.t_final)
    up, dn, r_up, r_dn = _active_masks(traj.model, tl, interface)
    total = float(2 * traj.n) ** 2
    w = _pairing_weight(traj.n)
    phi2 = phi_vals ** 2
    vals = (4.0 / total) * w * (up @ (r_up * phi2) + dn @ (r_dn * phi2))
    return tl.bounds, vals


def martingale_L(run: SimulationRun, phi, times: Sequence[float], *,
                 interface: int = 1) -> np.ndarray:
    """L_t = M_t^2 minus the exact bracket compensator of M."""
    traj = run.trajectory
    times = np.atleast_1d(np.asarray(times, dtype=np.float64))
    M = martingale_M(run, phi, times, interface=interface)
    _require_interface(traj.model, interface)
    phi_vals = _phi_grid(phi, traj.n)
    t_max = float(times.max()) if len(times) else 0.0
    tl = _Timelines(run, t_max)
    up, dn, r_up, r_dn = _active_masks(traj.model, tl, interface)
    total = float(2 * traj.n) ** 2
    w = _pairing_weight(traj.n)
    phi2 = phi_vals ** 2
    integrand = (4.0 / total) * w * (up @ (r_up * phi2) + dn @ (r_dn * phi2))
    out = np.empty(len(times))
    for i, t in enumerate(times):
        out[i] = M[i] ** 2 - tl.integrate(integrand, float(t))
    return out


def martingale_K(run: SimulationRun, phi, psi,
                 times: Sequence[float]) -> np.ndarray:
    """K_t = M^(1)_t(phi) * M^(2)_t(psi); the cross bracket vanishes because
    the two interfaces never flip simultaneously.  Pair model only."""
    if run.trajectory.model is not ModelKind.Pair:
        raise ValueError("K pairs the two interfaces of the pair model")
    M1 = martingale_M(run, phi, times, interface=1)
    M2 = martingale_M(run, psi, times, interface=2)
    return M1 * M2


def fourier_drift_residual(run: SimulationRun, n_modes: int, s: float,
                           t: float, *, interface: int = 1) -> np.ndarray:
    """hhat_t(m) - hhat_s(m) - int_s^t (compensator of hhat(m)) du per mode.

    The compensator uses the complete jump rates (blocked flips excluded),
    so the result is a centered martingale increment mode by mode.
    """
    traj = run.trajectory
    model = traj.model
    _require_interface(model, interface)
    if not (0.0 <= s <= t <= traj.t_final):
        raise ValueError("need 0 <= s <= t <= t_final")
    n = traj.n
    scale = 1.0 / math.sqrt(2 * n)
    C = fourier_matrix(n, n_modes)
    tl = _Timelines(run, t)
    up, dn, r_up, r_dn = _active_masks(model, tl, interface)
    # per-interval drift of every mode: (2/sqrt(2N)) * C . (r_up 1up - r_dn 1dn)
    site_drift = up * r_up[None, :] - dn * r_dn[None, :]
    mode_drift = (2.0 * scale) * site_drift @ C.T          # (n_int, modes)
    b = np.clip(tl.bounds, s, t)
    integral = np.diff(b) @ mode_drift
    m_idx = interface - 1
    h_t = traj.heights_at(t)[m_idx] * scale
    h_s = traj.heights_at(s)[m_idx] * scale
    return C @ h_t - C @ h_s - integral


# ---------------------------------------------------------------------------
# norms and the measure metric

def slobodeckij_norm(h: GridFunction, eta: float, r: float) -> float:
    """Fractional Sobolev norm ( int |h|^r + double-int |h(x)-h(y)|^r /
    |x-y|^{eta r + 1} )^{1/r} by midpoint quadrature on the cell grid,
    skipping the diagonal cells.  For eta >= 1/2 and rough h the value
    grows without bound under refinement; no error is raised.
    """
    if eta <= 0.0:
        raise ValueError("eta must be positive")
    if r < 1.0:
        raise ValueError("r must be >= 1")
    m = h.m
    v = h.values
    vm = 0.5 * (v[:-1] + v[1:])
    xm = (np.arange(m) + 0.5) / m
    lr = float(np.sum(np.abs(vm) ** r)) / m
    dx = np.abs(xm[:, None] - xm[None, :])
    dv = np.abs(vm[:, None] - vm[None, :])
    off = ~np.eye(m, dtype=bool)
    dbl = float(np.sum(dv[off] ** r / dx[off] ** (eta * r + 1.0))) / m ** 2
    return (lr + dbl) ** (1.0 / r)


def measure_test_functions(k_max: int):
    """The documented enumeration phi_k(t,x), k = 1..k_max: monomials
    t^a x^b ordered by (a+b, a), each taken with the two time cutoffs
    (1 - e^{-p t}) for p = 1, 2, always multiplied by x(1-x)."""
    pairs = []
    deg = 0
    while len(pairs) * 2 < k_max:
        for a in range(deg + 1):
            pairs.append((a, deg - a))
        deg += 1
    funcs = []
    for (a, b) in pairs:
        for p in (1, 2):
            def f(t, x, a=a, b=b, p=p):
                return x * (1.0 - x) * (t ** a) * (x ** b) * (1.0 - math.exp(-p * t))
            funcs.append(f)
            if len(funcs) == k_max:
                return funcs
    return funcs


def measure_distance(z1: ReflectionMeasure, z2: ReflectionMeasure,
                     k_max: int = 20) -> float:
    """Metric on reflection measures: sum over the documented test-function
    enumeration of 2^{-k} (1 and |difference of pairings|); truncation adds
    at most 2^{-k_max}."""
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    if not (z1.has_intervals and z2.has_intervals):
        raise ValueError("measure_distance needs interval logs on both sides")
    d = 0.0
    for k, f in enumerate(measure_test_functions(k_max), start=1):
        diff = abs(zeta_integral(z1, f) - zeta_integral(z2, f))
        d += 2.0 ** (-k) * min(1.0, diff)
    return d


__all__ = [
    "FourierCoefficients", "fourier", "fourier_matrix", "LocalFunctional",
    "default_local_functional", "phi_tilde", "v_statistic", "martingale_M",
    "martingale_L", "martingale_K", "l_bracket_integrand",
    "fourier_drift_residual", "slobodeckij_norm", "measure_test_functions",
    "measure_distance",
]
