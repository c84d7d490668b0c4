"""Continuum-side objects: limiting-law samplers, SPDE integrators, and
the discrete heat kernel / mild formulation.

Conventions
-----------
* Grid functions live on x_j = j/m with Dirichlet ends.
* The stochastic heat equation integrated here is
      dh = (1/2) dxx h dt + sigma(x) dt + dW,
  discretized with a theta-scheme (theta = 1/2 by default): diffusion
  solved implicitly through a tridiagonal system, drift explicit, and the
  space-time white noise entering as independent N(0, dt*m) increments
  per interior cell inside the solve.  With theta = 1/2 the per-mode
  stationary variance is exact for every dt, so long-run statistics carry
  no time-step bias.
* Reflected equations use operator splitting with an exact integration
  of the stiff penalization drift eps^{-1} max(-h, 0): on a substep a
  negative cell decays by exp(-dt/eps) (pairs: the negative gap decays by
  exp(-2 dt/eps) with the center untouched), and the mass the penalization
  injected is accumulated cell by cell.  See rshe_integrate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import cho_solve_banded, cholesky_banded

from .lattice_core import AsymmetryProfile, RateTable


@dataclass(frozen=True)
class GridFunction:
    """Real function on the uniform grid j/m, pinned to 0 at both ends."""

    m: int
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.shape != (self.m + 1,):
            raise ValueError(f"need {self.m + 1} values, got shape {v.shape}")
        tol = 1e-9 * max(1.0, float(np.abs(v).max()))
        if abs(v[0]) > tol or abs(v[self.m]) > tol:
            raise ValueError("grid function must vanish at both ends")
        v[0] = 0.0
        v[self.m] = 0.0
        object.__setattr__(self, "values", v)

    @property
    def x(self) -> np.ndarray:
        return np.arange(self.m + 1) / self.m

    def at(self, x: float) -> float:
        """Piecewise-linear evaluation."""
        s = x * self.m
        j = min(int(math.floor(s)), self.m - 1)
        w = s - j
        return float((1.0 - w) * self.values[j] + w * self.values[j + 1])


def _sigma(sigma) -> AsymmetryProfile:
    if isinstance(sigma, AsymmetryProfile):
        return sigma
    if callable(sigma):
        return AsymmetryProfile(sigma)
    if isinstance(sigma, str):
        return AsymmetryProfile.from_spec(sigma)
    return AsymmetryProfile.constant(float(sigma))


# ---------------------------------------------------------------------------
# exact samplers of the limiting laws

_BRIDGE_CHOL: dict = {}


def _bridge_factor(m: int) -> np.ndarray:
    """Cholesky factor of the bridge covariance min(x,y) - xy on the
    interior grid; cached per m."""
    if m not in _BRIDGE_CHOL:
        x = np.arange(1, m) / m
        C = np.minimum(x[:, None], x[None, :]) - x[:, None] * x[None, :]
        _BRIDGE_CHOL[m] = np.linalg.cholesky(C)
    return _BRIDGE_CHOL[m]


def bridge_ensemble(m: int, size: int, rng) -> np.ndarray:
    """size exact Brownian-bridge draws, (size, m+1)."""
    L = _bridge_factor(m)
    z = rng.standard_normal((size, m - 1))
    out = np.zeros((size, m + 1))
    out[:, 1:m] = z @ L.T
    return out


def sample_bridge(m: int, seed=None, *, rng=None) -> GridFunction:
    """One exact Gaussian bridge: covariance min(x,y) - xy on the grid."""
    if m < 2:
        raise ValueError("need m >= 2")
    gen = _rng_of(rng, seed)
    return GridFunction(m, bridge_ensemble(m, 1, gen)[0])


def excursion_ensemble(m: int, size: int, rng) -> np.ndarray:
    """Cyclic shift of bridges at their (grid) argmin: nonnegative paths
    approximating the normalized excursion."""
    B = bridge_ensemble(m, size, rng)
    pivot = np.argmin(B[:, :m], axis=1)
    idx = (pivot[:, None] + np.arange(m)[None, :]) % m
    rolled = np.take_along_axis(B[:, :m], idx, axis=1) \
        - B[np.arange(size), pivot][:, None]
    out = np.zeros((size, m + 1))
    out[:, :m] = rolled
    return out


def sample_excursion(m: int, seed=None, *, rng=None) -> GridFunction:
    """Normalized excursion via the cyclic-shift (rotation at the argmin)
    construction applied to a sampled bridge."""
    if m < 2:
        raise ValueError("need m >= 2")
    gen = _rng_of(rng, seed)
    return GridFunction(m, excursion_ensemble(m, 1, gen)[0])


def sample_watermelon(n_lattice: int, seed=None, *, rng=None
                      ) -> Tuple[GridFunction, GridFunction]:
    """Ordered pair of paths approximating the non-crossing (Dyson-type)
    bridge pair: an exact uniform lattice pair, diffusively rescaled.

    The limiting pair solves an SDE with a 1/(h1-h2) repulsion that is
    singular at the tied endpoints, so we sample the combinatorial object
    exactly instead of integrating the SDE.
    """
    if n_lattice < 32:
        raise ValueError("need n_lattice >= 32 for a decent approximation")
    from .gibbs import uniform_sample

    gen = _rng_of(rng, seed)
    H = uniform_sample("pair", n_lattice, 1, rng=gen)[0]
    scale = 1.0 / math.sqrt(2 * n_lattice)
    m = 2 * n_lattice
    return (GridFunction(m, H[0] * scale), GridFunction(m, H[1] * scale))


def _rng_of(rng, seed):
    if rng is not None and seed is not None:
        raise ValueError("pass either seed or rng, not both")
    return rng if rng is not None else np.random.Generator(np.random.PCG64(seed))


# ---------------------------------------------------------------------------
# weighted area and importance reweighting

def area_sigma(h, sigma) -> float:
    """2 * integral of sigma(x) h(x) dx (pairs: of sigma * (upper-lower)),
    by the trapezoid rule on the grid."""
    sig = _sigma(sigma)
    if isinstance(h, (tuple, list)):
        up, lo = h
        if up.m != lo.m:
            raise ValueError("pair components must share the grid")
        vals = up.values - lo.values
        x = up.x
    else:
        vals = h.values
        x = h.x
    try:
        sv = np.asarray(sig(x), dtype=float)
        if sv.shape != x.shape:
            raise ValueError
    except Exception:
        sv = np.array([float(sig(xi)) for xi in x])  # scalar-only callables
    return 2.0 * float(np.trapezoid(sv * vals, x))


@dataclass
class ReweightResult:
    estimate: float
    stderr: float
    ess: float
    n_samples: int
    degenerate: bool


def reweighted_expectation(F: Callable, sampler: Callable, sigma,
                           n_samples: int, seed=None, *, rng=None
                           ) -> ReweightResult:
    """Self-normalized importance sampling for the area-tilted law:
    E_tilted[F] = E[F e^A] / E[e^A] with A the weighted area of the
    sampled path.  sampler(rng) must return a GridFunction or a pair.

    Standard error by the delta method; effective sample size below 10
    raises the degeneracy flag instead of an error.
    """
    if n_samples < 100:
        raise ValueError("need n_samples >= 100")
    gen = _rng_of(rng, seed)
    logw = np.empty(n_samples)
    fv = np.empty(n_samples)
    for i in range(n_samples):
        h = sampler(gen)
        logw[i] = area_sigma(h, sigma)
        fv[i] = F(h)
    w = np.exp(logw - logw.max())
    sw = w.sum()
    est = float((w * fv).sum() / sw)
    var = float((w ** 2 * (fv - est) ** 2).sum() / sw ** 2)
    ess = float(sw ** 2 / (w ** 2).sum())
    return ReweightResult(estimate=est, stderr=math.sqrt(var), ess=ess,
                          n_samples=n_samples, degenerate=ess < 10)


# ---------------------------------------------------------------------------
# theta-scheme SPDE integrators

def dt_max(m: int, theta: float = 0.5) -> float:
    """Largest stable time step: unconditional for theta >= 1/2, else the
    classical bound 2/((1-2 theta) |lambda_max|) with |lambda_max| <= 2 m^2."""
    if theta >= 0.5:
        return math.inf
    return 1.0 / ((1.0 - 2.0 * theta) * m * m)


@dataclass
class SpdeConfig:
    m: int
    dt: float
    T: float
    sigma: AsymmetryProfile
    penalization_epsilon: float = 1e-4
    seed: Optional[int] = None
    theta: float = 0.5
    noise: bool = True

    def __post_init__(self):
        self.sigma = _sigma(self.sigma)
        if self.m < 2:
            raise ValueError("need m >= 2")
        if not (0.0 < self.dt <= self.T):
            raise ValueError("need 0 < dt <= T")
        if not (0.0 <= self.theta <= 1.0):
            raise ValueError("theta must lie in [0, 1]")
        if self.dt > dt_max(self.m, self.theta):
            raise ValueError(
                f"dt={self.dt} violates the stability bound "
                f"{dt_max(self.m, self.theta):.3e} for theta={self.theta}")
        if self.penalization_epsilon <= 0:
            raise ValueError("penalization_epsilon must be positive")

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))


class _ThetaStepper:
    """One theta-step of dh = (1/2)dxx h dt + sigma dt + noise, vectorized
    over many paths (columns)."""

    def __init__(self, cfg: SpdeConfig):
        m, dt, th = cfg.m, cfg.dt, cfg.theta
        self.cfg = cfg
        lam = (m * m / 2.0) * dt  # scaled diffusion coefficient
        # banded (upper) form of I - theta*dt*A, A = (m^2/2) tridiag(1,-2,1)
        ab = np.zeros((2, m - 1))
        ab[0, 1:] = -th * lam
        ab[1, :] = 1.0 + 2.0 * th * lam
        self.chol = cholesky_banded(ab)
        self.expl = (1.0 - th) * lam
        self.sig_vec = np.array([cfg.sigma(j / m) for j in range(1, m)])
        self.noise_sd = math.sqrt(dt * m) if cfg.noise else 0.0

    def step(self, H: np.ndarray, rng) -> np.ndarray:
        """H: (m-1, n_paths) interior values -> next interior values."""
        cfg = self.cfg
        rhs = H * (1.0 - 2.0 * self.expl)
        rhs[1:] += self.expl * H[:-1]
        rhs[:-1] += self.expl * H[1:]
        rhs += cfg.dt * self.sig_vec[:, None]
        if self.noise_sd:
            rhs += self.noise_sd * rng.standard_normal(H.shape)
        return cho_solve_banded((self.chol, False), rhs)


def _init_interior(cfg: SpdeConfig, initial, n_paths: int) -> np.ndarray:
    if initial is None:
        return np.zeros((cfg.m - 1, n_paths))
    vals = initial.values if isinstance(initial, GridFunction) else np.asarray(initial)
    if vals.shape != (cfg.m + 1,):
        raise ValueError("initial condition must live on the config grid")
    return np.repeat(vals[1:cfg.m, None], n_paths, axis=1)


def she_integrate(cfg: SpdeConfig, initial=None, *, rng=None
                  ) -> List[GridFunction]:
    """Single path of the stochastic heat equation; returns the whole
    trajectory on the step grid (n_steps+1 grid functions incl. t=0)."""
    gen = _rng_of(rng, cfg.seed)
    stepper = _ThetaStepper(cfg)
    H = _init_interior(cfg, initial, 1)
    out = [_wrap(cfg.m, H[:, 0])]
    for _ in range(cfg.n_steps):
        H = stepper.step(H, gen)
        out.append(_wrap(cfg.m, H[:, 0]))
    return out


def she_ensemble(cfg: SpdeConfig, n_paths: int, initial=None, *, rng=None
                 ) -> np.ndarray:
    """Final-time values of n_paths independent SHE paths, (n_paths, m+1).
    All paths advance in lock-step through one banded solve per step."""
    gen = _rng_of(rng, cfg.seed)
    stepper = _ThetaStepper(cfg)
    H = _init_interior(cfg, initial, n_paths)
    for _ in range(cfg.n_steps):
        H = stepper.step(H, gen)
    out = np.zeros((n_paths, cfg.m + 1))
    out[:, 1:cfg.m] = H.T
    return out


def _wrap(m: int, interior: np.ndarray) -> GridFunction:
    v = np.zeros(m + 1)
    v[1:m] = interior
    return GridFunction(m, v)


@dataclass
class RsheResult:
    trajectory: List[GridFunction]
    mass_per_cell: np.ndarray     # accumulated reflection mass, length m+1
    min_value: float              # most negative value seen (penalization leak)
    complementarity_ratio: float  # sum h^+ * dmass / total mass (-> 0 as eps -> 0)


def rshe_integrate(cfg: SpdeConfig, initial=None, *, rng=None) -> RsheResult:
    """Reflected SHE by splitting: a theta SHE step, then exact decay of
    the negative part under the penalization drift eps^{-1} max(-h, 0).
    The injected mass integral eps^{-1} max(-h,0) dt dx is accumulated per
    cell in closed form: (h_after - h_before)/m on decayed cells."""
    gen = _rng_of(rng, cfg.seed)
    stepper = _ThetaStepper(cfg)
    H = _init_interior(cfg, initial, 1)
    eps = cfg.penalization_epsilon
    decay = math.exp(-cfg.dt / eps)
    mass = np.zeros(cfg.m + 1)
    out = [_wrap(cfg.m, H[:, 0])]
    min_v = float(H.min()) if H.size else 0.0
    comp = 0.0
    for _ in range(cfg.n_steps):
        H = stepper.step(H, gen)
        min_v = min(min_v, float(H.min()))
        neg = H[:, 0] < 0.0
        if np.any(neg):
            before = H[neg, 0]
            after = before * decay
            dm = (after - before) / cfg.m   # positive
            mass[1:cfg.m][neg] += dm
            # defect |int h dzeta|: mass only lands where h ~ 0^-, so the
            # mean depth on the support of the measure shrinks with eps
            comp += float((np.abs(0.5 * (before + after)) * dm).sum())
            H[neg, 0] = after
        out.append(_wrap(cfg.m, H[:, 0]))
    total = float(mass.sum())
    ratio = comp / total if total > 0 else 0.0
    return RsheResult(trajectory=out, mass_per_cell=mass, min_value=min_v,
                      complementarity_ratio=ratio)


@dataclass
class PairRsheResult:
    trajectory_upper: List[GridFunction]
    trajectory_lower: List[GridFunction]
    mass_upper: np.ndarray
    mass_lower: np.ndarray
    min_gap: float
    complementarity_ratio: float


def pair_rshe_integrate(cfg: SpdeConfig, initial=None, *, rng=None) -> PairRsheResult:
    """Coupled pair: upper drifts by +sigma, lower by -sigma, independent
    noises, and the penalization eps^{-1} max(lower-upper, 0) pushes the
    two apart symmetrically.  On a substep the negative gap decays by
    exp(-2 dt/eps) about the untouched midpoint, and each reflection
    measure receives half the injected gap change."""
    gen = _rng_of(rng, cfg.seed)
    up_stepper = _ThetaStepper(cfg)
    lo_cfg = SpdeConfig(m=cfg.m, dt=cfg.dt, T=cfg.T,
                        sigma=AsymmetryProfile(lambda x, s=cfg.sigma: -s(x)),
                        penalization_epsilon=cfg.penalization_epsilon,
                        theta=cfg.theta, noise=cfg.noise)
    lo_stepper = _ThetaStepper(lo_cfg)
    if initial is None:
        Hu = np.zeros((cfg.m - 1, 1))
        Hl = np.zeros((cfg.m - 1, 1))
    else:
        upper0, lower0 = initial
        Hu = _init_interior(cfg, upper0, 1)
        Hl = _init_interior(cfg, lower0, 1)
    eps = cfg.penalization_epsilon
    decay = math.exp(-2.0 * cfg.dt / eps)
    mass_u = np.zeros(cfg.m + 1)
    mass_l = np.zeros(cfg.m + 1)
    traj_u = [_wrap(cfg.m, Hu[:, 0])]
    traj_l = [_wrap(cfg.m, Hl[:, 0])]
    min_gap = float((Hu - Hl).min()) if Hu.size else 0.0
    comp = 0.0
    for _ in range(cfg.n_steps):
        Hu = up_stepper.step(Hu, gen)
        Hl = lo_stepper.step(Hl, gen)
        gap = Hu[:, 0] - Hl[:, 0]
        min_gap = min(min_gap, float(gap.min()))
        neg = gap < 0.0
        if np.any(neg):
            g0 = gap[neg]
            g1 = g0 * decay
            dm = (g1 - g0) / (2.0 * cfg.m)  # per-measure share, positive
            mass_u[1:cfg.m][neg] += dm
            mass_l[1:cfg.m][neg] += dm
            center = 0.5 * (Hu[neg, 0] + Hl[neg, 0])
            Hu[neg, 0] = center + 0.5 * g1
            Hl[neg, 0] = center - 0.5 * g1
            comp += float((np.abs(0.5 * (g0 + g1)) * 2.0 * dm).sum())
        traj_u.append(_wrap(cfg.m, Hu[:, 0]))
        traj_l.append(_wrap(cfg.m, Hl[:, 0]))
    total = float(mass_u.sum() + mass_l.sum())
    ratio = comp / total if total > 0 else 0.0
    return PairRsheResult(trajectory_upper=traj_u, trajectory_lower=traj_l,
                          mass_upper=mass_u, mass_lower=mass_l,
                          min_gap=min_gap, complementarity_ratio=ratio)


def penalization_refinement_study(cfg: SpdeConfig, epsilons: Sequence[float],
                                  initial=None) -> list:
    """Re-run rshe_integrate at several penalization strengths (same seed)
    and report (eps, min_value, total_mass, complementarity_ratio) tuples;
    overshoot and complementarity both shrink with eps."""
    rows = []
    for eps in epsilons:
        c = SpdeConfig(m=cfg.m, dt=cfg.dt, T=cfg.T, sigma=cfg.sigma,
                       penalization_epsilon=eps, seed=cfg.seed,
                       theta=cfg.theta, noise=cfg.noise)
        res = rshe_integrate(c, initial=initial)
        rows.append((eps, res.min_value, float(res.mass_per_cell.sum()),
                     res.complementarity_ratio))
    return rows


# ---------------------------------------------------------------------------
# discrete heat kernel and the mild formulation

@dataclass(frozen=True)
class HeatKernelTable:
    n: int
    t: float
    values: np.ndarray  # (2N+1, 2N+1)


def _kernel_spectrum(n: int):
    two_n = 2 * n
    j = np.arange(1, two_n)
    lam = (two_n ** 2) * (np.cos(j * np.pi / two_n) - 1.0)  # all <= 0
    k = np.arange(two_n + 1)
    S = np.sin(np.outer(k, j) * (np.pi / two_n))  # (2N+1, 2N-1)
    return lam, S


def heat_kernel_table(n: int, t: float) -> HeatKernelTable:
    """g_t(k/2N, l/2N) = (1/N) sum_j sin sin exp((2N)^2 t (cos(j pi/2N)-1))."""
    if t < 0:
        raise ValueError("t must be >= 0")
    lam, S = _kernel_spectrum(n)
    G = (S * np.exp(lam * t)) @ S.T / n
    return HeatKernelTable(n=n, t=float(t), values=G)


def heat_kernel(n: int, t: float, k: int, l: int) -> float:
    """Single entry of the discrete heat kernel (same formula as the table)."""
    if t < 0:
        raise ValueError("t must be >= 0")
    two_n = 2 * n
    j = np.arange(1, two_n)
    lam = (two_n ** 2) * (np.cos(j * np.pi / two_n) - 1.0)
    return float(np.sum(np.sin(j * np.pi * k / two_n) * np.sin(j * np.pi * l / two_n)
                        * np.exp(lam * t)) / n)


def kernel_bound(n: int, t: float) -> float:
    """The uniform bound 1 AND sqrt(2 pi / ((2N)^2 t)) on kernel entries."""
    if t <= 0:
        return 1.0
    return min(1.0, math.sqrt(2.0 * math.pi / ((2 * n) ** 2 * t)))


def mild_residual(traj, t: float, *, rates: Optional[RateTable] = None) -> np.ndarray:
    """Martingale part of the mild formulation at time t, per site.

    residual(l) = h_t(l) - sum_k g_t(k,l) h_0(k)
                  - (2/sqrt(2N)) sum_k int_0^t g_{t-r}(k,l) w_k 1{curv_r(k) != 0} dr,
    with w_k = p_k - (2N)^2/2.  The indicator is piecewise constant between
    events, and in the spectral representation each inter-event integral of
    exp(lam_j (t-r)) is elementary, so the time integral here is computed
    in closed form (well inside any quadrature tolerance).

    Only single-interface free dynamics carries this formulation; wall and
    pair trajectories are rejected.
    """
    from .lattice_core import ModelKind

    if traj.model is not ModelKind.Bridge:
        raise ValueError("mild formulation applies to the free single-interface "
                         "model only")
    if not traj.record_events:
        raise ValueError("mild_residual needs recorded events")
    if not (0.0 <= t <= traj.t_final):
        raise ValueError(f"t={t} outside [0, {traj.t_final}]")
    rates = traj.rates if rates is None else rates
    n = traj.n
    two_n = 2 * n
    scale = 1.0 / math.sqrt(two_n)
    lam, S = _kernel_spectrum(n)

    h_t = traj.heights_at(t)[0] * scale
    h_0 = traj._initial_heights()[0] * scale
    G_t = (S * np.exp(lam * t)) @ S.T / n
    free = G_t @ h_0

    # curvature timeline: intervals [b_i, b_{i+1}) between events up to t
    cut = int(np.searchsorted(traj.times, t, side="right"))
    ev_t = traj.times[:cut]
    ev_k = traj.sites[:cut].astype(np.intp)
    ev_d = traj.dirs[:cut].astype(np.int64)
    bounds = np.concatenate([[0.0], ev_t, [t]])
    n_int = len(bounds) - 1

    H0 = traj._initial_heights()[0]
    curv0 = np.zeros(two_n + 1, dtype=np.int64)
    curv0[1:two_n] = H0[2:] - 2 * H0[1:two_n] + H0[:two_n - 1]
    # scatter the per-event curvature updates, then prefix-sum over intervals
    dcurv = np.zeros((n_int, two_n + 1), dtype=np.int64)
    if cut:
        rows = np.arange(1, cut + 1)
        np.add.at(dcurv, (rows, ev_k), -4 * ev_d)
        left_ok = ev_k - 1 >= 1
        np.add.at(dcurv, (rows[left_ok], ev_k[left_ok] - 1), 2 * ev_d[left_ok])
        right_ok = ev_k + 1 <= two_n - 1
        np.add.at(dcurv, (rows[right_ok], ev_k[right_ok] + 1), 2 * ev_d[right_ok])
    curv = curv0[None, :] + np.cumsum(dcurv, axis=0)
    active = (curv[:, 1:two_n] != 0).astype(np.float64)  # (n_int, 2N-1)

    # I[j, i] = int_{b_i}^{b_{i+1}} exp(lam_j (t-r)) dr, elementary
    ta = t - bounds[:-1]
    tb = t - bounds[1:]
    I = (np.exp(np.outer(lam, ta)) - np.exp(np.outer(lam, tb))) / lam[:, None]

    w = rates.p[1:two_n] - (two_n ** 2) / 2.0
    T = active.T @ I.T                      # (2N-1 sites, 2N-1 modes)
    inner = (S[1:two_n, :] * w[:, None] * T).sum(axis=0)   # per mode
    drift = (2.0 * scale / n) * (S @ inner)
    return h_t - free - drift


__all__ = [
    "GridFunction", "HeatKernelTable", "SpdeConfig", "RsheResult",
    "PairRsheResult", "ReweightResult", "sample_bridge", "sample_excursion",
    "sample_watermelon", "bridge_ensemble", "excursion_ensemble",
    "area_sigma", "reweighted_expectation", "dt_max", "she_integrate",
    "she_ensemble", "rshe_integrate", "pair_rshe_integrate",
    "penalization_refinement_study", "heat_kernel", "heat_kernel_table",
    "kernel_bound", "mild_residual",
]
