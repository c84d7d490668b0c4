"""End-to-end acceptance checks for the whole package.

Sixteen numbered checks, each tying several modules together against an
exact value, a closed-form law, or a Monte Carlo tolerance worked out in
advance.  All seeds are frozen, so the suite doubles as a deterministic
regression gate: `run_acceptance()` prints one line per check and returns
the results.

Check 13 is an *expected* failure and is marked as such: at these sizes
the lattice midpoint height lives on a parity-induced grid with spacing
2/sqrt(2N) ~ 0.18, which a two-sample KS test at 5k samples resolves
easily, so the raw p-value is astronomically small even though the laws
do converge.  The check also runs the parity-smoothed comparison (atoms
jittered uniformly over their own cells), which passes; see the detail
line it prints.
"""

import math
import time
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .continuum import (GridFunction, SpdeConfig, bridge_ensemble,
                        heat_kernel_table, kernel_bound, mild_residual,
                        reweighted_expectation, she_ensemble)
from .dynamics import simulate, support_check
from .gibbs import (catalan, detailed_balance_error, enumerate_states,
                    exact_sample, gibbs_measure, pair_compose, pair_decompose,
                    principal_eigenvalue, rayleigh_supremum, state_count,
                    stationarity_error)
from .lattice_core import (AsymmetryProfile, IntegerInterface, PairInterface,
                           to_particles)
from .observables import martingale_K, martingale_L, martingale_M, v_statistic
from .stats import (empirical_vs_exact, ks_distance, profile_fit,
                    relaxation_spacing)

# one frozen seed per check (offsets derived from these where a check
# needs many streams)
SEEDS = {5: 2205, 6: 2206, 7: 2207, 8: 2208, 9: 777000, 10: 2210, 11: 2211,
         12: 2212, 13: 2213, 14: 2214, 16: 2216}

NAMES = {
    1: "detailed balance",
    2: "exact stationarity",
    3: "enumeration counts",
    4: "pair bijection round-trip",
    5: "dynamics vs gibbs (chi-square)",
    6: "stationary profile at 2N=256",
    7: "reweighting cross-check",
    8: "discrete heat kernel",
    9: "mild-formulation residual",
    10: "martingale observables",
    11: "reflection-measure support",
    12: "SHE stationarity",
    13: "discrete-vs-SHE KS",
    14: "replacement statistic trend",
    15: "eigenvalue oracle",
    16: "exponential-moment ratio",
}


@dataclass
class CheckResult:
    cid: int
    name: str
    passed: bool
    detail: str
    seconds: float
    expected_failure: bool = False

    @property
    def label(self) -> str:
        if self.passed:
            return "XPASS" if self.expected_failure else "PASS"
        return "XFAIL" if self.expected_failure else "FAIL"

    @property
    def green(self) -> bool:
        """Strict gate semantics: expected failures must fail."""
        return self.passed != self.expected_failure


def all_green(results: Sequence[CheckResult]) -> bool:
    return all(r.green for r in results)


# ---------------------------------------------------------------------------
# helpers

def _zigzag(n: int) -> IntegerInterface:
    return IntegerInterface.flat_zigzag(n)


def _sampled_states(traj, spacing: float, burn: float) -> list:
    """States along one long run at a fixed spacing (single event-log walk)."""
    t_hi = float(traj.times[-1]) if len(traj.times) else traj.t_final
    grid = np.arange(burn, t_hi, spacing)
    idx = np.searchsorted(traj.times, grid, side="right")
    H = traj._initial_heights().copy()
    out, prev = [], 0
    for i in idx:
        if i > prev:
            np.add.at(H, (traj.ifaces[prev:i].astype(np.intp),
                          traj.sites[prev:i].astype(np.intp)),
                      2 * traj.dirs[prev:i].astype(np.int64))
            prev = int(i)
        out.append(traj._wrap_state(H.copy()))
    return out


def _wall_audit(traj, measure) -> int:
    """Streaming support check for long wall runs, O(events + intervals).

    Mirrors support_check exactly -- at each interval start the site must
    sit at height 1 under a local maximum, and no flip may touch the
    site's neighbourhood strictly inside the interval -- but replays the
    event log once instead of once per interval.
    """
    order = np.argsort(measure.starts, kind="stable")
    starts = measure.starts[order]
    ends = measure.ends[order]
    ksite = measure.sites[order]
    H = traj._initial_heights()[0].copy()
    open_end = np.full(len(H), -np.inf)
    times, sites, dirs = traj.times, traj.sites, traj.dirs
    n_int = len(starts)
    n_viol = 0
    j = 0
    for i in range(len(times)):
        t = float(times[i])
        while j < n_int and starts[j] < t:
            k = int(ksite[j])
            d = H[k + 1] - 2 * H[k] + H[k - 1]
            if not (d < 0 and H[k] == 1):
                n_viol += 1
            open_end[k] = ends[j]
            j += 1
        k = int(sites[i])
        H[k] += 2 * int(dirs[i])
        for s in (k - 1, k, k + 1):
            if 0 <= s < len(H) and open_end[s] > t:
                n_viol += 1          # neighbourhood touched mid-interval
                open_end[s] = -np.inf
    while j < n_int:                 # intervals opening after the last event
        k = int(ksite[j])
        d = H[k + 1] - 2 * H[k] + H[k - 1]
        if not (d < 0 and H[k] == 1):
            n_viol += 1
        j += 1
    return n_viol


def _batched_bridge_sampler(m: int, chunk: int = 4096):
    """sample_bridge semantics, but drawing whole chunks at once; the
    one-at-a-time version spends most of its time in per-call overhead."""
    buf = []

    def sampler(rng):
        if not buf:
            arr = bridge_ensemble(m, chunk, rng)
            buf.extend(GridFunction(m, row) for row in arr[::-1])
        return buf.pop()

    return sampler


def _phi_sin(x):
    return np.sin(np.pi * np.asarray(x, dtype=float))


def _psi_sin2(x):
    return np.sin(2.0 * np.pi * np.asarray(x, dtype=float))


def _parabola(x):
    return x * (1.0 - x)


# ---------------------------------------------------------------------------

class AcceptanceSuite:
    """Runs the numbered checks; caches artifacts several checks share
    (check 6's stationary estimate feeds 7, check 12's SHE ensemble feeds
    13, and the wall/pair runs of 5 and 10 feed the support registry 11)."""

    def __init__(self, verbose: bool = True):
        self.verbose = verbose
        self._cache = {}
        # support registry: model -> [n_intervals, n_violations, n_runs]
        self._registry = {"wall": [0, 0, 0], "pair": [0, 0, 0]}
        self._registry_gap = 0.0   # worst |pair gap integral| / mass seen

    def _say(self, msg: str) -> None:
        if self.verbose:
            print(msg, flush=True)

    # -- shared artifacts ---------------------------------------------------

    def _stationary_mid_256(self):
        """Midpoint mean/stderr of the exact stationary law at 2N=256."""
        if "mid256" not in self._cache:
            H = exact_sample("bridge", 128, 10 ** 4, 1.0, seed=SEEDS[6])
            h = H / math.sqrt(256.0)
            mid = h[:, 128]
            self._cache["mid256"] = (
                h, float(mid.mean()),
                float(mid.std(ddof=1) / math.sqrt(len(mid))))
        return self._cache["mid256"]

    def _she_mid_sigma1(self) -> np.ndarray:
        """5k stationary SHE midpoint values, sigma = 1, m = 128."""
        if "she_mid" not in self._cache:
            cfg = SpdeConfig(m=128, dt=0.02, T=2.0, sigma=1.0,
                             seed=SEEDS[12] + 1)
            vals = she_ensemble(cfg, 5000)
            self._cache["she_mid"] = vals[:, 64].copy()
        return self._cache["she_mid"]

    def _register_support(self, kind: str, report) -> None:
        reg = self._registry[kind]
        reg[0] += report.n_intervals
        reg[1] += report.n_violations
        reg[2] += 1
        if kind == "pair" and report.mass > 0:
            self._registry_gap = max(self._registry_gap,
                                     abs(report.height_integral) / report.mass)

    # -- checks -------------------------------------------------------------

    def check_01(self):
        worst = 0.0
        for model in ("bridge", "bridge-wall", "pair"):
            for n in (1, 2, 3):
                for sig in (0.0, 1.0, AsymmetryProfile.linear(1.0)):
                    mu = self._mu(model, n, sig)
                    worst = max(worst, detailed_balance_error(mu))
        return worst < 1e-12, f"max flip-balance violation {worst:.2e} < 1e-12"

    def _mu(self, model, n, sig):
        key = ("mu", model, n, getattr(sig, "spec_string", sig))
        if key not in self._cache:
            self._cache[key] = gibbs_measure(model, n, sig)
        return self._cache[key]

    def check_02(self):
        worst = 0.0
        for model in ("bridge", "bridge-wall", "pair"):
            for n in (1, 2, 3):
                for sig in (0.0, 1.0, AsymmetryProfile.linear(1.0)):
                    worst = max(worst, stationarity_error(self._mu(model, n, sig)))
        return worst < 1e-9, f"max |mu^T L| {worst:.2e} < 1e-9"

    def check_03(self):
        for n in range(1, 7):
            if len(enumerate_states("bridge", n)) != math.comb(2 * n, n):
                return False, f"bridge count off at n={n}"
            if len(enumerate_states("bridge-wall", n)) != catalan(n):
                return False, f"wall count off at n={n}"
        for n in range(1, 5):
            if len(enumerate_states("pair", n)) != state_count("pair", n):
                return False, f"pair mixture formula off at n={n}"
        return True, ("bridge C(2N,N) and wall Catalan(N) for n<=6; "
                      "pair mixture sum vs brute force for n<=4")

    def check_04(self):
        checked = 0
        for n in (1, 2, 3):
            for s in enumerate_states("pair", n):
                if pair_compose(pair_decompose(s)) != s:
                    return False, f"round trip broke at n={n}"
                checked += 1
        return True, f"decompose/compose identity on all {checked} pair states"

    def check_05(self):
        spacing = relaxation_spacing(3)
        details = []
        ok = True
        for model in ("bridge", "bridge-wall"):
            run = simulate(model, _zigzag(3), 1.0, 1e9, seed=SEEDS[5],
                           max_events=10 ** 6)
            states = _sampled_states(run.trajectory, spacing, burn=20 * spacing)
            mu = self._mu(model, 3, 1.0)
            chi2, p, tv = empirical_vs_exact(states, mu)
            details.append(f"{model}: p={p:.3f} tv={tv:.3f} ({len(states)} samples)")
            ok = ok and p > 1e-3
            if model == "bridge-wall":
                self._cache["c5_wall_run"] = run
        return ok, "; ".join(details)

    def check_06(self):
        h, mid_mean, mid_se = self._stationary_mid_256()
        fit = profile_fit(h, _parabola)
        v = float(np.var(h[:, 128], ddof=1))
        ok = (fit.sup_deviation < 0.03 and fit.outside_fraction <= 0.01
              and abs(v - 0.25) <= 0.05 * 0.25)
        return ok, (f"sup dev {fit.sup_deviation:.4f} < 0.03, "
                    f"{fit.n_outside}/{fit.n_points} outside 3se, "
                    f"var(mid) {v:.4f} vs 1/4 (5% tol)")

    def check_07(self):
        _, mid_mean, mid_se = self._stationary_mid_256()
        res = reweighted_expectation(lambda g: g.at(0.5),
                                     _batched_bridge_sampler(256),
                                     1.0, 10 ** 5, seed=SEEDS[7])
        tol = 3.0 * math.hypot(res.stderr, mid_se)
        diff = abs(res.estimate - mid_mean)
        return diff <= tol, (f"|{res.estimate:.4f} - {mid_mean:.4f}| = "
                             f"{diff:.4f} <= {tol:.4f} (ess {res.ess:.0f})")

    def check_08(self):
        # t = 0 identity (killed kernel: the two corner cells are 0 by
        # construction, so the identity is asserted away from them)
        g0 = heat_kernel_table(8, 0.0).values
        eye = np.eye(17)
        err_id = float(np.max(np.abs(g0[1:-1, :] - eye[1:-1, :])))
        if err_id > 1e-10:
            return False, f"t=0 identity off by {err_id:.2e}"
        # uniform bound on a (t, k, l) grid
        n_pts = 0
        worst_gap = np.inf
        for n in (4, 8, 16):
            for t in np.logspace(-3, 0, 10):
                tab = heat_kernel_table(n, float(t)).values
                bound = kernel_bound(n, float(t))
                worst_gap = min(worst_gap, bound - float(tab.max()))
                n_pts += tab.size
                if tab.max() > bound + 1e-12:
                    return False, f"bound broken at n={n}, t={t:.3g}"
        # killed-walk Monte Carlo, jump rate (2N)^2 / 2 per direction
        n, t, B = 8, 0.01, 10 ** 6
        g = heat_kernel_table(n, t).values[n]          # start from the middle
        rng = np.random.Generator(np.random.PCG64(SEEDS[8]))
        pos = np.full(B, n, dtype=np.int64)
        t_cur = np.zeros(B)
        alive = np.ones(B, dtype=bool)
        rate = (2 * n) ** 2
        while True:
            act = alive & (t_cur < t)
            idx = np.nonzero(act)[0]
            if idx.size == 0:
                break
            t_next = t_cur[idx] + rng.exponential(1.0 / rate, idx.size)
            jump = idx[t_next <= t]
            t_cur[idx] = t_next
            if jump.size:
                pos[jump] += rng.choice((-1, 1), jump.size)
                dead = jump[(pos[jump] == 0) | (pos[jump] == 2 * n)]
                alive[dead] = False
        emp = np.bincount(pos[alive], minlength=2 * n + 1) / B
        se = np.sqrt(np.clip(g * (1.0 - g), 0.0, None) / B)
        z = np.abs(emp[1:-1] - g[1:-1]) / se[1:-1]
        ok = bool(np.all(z <= 3.0))
        return ok, (f"identity {err_id:.1e}; bound holds on {n_pts} pts "
                    f"(min slack {worst_gap:.3f}); walk max z {z.max():.2f} <= 3")

    def check_09(self):
        B, n = 10 ** 4, 16
        ts = (0.1, 0.5)
        sums = np.zeros((2, 33))
        sq = np.zeros((2, 33))
        z0 = _zigzag(n)
        for i in range(B):
            traj = simulate("bridge", z0, 1.0, 0.5, seed=SEEDS[9] + i).trajectory
            for j, t in enumerate(ts):
                r = mild_residual(traj, t)
                sums[j] += r
                sq[j] += r * r
            if self.verbose and (i + 1) % 2500 == 0:
                self._say(f"    ... mild residual {i + 1}/{B}")
        mean = sums / B
        var = sq / B - mean ** 2
        se = np.sqrt(var / B)
        det, ok = [], True
        for j, t in enumerate(ts):
            z = np.abs(mean[j, 1:-1]) / se[j, 1:-1]
            vmax, vb = float(var[j].max()), 8.0 * math.sqrt(2 * math.pi * t)
            ok = ok and bool(np.all(z <= 3.0)) and vmax <= vb
            det.append(f"t={t}: max z {z.max():.2f}, var {vmax:.2f} <= {vb:.2f}")
        return ok, "; ".join(det)

    def check_10(self):
        B, n, t = 10 ** 4, 16, 0.2
        starts = exact_sample("pair", n, B, 1.0, seed=SEEDS[10])
        acc = np.zeros((5, B))
        for i in range(B):
            state = PairInterface(IntegerInterface(n, starts[i, 0]),
                                  IntegerInterface(n, starts[i, 1]))
            run = simulate("pair", state, 1.0, t, seed=SEEDS[10] + 1 + i)
            acc[0, i] = martingale_M(run, _phi_sin, (t,))[0]
            acc[1, i] = martingale_M(run, _phi_sin, (t,), interface=2)[0]
            acc[2, i] = martingale_L(run, _phi_sin, (t,))[0]
            acc[3, i] = martingale_L(run, _phi_sin, (t,), interface=2)[0]
            acc[4, i] = martingale_K(run, _phi_sin, _psi_sin2, (t,))[0]
            for zeta in run.zetas:
                self._register_support("pair", support_check(run.trajectory, zeta))
            if self.verbose and (i + 1) % 2500 == 0:
                self._say(f"    ... martingales {i + 1}/{B}")
        z = np.abs(acc.mean(axis=1)) / (acc.std(axis=1, ddof=1) / math.sqrt(B))
        names = ("M1", "M2", "L1", "L2", "K")
        det = ", ".join(f"{nm} z={zz:.2f}" for nm, zz in zip(names, z))
        return bool(np.all(z <= 3.0)), det + " (all <= 3)"

    def check_11(self):
        # dedicated wall run: violations + the exact height identity
        run = simulate("bridge-wall", _zigzag(8), 1.0, 2.0, seed=SEEDS[11])
        rep = support_check(run.trajectory, run.zeta)
        self._register_support("wall", rep)
        ratio_err = abs(rep.height_integral / rep.mass - 0.25) / 0.25
        ok = rep.n_violations == 0 and ratio_err <= 1e-12
        # a dedicated stationary pair batch
        starts = exact_sample("pair", 8, 50, 1.0, seed=SEEDS[11] + 1)
        for i in range(50):
            state = PairInterface(IntegerInterface(8, starts[i, 0]),
                                  IntegerInterface(8, starts[i, 1]))
            prun = simulate("pair", state, 1.0, 0.5, seed=SEEDS[11] + 2 + i)
            for zeta in prun.zetas:
                self._register_support("pair", support_check(prun.trajectory, zeta))
        # the long wall run of check 5, if it ran (streaming audit; the
        # generic checker would replay the event log once per interval)
        extra = ""
        if "c5_wall_run" in self._cache:
            long_run = self._cache["c5_wall_run"]
            nv = _wall_audit(long_run.trajectory, long_run.zeta)
            self._registry["wall"][0] += len(long_run.zeta.sites)
            self._registry["wall"][1] += nv
            self._registry["wall"][2] += 1
            extra = f"; 1e6-event wall run audited ({nv} violations)"
            ok = ok and nv == 0
        w, p = self._registry["wall"], self._registry["pair"]
        ok = ok and w[1] == 0 and p[1] == 0 and self._registry_gap <= 1e-12
        return ok, (f"wall {w[1]}/{w[0]} and pair {p[1]}/{p[0]} interval "
                    f"violations over {w[2]}+{p[2]} runs; "
                    f"int h dzeta/mass = 1/sqrt(2N) to {ratio_err:.1e}; "
                    f"max pair gap integral {self._registry_gap:.1e}" + extra)

    def check_12(self):
        cfg0 = SpdeConfig(m=128, dt=0.01, T=2.0, sigma=0.0, seed=SEEDS[12])
        vals0 = she_ensemble(cfg0, 10 ** 4)
        v = float(np.var(vals0[:, 64], ddof=1))
        del vals0
        ok_var = abs(v - 0.25) <= 0.03 * 0.25
        cfg1 = SpdeConfig(m=128, dt=0.02, T=2.0, sigma=1.0, seed=SEEDS[12] + 1)
        vals1 = she_ensemble(cfg1, 10 ** 5)
        x = np.arange(129) / 128.0
        dev = float(np.max(np.abs(vals1.mean(axis=0) - _parabola(x))))
        self._cache["she_mid"] = vals1[:5000, 64].copy()
        del vals1
        ok_mean = dev <= 0.03 * 0.25
        return ok_var and ok_mean, (f"var(mid) {v:.4f} vs 1/4 (3% tol); "
                                    f"mean sup dev {dev:.4f} <= {0.03 * 0.25}")

    def check_13(self):
        disc = exact_sample("bridge", 64, 5000, 1.0,
                            seed=SEEDS[13])[:, 64] / math.sqrt(128.0)
        she = self._she_mid_sigma1()
        stat, p_raw = ks_distance(disc, she)
        rng = np.random.Generator(np.random.PCG64(SEEDS[13] + 1))
        delta = 1.0 / math.sqrt(128.0)
        stat_s, p_s = ks_distance(disc + rng.uniform(-delta, delta, disc.size),
                                  she)
        detail = (f"raw KS D={stat:.3f} p={p_raw:.2e} (midpoint heights sit "
                  f"on a parity lattice of spacing {2 * delta:.3f}, resolved "
                  f"at 5k samples); parity-smoothed D={stat_s:.3f} p={p_s:.3f}"
                  + (" passes" if p_s > 1e-3 else " ALSO FAILS"))
        return p_raw > 1e-3, detail

    def check_14(self):
        eps, B, n_snap = 0.1, 600, 16
        grid = [(j + 0.5) / n_snap for j in range(n_snap)]
        out = []
        for n in (16, 32, 64):
            starts = exact_sample("bridge", n, B, 1.0, seed=SEEDS[14] + n)
            vals = np.empty(B)
            for i in range(B):
                traj = simulate("bridge", IntegerInterface(n, starts[i]), 1.0,
                                1.0, seed=SEEDS[14] + 17 * n + i,
                                record_events=False,
                                snapshot_times=grid).trajectory
                vs = [v_statistic(to_particles(traj.snapshot_state(j)), eps)
                      for j in range(n_snap)]
                vals[i] = np.mean(vs) / n
            out.append((n, float(vals.mean()),
                        float(vals.std(ddof=1) / math.sqrt(B))))
            self._say(f"    ... V trend n={n}: {out[-1][1]:.4f} "
                      f"+- {out[-1][2]:.4f}")
        ok = True
        for (n1, m1, s1), (n2, m2, s2) in zip(out, out[1:]):
            gap = m1 - m2
            ok = ok and gap > 2.0 * math.hypot(s1, s2)
        det = " > ".join(f"{m:.4f}@{n}" for n, m, s in out)
        return ok, det + " (each gap > 2 combined se)"

    def check_15(self):
        mu2 = self._mu("bridge", 1, 0.0)
        s0 = mu2.states[0]
        pot = lambda s: 1.0 if s == s0 else 0.0
        lam = principal_eigenvalue(mu2, potential=pot, coupling=1.0)
        target = (-3.0 + math.sqrt(17.0)) / 2.0
        err2 = abs(lam - target)
        if err2 > 1e-10:
            return False, f"2x2 value off by {err2:.2e}"

        def height_pot(s):
            if isinstance(s, PairInterface):
                return float(s.upper.heights.max()) / math.sqrt(2 * s.upper.n)
            return float(np.abs(s.heights).max()) / math.sqrt(2 * s.n)

        cases = [
            (mu2, pot, 1.0),
            (self._mu("bridge", 2, 1.0),
             lambda s: v_statistic(to_particles(s), 0.5), 1.0),
            (self._mu("bridge-wall", 3, 1.0), height_pot, 0.7),
            (self._mu("pair", 1, 1.0), height_pot, 1.0),
        ]
        worst = 0.0
        for mu, vpot, a in cases:
            dense = principal_eigenvalue(mu, potential=vpot, coupling=a)
            vari = rayleigh_supremum(mu, potential=vpot, coupling=a)
            worst = max(worst, abs(dense - vari))
        return worst <= 1e-6, (f"2x2 err {err2:.1e} <= 1e-10; variational vs "
                               f"dense max gap {worst:.1e} <= 1e-6 "
                               f"(dims {[len(c[0].states) for c in cases]})")

    def check_16(self):
        means = {}
        for n in (8, 16, 32, 64):
            H = exact_sample("bridge", n, 10 ** 5, 1.0, seed=SEEDS[16] + n)
            vals = np.exp(np.abs(H).max(axis=1) / math.sqrt(2.0 * n))
            means[n] = float(vals.mean())
            del H, vals
        ratio = max(means.values()) / min(means.values())
        det = ", ".join(f"{m:.3f}@{n}" for n, m in means.items())
        return ratio < 3.0, f"mu_N[e^||h||] = {det}; max/min {ratio:.3f} < 3"

    # -- runner ---------------------------------------------------------

    def run(self, ids: Optional[Sequence[int]] = None) -> List[CheckResult]:
        ids = sorted(ids) if ids else list(range(1, 17))
        results = []
        for cid in ids:
            method = getattr(self, f"check_{cid:02d}")
            t0 = time.perf_counter()
            try:
                passed, detail = method()
            except Exception as exc:  # a crash is a failed check, not a crash
                passed, detail = False, f"error: {exc!r}"
            dt = time.perf_counter() - t0
            res = CheckResult(cid, NAMES[cid], bool(passed), str(detail), dt,
                              expected_failure=(cid == 13))
            results.append(res)
            self._say(f"[c{cid:02d}] {res.label:<5} {res.name:<32} "
                      f"{res.detail}  ({dt:.1f}s)")
        return results


def run_acceptance(ids: Optional[Sequence[int]] = None,
                   verbose: bool = True) -> List[CheckResult]:
    return AcceptanceSuite(verbose=verbose).run(ids)


__all__ = ["CheckResult", "AcceptanceSuite", "run_acceptance", "all_green",
           "SEEDS", "NAMES"]
