"""Stationary (Gibbs) measures of the flip dynamics, exact and sampled.

For each model the dynamics is reversible w.r.t. a tilted combinatorial
measure: weight exp(W) with W = scaled_weight_exponent (the tilt is the
height profile against log(p/q)/2; for pairs the gap profile).  This
module provides

* exhaustive state enumeration + exact Gibbs probabilities (small n),
* detailed-balance / stationarity / Dirichlet-form / eigenvalue tools on
  the enumerated space,
* uniform samplers (sigma = 0): permutation bridges, cycle-rotation
  excursions, and the common-step/excursion-step mixture for pairs,
* an exact transfer-matrix (DP) sampler for any tilt, vectorized over
  the sample batch -- the workhorse for large-n stationary draws,
* the two-to-one step decomposition for pairs (common steps + gap
  excursion) and its inverse.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Union

import numpy as np
from scipy import sparse
from scipy.special import logsumexp

from .lattice_core import (
    AsymmetryProfile,
    IntegerInterface,
    ModelKind,
    PairInterface,
    RateTable,
    allowed_flips,
    apply_flip,
    build_rates,
    scaled_weight_exponent,
)


def catalan(k: int) -> int:
    return math.comb(2 * k, k) // (k + 1)


def state_count(model, n: int) -> int:
    """Exact number of states: central binomial, Catalan, or the pair
    mixture sum over the number of common step pairs."""
    model = ModelKind(model)
    if model is ModelKind.Bridge:
        return math.comb(2 * n, n)
    if model is ModelKind.BridgeWall:
        return catalan(n)
    return sum(math.comb(2 * n, 2 * m) * math.comb(2 * m, m) * catalan(n - m)
               for m in range(n + 1))


def enumerate_states(model, n: int, cap: int = 10 ** 7) -> list:
    """All states of the given model, as interface objects.

    Recursion over columns with endpoint-feasibility pruning; refuses
    upfront if the exact count exceeds `cap`.
    """
    model = ModelKind(model)
    total = state_count(model, n)
    if total > cap:
        raise ValueError(f"{model.value} n={n} has {total} states > cap={cap}")
    two_n = 2 * n
    out: list = []

    if model is ModelKind.Pair:
        up = np.zeros(two_n + 1, dtype=np.int64)
        lo = np.zeros(two_n + 1, dtype=np.int64)

        def rec2(k: int) -> None:
            if k == two_n:
                if up[two_n] == 0 and lo[two_n] == 0:
                    out.append(PairInterface(IntegerInterface(n, up.copy()),
                                             IntegerInterface(n, lo.copy())))
                return
            r = two_n - k - 1  # steps remaining after this one
            for sa in (1, -1):
                a = up[k] + sa
                if abs(a) > r:
                    continue
                for sb in (1, -1):
                    b = lo[k] + sb
                    if abs(b) > r or a < b:
                        continue
                    up[k + 1] = a
                    lo[k + 1] = b
                    rec2(k + 1)

        rec2(0)
        return out

    wall = model is ModelKind.BridgeWall
    h = np.zeros(two_n + 1, dtype=np.int64)

    def rec(k: int) -> None:
        if k == two_n:
            if h[two_n] == 0:
                out.append(IntegerInterface(n, h.copy()))
            return
        r = two_n - k - 1
        for s in (1, -1):
            v = h[k] + s
            if abs(v) > r or (wall and v < 0):
                continue
            h[k + 1] = v
            rec(k + 1)

    rec(0)
    return out


@dataclass
class GibbsMeasure:
    """Exact stationary law on an enumerated state space."""

    model: ModelKind
    rates: RateTable
    states: list
    probs: np.ndarray
    log_weights: np.ndarray
    _index: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self._index:
            self._index = {s: i for i, s in enumerate(self.states)}

    def index(self, state) -> int:
        return self._index[state]

    def expectation(self, f: Callable) -> float:
        return float(sum(p * f(s) for p, s in zip(self.probs, self.states)))


def gibbs_measure(model, n: int, sigma, cap: int = 10 ** 7) -> GibbsMeasure:
    model = ModelKind(model)
    rates = sigma if isinstance(sigma, RateTable) else build_rates(_sigma(sigma), n)
    states = enumerate_states(model, n, cap=cap)
    lw = np.array([scaled_weight_exponent(s, rates) for s in states])
    probs = np.exp(lw - logsumexp(lw))
    probs /= probs.sum()
    return GibbsMeasure(model=model, rates=rates, states=states,
                        probs=probs, log_weights=lw)


def _sigma(sigma) -> AsymmetryProfile:
    if isinstance(sigma, AsymmetryProfile):
        return sigma
    if callable(sigma):
        return AsymmetryProfile(sigma)
    if isinstance(sigma, str):
        return AsymmetryProfile.from_spec(sigma)
    return AsymmetryProfile.constant(float(sigma))


def _transitions(mu: GibbsMeasure):
    """Yield (i, j, rate) over all allowed flips out of every state."""
    model, rates = mu.model, mu.rates
    for i, s in enumerate(mu.states):
        for flip in allowed_flips(s, model):
            if model is ModelKind.Pair:
                k, iface, d, kind = flip
                t = apply_flip(s, k, d, interface_id=iface)
            else:
                k, d, kind = flip
                t = apply_flip(s, k, d)
            r = rates.p[k] if kind == "p" else rates.q[k]
            yield i, mu.index(t), float(r)


def generator_matrix(mu: GibbsMeasure) -> sparse.csr_matrix:
    """Markov generator L on the enumerated space: L[i,j] = rate(i -> j),
    rows summing to zero."""
    rows, cols, vals = [], [], []
    diag = np.zeros(len(mu.states))
    for i, j, r in _transitions(mu):
        rows.append(i)
        cols.append(j)
        vals.append(r)
        diag[i] -= r
    rows.extend(range(len(mu.states)))
    cols.extend(range(len(mu.states)))
    vals.extend(diag)
    return sparse.csr_matrix((vals, (rows, cols)),
                             shape=(len(mu.states),) * 2)


def detailed_balance_error(mu: GibbsMeasure) -> float:
    """max over transitions of the relative detailed-balance defect
    |mu(x) r(x,y) - mu(y) r(y,x)| / max(fluxes)."""
    worst = 0.0
    for i, j, r in _transitions(mu):
        # find the reverse rate by flux comparison
        fwd = mu.probs[i] * r
        # reverse transition rate: scan flips of state j back to i
        rev = 0.0
        s = mu.states[j]
        for flip in allowed_flips(s, mu.model):
            if mu.model is ModelKind.Pair:
                k, iface, d, kind = flip
                t = apply_flip(s, k, d, interface_id=iface)
            else:
                k, d, kind = flip
                t = apply_flip(s, k, d)
            if mu.index(t) == i:
                rev = mu.rates.p[k] if kind == "p" else mu.rates.q[k]
                break
        bwd = mu.probs[j] * rev
        denom = max(fwd, bwd)
        if denom > 0:
            worst = max(worst, abs(fwd - bwd) / denom)
    return worst


def stationarity_error(mu: GibbsMeasure, gen: Optional[sparse.csr_matrix] = None) -> float:
    """sup norm of mu^T L; zero iff mu is invariant."""
    if gen is None:
        gen = generator_matrix(mu)
    return float(np.max(np.abs(mu.probs @ gen)))


def dirichlet_form(mu: GibbsMeasure, f: Union[np.ndarray, Callable]) -> float:
    """D(f) = sum_x mu(x) sum_{p-moves x->y} (sqrt f(y) - sqrt f(x))^2 * p.

    One representative per unordered transition pair: the p-rate moves
    (up-flips; for pairs upper-up and lower-down).  By reversibility this
    equals <g, (-L) g>_mu with g = sqrt f.
    """
    if callable(f):
        fv = np.array([f(s) for s in mu.states], dtype=float)
    else:
        fv = np.asarray(f, dtype=float)
    if np.any(fv < 0):
        raise ValueError("dirichlet_form needs a nonnegative density")
    g = np.sqrt(fv)
    total = 0.0
    model, rates = mu.model, mu.rates
    for i, s in enumerate(mu.states):
        for flip in allowed_flips(s, model):
            if model is ModelKind.Pair:
                k, iface, d, kind = flip
                if kind != "p":
                    continue
                t = apply_flip(s, k, d, interface_id=iface)
            else:
                k, d, kind = flip
                if kind != "p":
                    continue
                t = apply_flip(s, k, d)
            j = mu.index(t)
            total += mu.probs[i] * rates.p[k] * (g[j] - g[i]) ** 2
    return float(total)


def symmetrized_operator(mu: GibbsMeasure, potential=None, coupling: float = 0.0,
                         gen: Optional[sparse.csr_matrix] = None) -> np.ndarray:
    """Dense D^{1/2} (L + coupling*V) D^{-1/2} with D = diag(mu); symmetric
    by reversibility, so its top eigenvalue is the principal one."""
    if gen is None:
        gen = generator_matrix(mu)
    M = gen.toarray()
    if potential is not None and coupling != 0.0:
        v = np.array([potential(s) for s in mu.states], dtype=float)
        M = M + coupling * np.diag(v)
    srt = np.sqrt(mu.probs)
    S = M * (srt[:, None] / srt[None, :])
    asym = np.max(np.abs(S - S.T))
    if asym > 1e-8 * (1.0 + np.max(np.abs(S))):
        raise ValueError(f"operator not reversible: asymmetry {asym:.3e}")
    return 0.5 * (S + S.T)


def principal_eigenvalue(op: Union[np.ndarray, GibbsMeasure], potential=None,
                         coupling: float = 0.0) -> float:
    """Top eigenvalue of a symmetric operator, or of L + coupling*V for an
    enumerated Gibbs measure (symmetrized first)."""
    if isinstance(op, GibbsMeasure):
        S = symmetrized_operator(op, potential=potential, coupling=coupling)
    else:
        S = np.asarray(op, dtype=float)
        if np.max(np.abs(S - S.T)) > 1e-12 * (1.0 + np.max(np.abs(S))):
            raise ValueError("matrix form requires a symmetric operator")
    return float(np.linalg.eigvalsh(S)[-1])


def rayleigh_supremum(mu: GibbsMeasure, potential=None, coupling: float = 0.0,
                      n_restarts: int = 8, seed: int = 0) -> float:
    """Variational top eigenvalue: sup_g <g,(L+cV)g>_mu / <g,g>_mu by
    numerical optimization with random restarts.  Agrees with
    principal_eigenvalue on small spaces; kept independent of it as a
    cross-check."""
    from scipy.optimize import minimize

    gen = generator_matrix(mu).toarray()
    if potential is not None and coupling != 0.0:
        v = np.array([potential(s) for s in mu.states], dtype=float)
        gen = gen + coupling * np.diag(v)
    w = mu.probs
    A = gen

    def neg_rayleigh(g):
        num = float(w @ (g * (A @ g)))
        den = float(w @ (g * g))
        return -num / den

    best = -np.inf
    rng = np.random.Generator(np.random.PCG64(seed))
    for _ in range(n_restarts):
        g0 = rng.standard_normal(len(w))
        res = minimize(neg_rayleigh, g0, method="Nelder-Mead",
                       options={"maxiter": 20000, "xatol": 1e-12, "fatol": 1e-14})
        best = max(best, -float(res.fun))
    return best


# ---------------------------------------------------------------------------
# pair step decomposition: common steps + gap excursion

@dataclass(frozen=True)
class StepDecomposition:
    """A non-crossing pair, rewritten as the sub-bridge of common steps
    (both interfaces move together) plus the gap excursion carried by the
    remaining positions (+1 widens the gap, -1 closes it; the running sum
    is half the gap and never dips below zero)."""

    n: int
    common_positions: np.ndarray   # sorted, 1-based step indices
    common_signs: np.ndarray       # +-1, a bridge (equal up/down counts)
    excursion_signs: np.ndarray    # +-1 on the complement, partial sums >= 0


def pair_decompose(pair: PairInterface) -> StepDecomposition:
    su = pair.upper.steps()
    sl = pair.lower.steps()
    common = su == sl
    return StepDecomposition(
        n=pair.n,
        common_positions=np.nonzero(common)[0].astype(np.int64) + 1,
        common_signs=su[common].astype(np.int8),
        excursion_signs=su[~common].astype(np.int8),
    )


def pair_compose(dec: StepDecomposition) -> PairInterface:
    two_n = 2 * dec.n
    su = np.zeros(two_n, dtype=np.int64)
    sl = np.zeros(two_n, dtype=np.int64)
    pos = np.asarray(dec.common_positions, dtype=np.int64) - 1
    mask = np.zeros(two_n, dtype=bool)
    mask[pos] = True
    su[mask] = dec.common_signs
    sl[mask] = dec.common_signs
    su[~mask] = dec.excursion_signs
    sl[~mask] = -np.asarray(dec.excursion_signs)
    upper = IntegerInterface.from_steps(su)
    lower = IntegerInterface.from_steps(sl)
    return PairInterface(upper, lower)


# ---------------------------------------------------------------------------
# uniform samplers (vectorized over the batch)

def _rng_of(rng, seed):
    if rng is not None and seed is not None:
        raise ValueError("pass either seed or rng, not both")
    return rng if rng is not None else np.random.Generator(np.random.PCG64(seed))


def _uniform_bridge_heights(n_steps_half: int, size: int, rng) -> np.ndarray:
    """size uniform bridges with n_steps_half ups and downs; (size, 2m+1)."""
    m = n_steps_half
    if m == 0:
        return np.zeros((size, 1), dtype=np.int64)
    base = np.concatenate([np.ones(m, dtype=np.int64), -np.ones(m, dtype=np.int64)])
    steps = rng.permuted(np.broadcast_to(base, (size, 2 * m)).copy(), axis=1)
    H = np.zeros((size, 2 * m + 1), dtype=np.int64)
    np.cumsum(steps, axis=1, out=H[:, 1:])
    return H


def _vervaat_batch(H: np.ndarray) -> np.ndarray:
    """Rotate each bridge at its first minimum, yielding a nonnegative
    bridge.  NOTE: on balanced discrete bridges this rotation is NOT
    measure-preserving onto nonnegative bridges (paths whose minimum is
    attained many times are over-produced); it is the right transform
    analytically, but uniform sampling goes through _uniform_dyck."""
    size, L = H.shape
    two_m = L - 1
    if two_m == 0:
        return H.copy()
    steps = np.diff(H, axis=1)
    pivot = np.argmin(H, axis=1)  # first index attaining the minimum
    idx = (pivot[:, None] + np.arange(two_m)[None, :]) % two_m
    rolled = np.take_along_axis(steps, idx, axis=1)
    out = np.zeros_like(H)
    np.cumsum(rolled, axis=1, out=out[:, 1:])
    return out


def vervaat(iface: IntegerInterface) -> IntegerInterface:
    """Cycle-rotation of a bridge at its first minimum: a nonnegative bridge."""
    H = _vervaat_batch(iface.heights[None, :])[0]
    return IntegerInterface(iface.n, H)


def _uniform_dyck(m: int, size: int, rng) -> np.ndarray:
    """size uniform nonnegative bridges of length 2m ((size, 2m+1) heights).

    Cycle lemma: shuffle m+1 ups and m downs; of the 2m+1 cyclic
    rotations exactly one has all partial sums positive, and it starts
    right after the last position of the running minimum.  Dropping its
    forced leading up-step leaves a nonnegative bridge, and the whole map
    is exactly (2m+1)-to-one, hence uniform.
    """
    if m == 0:
        return np.zeros((size, 1), dtype=np.int64)
    odd = 2 * m + 1
    base = np.concatenate([np.ones(m + 1, dtype=np.int64),
                           -np.ones(m, dtype=np.int64)])
    steps = rng.permuted(np.broadcast_to(base, (size, odd)).copy(), axis=1)
    S = np.zeros((size, odd + 1), dtype=np.int64)
    np.cumsum(steps, axis=1, out=S[:, 1:])
    # last index in {0..2m} attaining the minimum of the partial sums
    T = S[:, :odd]
    jstar = (odd - 1) - np.argmin(T[:, ::-1], axis=1)
    idx = (jstar[:, None] + 1 + np.arange(2 * m)[None, :]) % odd
    dyck = np.take_along_axis(steps, idx, axis=1)
    H = np.zeros((size, 2 * m + 1), dtype=np.int64)
    np.cumsum(dyck, axis=1, out=H[:, 1:])
    return H


def uniform_sample(model, n: int, size: int, *, rng=None, seed=None) -> np.ndarray:
    """i.i.d. uniform states as raw heights: (size, 2n+1) int64, or
    (size, 2, 2n+1) for pairs."""
    model = ModelKind(model)
    gen = _rng_of(rng, seed)
    if model is ModelKind.Bridge:
        return _uniform_bridge_heights(n, size, gen)
    if model is ModelKind.BridgeWall:
        return _uniform_dyck(n, size, gen)

    two_n = 2 * n
    weights = np.array([math.comb(two_n, 2 * m) * math.comb(2 * m, m)
                        * catalan(n - m) for m in range(n + 1)], dtype=float)
    counts = gen.multinomial(size, weights / weights.sum())
    out = np.zeros((size, 2, two_n + 1), dtype=np.int64)
    row = 0
    for m, cnt in enumerate(counts):
        if cnt == 0:
            continue
        # positions of the 2m common steps: random 2m-subset per row
        perm = gen.permuted(
            np.broadcast_to(np.arange(two_n), (cnt, two_n)).copy(), axis=1)
        pos = np.sort(perm[:, :2 * m], axis=1)
        mask = np.zeros((cnt, two_n), dtype=bool)
        np.put_along_axis(mask, pos, True, axis=1)
        s_common = np.diff(_uniform_bridge_heights(m, cnt, gen), axis=1)
        d_exc = np.diff(_uniform_dyck(n - m, cnt, gen), axis=1)
        su = np.zeros((cnt, two_n), dtype=np.int64)
        sl = np.zeros((cnt, two_n), dtype=np.int64)
        np.put_along_axis(su, pos, s_common, axis=1)
        np.put_along_axis(sl, pos, s_common, axis=1)
        # complement positions, ascending (stable sort keeps index order)
        comp = np.argsort(mask, axis=1, kind="stable")[:, :two_n - 2 * m]
        np.put_along_axis(su, comp, d_exc, axis=1)
        np.put_along_axis(sl, comp, -d_exc, axis=1)
        np.cumsum(su, axis=1, out=out[row:row + cnt, 0, 1:])
        np.cumsum(sl, axis=1, out=out[row:row + cnt, 1, 1:])
        row += cnt
    # group-by-m assembly order is not exchangeable; shuffle rows
    return out[gen.permutation(size)]


# ---------------------------------------------------------------------------
# exact tilted sampler via backward transfer arrays

def _column_tilts(rates: RateTable) -> np.ndarray:
    two_n = rates.two_n
    c = np.zeros(two_n + 1)
    c[1:two_n] = 0.5 * rates.log_ratio()[1:two_n]
    return c


def _single_backward(n: int, c: np.ndarray, wall: bool) -> np.ndarray:
    """V[k, h+2n] proportional to the weight of all completions from height
    h at column k; each column max-normalized (ratios are all we use)."""
    two_n = 2 * n
    width = 4 * n + 1
    off = 2 * n
    hs = np.arange(-2 * n, 2 * n + 1, dtype=float)
    V = np.zeros((two_n + 1, width))
    V[two_n, off] = 1.0
    for k in range(two_n - 1, -1, -1):
        w = np.exp(c[k + 1] * hs) * V[k + 1]
        Vk = np.zeros(width)
        Vk[:-1] += w[1:]   # step up to h+1
        Vk[1:] += w[:-1]   # step down to h-1
        if wall:
            Vk[:off] = 0.0
        m = Vk.max()
        if m <= 0:
            raise RuntimeError("transfer recursion died; invalid geometry")
        V[k] = Vk / m
    return V


def _single_forward(n: int, c: np.ndarray, V: np.ndarray, size: int, rng) -> np.ndarray:
    two_n = 2 * n
    off = 2 * n
    H = np.zeros((size, two_n + 1), dtype=np.int64)
    h = np.zeros(size, dtype=np.int64)
    for k in range(two_n):
        cu = c[k + 1]
        vu = V[k + 1, h + 1 + off] * np.exp(cu * (h + 1))
        vd = V[k + 1, h - 1 + off] * np.exp(cu * (h - 1))
        pu = vu / (vu + vd)
        s = np.where(rng.random(size) < pu, 1, -1).astype(np.int64)
        h = h + s
        H[:, k + 1] = h
    return H


def _pair_backward(n: int, c: np.ndarray) -> np.ndarray:
    """V[k, a+2n, b+2n] over ordered pairs a >= b; weight per column is
    exp(c * gap)."""
    two_n = 2 * n
    width = 4 * n + 1
    off = 2 * n
    a = np.arange(-2 * n, 2 * n + 1, dtype=float)[:, None]
    b = np.arange(-2 * n, 2 * n + 1, dtype=float)[None, :]
    order = (a >= b)
    V = np.zeros((two_n + 1, width, width))
    V[two_n, off, off] = 1.0
    for k in range(two_n - 1, -1, -1):
        w = np.exp(c[k + 1] * (a - b)) * V[k + 1]
        Vk = np.zeros((width, width))
        Vk[:-1, :-1] += w[1:, 1:]   # both up
        Vk[:-1, 1:] += w[1:, :-1]   # upper up, lower down
        Vk[1:, :-1] += w[:-1, 1:]   # upper down, lower up
        Vk[1:, 1:] += w[:-1, :-1]  # both down
        Vk *= order
        m = Vk.max()
        if m <= 0:
            raise RuntimeError("transfer recursion died; invalid geometry")
        V[k] = Vk / m
    return V


def _pair_forward(n: int, c: np.ndarray, V: np.ndarray, size: int, rng) -> np.ndarray:
    two_n = 2 * n
    off = 2 * n
    H = np.zeros((size, 2, two_n + 1), dtype=np.int64)
    ha = np.zeros(size, dtype=np.int64)
    hb = np.zeros(size, dtype=np.int64)
    moves = ((1, 1), (1, -1), (-1, 1), (-1, -1))
    for k in range(two_n):
        cu = c[k + 1]
        w = np.empty((size, 4))
        for j, (sa, sb) in enumerate(moves):
            na, nb = ha + sa, hb + sb
            w[:, j] = V[k + 1, na + off, nb + off] * np.exp(cu * (na - nb))
        cw = np.cumsum(w, axis=1)
        r = rng.random(size) * cw[:, -1]
        choice = (cw < r[:, None]).sum(axis=1)
        sa = np.where(choice < 2, 1, -1).astype(np.int64)
        sb = np.where(choice % 2 == 0, 1, -1).astype(np.int64)
        ha = ha + sa
        hb = hb + sb
        H[:, 0, k + 1] = ha
        H[:, 1, k + 1] = hb
    return H


def exact_sample(model, n: int, size: int, sigma, *, rng=None, seed=None) -> np.ndarray:
    """i.i.d. draws from the exact Gibbs measure, as raw heights.

    Backward pass builds per-column completion weights (max-normalized,
    which is safe: within a column the dynamic range stays far above the
    float floor for any n this package targets); forward pass then samples
    the whole batch column by column.  Shapes as in uniform_sample.
    """
    model = ModelKind(model)
    gen = _rng_of(rng, seed)
    rates = sigma if isinstance(sigma, RateTable) else build_rates(_sigma(sigma), n)
    c = _column_tilts(rates)
    if model is ModelKind.Pair:
        V = _pair_backward(n, c)
        return _pair_forward(n, c, V, size, gen)
    V = _single_backward(n, c, wall=model is ModelKind.BridgeWall)
    return _single_forward(n, c, V, size, gen)


__all__ = [
    "GibbsMeasure", "StepDecomposition", "catalan", "state_count",
    "enumerate_states", "gibbs_measure", "generator_matrix",
    "detailed_balance_error", "stationarity_error", "dirichlet_form",
    "symmetrized_operator", "principal_eigenvalue", "rayleigh_supremum",
    "pair_decompose", "pair_compose", "vervaat", "uniform_sample",
    "exact_sample",
]
