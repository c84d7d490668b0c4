"""Exact lattice-side objects: interfaces, rates, areas, particle encodings.

Conventions used throughout the package:

* An interface on 2N+1 lattice sites is stored as *unscaled* integer
  heights H(0..2N) with H(0)=H(2N)=0 and |H(k)-H(k-1)|=1.  The scaled
  profile is h(k/2N) = H(k)/sqrt(2N); keeping integers makes every
  constraint (wall, non-crossing) an exact comparison.
* Jump rates live on interior sites k=1..2N-1.  Rate arrays are padded to
  length 2N+1 with zeros at both ends so that `p[k]` is the rate *at site
  k* with no index shifting.
* A site can support at most one corner flip at a time: it is a local
  minimum (up-flip candidate), a local maximum (down-flip candidate) or a
  slope (nothing).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ModelKind",
    "IntegerInterface",
    "PairInterface",
    "AsymmetryProfile",
    "RateTable",
    "ParticleConfiguration",
    "build_rates",
    "discrete_laplacian",
    "weighted_area",
    "to_particles",
    "from_particles",
    "allowed_flips",
    "apply_flip",
]


class ModelKind(enum.Enum):
    """The three interface models: free bridge, bridge above a wall,
    non-crossing pair of bridges."""

    Bridge = "bridge"
    BridgeWall = "bridge-wall"
    Pair = "pair"


def _as_readonly(arr, dtype):
    out = np.ascontiguousarray(np.asarray(arr, dtype=dtype))
    out.flags.writeable = False
    return out


@dataclass(frozen=True, eq=False)
class IntegerInterface:
    """One lattice interface, unscaled.

    `n` is the half-length (path has 2n steps).  n=0 is allowed as the
    degenerate single-point path [0]; it shows up as the empty component
    of pair decompositions.
    """

    n: int
    heights: np.ndarray
    validate: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "heights", _as_readonly(self.heights, np.int64))
        if self.validate:
            h = self.heights
            if self.n < 0:
                raise ValueError("n must be >= 0")
            if len(h) != 2 * self.n + 1:
                raise ValueError(f"heights must have length {2*self.n+1}, got {len(h)}")
            if h[0] != 0 or h[-1] != 0:
                raise ValueError("interface must start and end at height 0")
            if self.n > 0 and not np.all(np.abs(np.diff(h)) == 1):
                raise ValueError("neighbouring heights must differ by exactly 1")

    @property
    def two_n(self) -> int:
        return 2 * self.n

    def h_values(self) -> np.ndarray:
        """Scaled profile h(k/2N) = H(k)/sqrt(2N)."""
        return self.heights / math.sqrt(2 * self.n)

    def lattice_x(self) -> np.ndarray:
        return np.arange(2 * self.n + 1) / (2 * self.n)

    def steps(self) -> np.ndarray:
        return np.diff(self.heights)

    def is_nonnegative(self) -> bool:
        return bool(np.all(self.heights >= 0))

    def __eq__(self, other):
        return (
            isinstance(other, IntegerInterface)
            and self.n == other.n
            and np.array_equal(self.heights, other.heights)
        )

    def __hash__(self):
        return hash((self.n, self.heights.tobytes()))

    @classmethod
    def from_steps(cls, steps) -> "IntegerInterface":
        steps = np.asarray(steps, dtype=np.int64)
        heights = np.concatenate(([0], np.cumsum(steps)))
        return cls(n=len(steps) // 2, heights=heights)

    @classmethod
    def flat_zigzag(cls, n: int) -> "IntegerInterface":
        """The sawtooth ground state 0,1,0,1,...,0 (useful as a minimal
        wall-admissible start)."""
        h = np.zeros(2 * n + 1, dtype=np.int64)
        h[1::2] = 1
        return cls(n=n, heights=h)


@dataclass(frozen=True, eq=False)
class PairInterface:
    """Upper/lower pair of interfaces on the same lattice, never crossing."""

    upper: IntegerInterface
    lower: IntegerInterface

    def __post_init__(self):
        if self.upper.n != self.lower.n:
            raise ValueError("upper and lower interfaces must share n")
        if not np.all(self.upper.heights >= self.lower.heights):
            raise ValueError("upper interface must dominate lower everywhere")

    @property
    def n(self) -> int:
        return self.upper.n

    def gap(self) -> np.ndarray:
        """Pointwise integer gap; always even by parity."""
        return self.upper.heights - self.lower.heights

    def __eq__(self, other):
        return (
            isinstance(other, PairInterface)
            and self.upper == other.upper
            and self.lower == other.lower
        )

    def __hash__(self):
        return hash((self.upper, self.lower))


@dataclass(frozen=True)
class AsymmetryProfile:
    """Drift profile sigma on [0,1], sampled at lattice points.

    `holder_constant` is informational (a declared 1/2-Hoelder bound); the
    code only ever evaluates sigma pointwise.
    `spec_string` round-trips through configs/manifests for the built-in
    families (const/linear/sin/piecewise).
    """

    sigma: callable
    holder_constant: float = 0.0
    spec_string: str = ""

    def __call__(self, x):
        val = self.sigma(x)
        if not np.all(np.isfinite(val)):
            raise ValueError(f"asymmetry profile is not finite at x={x!r}")
        return val

    @classmethod
    def constant(cls, c: float) -> "AsymmetryProfile":
        c = float(c)
        return cls(sigma=lambda x, c=c: c * np.ones_like(np.asarray(x, dtype=float)),
                   holder_constant=0.0, spec_string=f"const:{c:g}")

    @classmethod
    def linear(cls, a: float, b: float = 0.0) -> "AsymmetryProfile":
        a, b = float(a), float(b)
        return cls(sigma=lambda x, a=a, b=b: a * np.asarray(x, dtype=float) + b,
                   holder_constant=abs(a), spec_string=f"linear:{a:g},{b:g}")

    @classmethod
    def sinusoidal(cls, amp: float, freq: float = 1.0) -> "AsymmetryProfile":
        """amp * sin(freq * pi * x)."""
        amp, freq = float(amp), float(freq)
        return cls(
            sigma=lambda x, a=amp, f=freq: a * np.sin(f * np.pi * np.asarray(x, dtype=float)),
            holder_constant=abs(amp * freq) * np.pi,
            spec_string=f"sin:{amp:g},{freq:g}",
        )

    @classmethod
    def piecewise(cls, breaks, values) -> "AsymmetryProfile":
        """Left-continuous step profile: values[i] on [breaks[i], breaks[i+1])."""
        breaks = np.asarray(breaks, dtype=float)
        values = np.asarray(values, dtype=float)
        if len(values) != len(breaks) + 1:
            raise ValueError("need len(values) == len(breaks) + 1")

        def step(x, b=breaks, v=values):
            return v[np.searchsorted(b, np.asarray(x, dtype=float), side="right")]

        spec = "piecewise:" + ",".join(f"{b:g}" for b in breaks) + ";" + ",".join(
            f"{v:g}" for v in values)
        return cls(sigma=step, holder_constant=float("inf"), spec_string=spec)

    @classmethod
    def from_spec(cls, spec: str) -> "AsymmetryProfile":
        """Parse the flat config syntax: const:c, linear:a,b, sin:amp,freq."""
        kind, _, rest = spec.partition(":")
        try:
            if kind == "const":
                return cls.constant(float(rest))
            if kind == "linear":
                a, b = (rest.split(",") + ["0"])[:2] if "," in rest else (rest, "0")
                return cls.linear(float(a), float(b))
            if kind == "sin":
                amp, freq = rest.split(",")
                return cls.sinusoidal(float(amp), float(freq))
            if kind == "piecewise":
                bpart, _, vpart = rest.partition(";")
                breaks = [float(t) for t in bpart.split(",")] if bpart else []
                values = [float(t) for t in vpart.split(",")]
                return cls.piecewise(breaks, values)
        except (ValueError, TypeError) as exc:
            raise ValueError(f"bad asymmetry spec {spec!r}: {exc}") from None
        raise ValueError(f"unknown asymmetry spec kind {kind!r}")


@dataclass(frozen=True, eq=False)
class RateTable:
    """Per-site up/down rates.  p[k]+q[k]=(2N)^2 exactly by construction;
    arrays are padded with zeros at sites 0 and 2N."""

    n: int
    p: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "p", _as_readonly(self.p, np.float64))
        object.__setattr__(self, "q", _as_readonly(self.q, np.float64))
        two_n = 2 * self.n
        if len(self.p) != two_n + 1 or len(self.q) != two_n + 1:
            raise ValueError("rate arrays must be padded to length 2N+1")
        interior = slice(1, two_n)
        total = float(two_n) ** 2
        ps, qs = self.p[interior], self.q[interior]
        if np.any(ps <= 0) or np.any(qs <= 0):
            raise ValueError("interior rates must be strictly positive")
        if np.max(np.abs(ps + qs - total)) > 1e-12 * total:
            raise ValueError("p[k] + q[k] must equal (2N)^2")

    @property
    def two_n(self) -> int:
        return 2 * self.n

    def log_ratio(self) -> np.ndarray:
        """log(p[k]/q[k]) on interior sites (padded array, zero at the ends)."""
        out = np.zeros(2 * self.n + 1)
        out[1:2 * self.n] = np.log(self.p[1:2 * self.n] / self.q[1:2 * self.n])
        return out

    def __eq__(self, other):
        return (
            isinstance(other, RateTable)
            and self.n == other.n
            and np.array_equal(self.p, other.p)
            and np.array_equal(self.q, other.q)
        )


@dataclass(frozen=True, eq=False)
class ParticleConfiguration:
    """Occupation bits: bits[k-1] = 1 iff the slope on [(k-1)/2N, k/2N] is +1."""

    bits: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "bits", _as_readonly(self.bits, np.int8))
        if np.any((self.bits != 0) & (self.bits != 1)):
            raise ValueError("bits must be 0/1")

    def __len__(self):
        return len(self.bits)

    def __eq__(self, other):
        return isinstance(other, ParticleConfiguration) and np.array_equal(
            self.bits, other.bits)

    def __hash__(self):
        return hash(self.bits.tobytes())

    def gradient(self, k: int) -> int:
        """bits[k+1] - bits[k] with 1-based particle indexing (k=1..2N-1)."""
        return int(self.bits[k] - self.bits[k - 1])


def build_rates(sigma: AsymmetryProfile, n: int) -> RateTable:
    """Rates solving p+q = (2N)^2 and log(p/q) = 4 sigma(k/2N) (2N)^(-3/2).

    Writing theta for the log-ratio, p = (2N)^2 * e^theta/(1+e^theta) is the
    logistic form; q is computed as the exact complement so the sum
    constraint holds to the last bit.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    two_n = 2 * n
    k = np.arange(1, two_n)
    sig = np.asarray(sigma(k / two_n), dtype=float)
    if sig.shape == ():
        sig = np.full(two_n - 1, float(sig))
    if not np.all(np.isfinite(sig)):
        raise ValueError("asymmetry profile is not finite on the lattice")
    theta = 4.0 * sig * two_n ** (-1.5)
    total = float(two_n) ** 2
    # logistic in a form stable for either sign of theta
    p_int = total / (1.0 + np.exp(-theta))
    p = np.zeros(two_n + 1)
    q = np.zeros(two_n + 1)
    p[1:two_n] = p_int
    q[1:two_n] = total - p_int
    return RateTable(n=n, p=p, q=q)


def discrete_laplacian(iface: IntegerInterface, k: int) -> int:
    """H(k+1) - 2H(k) + H(k-1); +2 at a local minimum, -2 at a local
    maximum, 0 on a slope.  Interior sites only."""
    if not 1 <= k <= 2 * iface.n - 1:
        raise IndexError(f"site {k} is not interior (1..{2*iface.n - 1})")
    h = iface.heights
    return int(h[k + 1] - 2 * h[k] + h[k - 1])


def weighted_area(state, rates: RateTable) -> float:
    """Discrete weighted area A_N(h) = (1/4N) sum_k log(p/q)(k) h(k/2N).

    For a pair the height is replaced by the gap h_upper - h_lower.  The
    invariant-measure weight of a state is exp((2N)^(3/2) A_N(h)); note
    (2N)^(3/2) A_N = (1/2) sum_k log(p/q)(k) H(k), an exact half-integer
    combination of the log-ratios.
    """
    if isinstance(state, PairInterface):
        if state.n != rates.n:
            raise ValueError("state and rates disagree on n")
        vals = (state.upper.heights - state.lower.heights).astype(float)
        n = state.n
    else:
        if state.n != rates.n:
            raise ValueError("state and rates disagree on n")
        vals = state.heights.astype(float)
        n = state.n
    two_n = 2 * n
    lr = rates.log_ratio()
    h = vals / math.sqrt(two_n)
    return float(np.dot(lr[1:two_n], h[1:two_n]) / (4 * n))


def scaled_weight_exponent(state, rates: RateTable) -> float:
    """(2N)^(3/2) A_N(h) computed as (1/2) sum log(p/q) H(k) --- the exact
    form used for Gibbs weights and the flip identity."""
    if isinstance(state, PairInterface):
        vals = (state.upper.heights - state.lower.heights).astype(float)
        n = state.n
    else:
        vals = state.heights.astype(float)
        n = state.n
    lr = rates.log_ratio()
    return float(0.5 * np.dot(lr[1:2 * n], vals[1:2 * n]))


def to_particles(iface: IntegerInterface) -> ParticleConfiguration:
    """Slopes to occupation bits; +1 slope = particle present."""
    steps = iface.steps()
    return ParticleConfiguration(bits=(steps == 1).astype(np.int8))


def from_particles(bits: ParticleConfiguration) -> IntegerInterface:
    steps = np.where(np.asarray(bits.bits) == 1, 1, -1).astype(np.int64)
    heights = np.concatenate(([0], np.cumsum(steps)))
    if heights[-1] != 0:
        raise ValueError("bit configuration is not balanced (endpoint != 0)")
    return IntegerInterface(n=len(steps) // 2, heights=heights)


def wall_partial_sum_ok(bits: ParticleConfiguration) -> bool:
    """Wall condition in particle language: sum_{i<=k} eta(i) >= k/2."""
    csum = np.cumsum(bits.bits)
    k = np.arange(1, len(bits.bits) + 1)
    return bool(np.all(2 * csum >= k))


def allowed_flips(state, model: ModelKind):
    """All currently possible corner flips as (site, direction, rate_kind).

    direction is +1 (up) or -1 (down); rate_kind is 'p' or 'q' naming which
    column of the RateTable drives the flip.  Interface order for pairs:
    flips come tagged with interface_id 1 (upper) or 2 (lower), giving
    tuples (site, interface_id, direction, rate_kind).
    """
    if model is ModelKind.Pair:
        if not isinstance(state, PairInterface):
            raise TypeError("Pair model needs a PairInterface state")
        up_h, lo_h = state.upper.heights, state.lower.heights
        out = []
        for k in range(1, 2 * state.n):
            d_up = up_h[k + 1] - 2 * up_h[k] + up_h[k - 1]
            d_lo = lo_h[k + 1] - 2 * lo_h[k] + lo_h[k - 1]
            if d_up > 0:
                out.append((k, 1, +1, "p"))
            elif d_up < 0 and up_h[k] > lo_h[k]:
                out.append((k, 1, -1, "q"))
            if d_lo > 0 and lo_h[k] < up_h[k]:
                out.append((k, 2, +1, "q"))
            elif d_lo < 0:
                out.append((k, 2, -1, "p"))
        return out

    if not isinstance(state, IntegerInterface):
        raise TypeError(f"{model} needs an IntegerInterface state")
    h = state.heights
    out = []
    for k in range(1, 2 * state.n):
        d = h[k + 1] - 2 * h[k] + h[k - 1]
        if d > 0:
            out.append((k, +1, "p"))
        elif d < 0:
            if model is ModelKind.BridgeWall and h[k] <= 1:
                continue  # the flip would dig below the wall
            out.append((k, -1, "q"))
    return out


def apply_flip(state, site: int, direction: int, interface_id: int = 1):
    """Return the state after one corner flip (no legality check beyond
    the type invariants of the result)."""
    if isinstance(state, PairInterface):
        if interface_id == 1:
            h = state.upper.heights.copy()
            h[site] += 2 * direction
            return PairInterface(upper=IntegerInterface(n=state.n, heights=h),
                                 lower=state.lower)
        h = state.lower.heights.copy()
        h[site] += 2 * direction
        return PairInterface(upper=state.upper,
                             lower=IntegerInterface(n=state.n, heights=h))
    h = state.heights.copy()
    h[site] += 2 * direction
    return IntegerInterface(n=state.n, heights=h)
