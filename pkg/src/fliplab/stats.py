"""Statistical comparison harness.

Thin, deterministic wrappers used by the tests and the CLI: empirical vs
exact control measures, two-sample KS, mean-profile fits with pointwise
confidence bands, and the decorrelation-spacing heuristic for sampling
stationary dynamics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Tuple

import numpy as np
from scipy import stats as sps

from .gibbs import GibbsMeasure
from .lattice_core import IntegerInterface, PairInterface


@dataclass
class EmpiricalSummary:
    name: str
    n_samples: int
    mean: float
    variance: float
    quantiles: list
    stderr: float

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("need at least one sample")
        if self.variance < 0:
            raise ValueError("variance cannot be negative")


def summarize(name: str, samples, probs=(0.05, 0.25, 0.5, 0.75, 0.95)
              ) -> EmpiricalSummary:
    x = np.asarray(samples, dtype=np.float64)
    if x.size == 0:
        raise ValueError("need at least one sample")
    var = float(x.var(ddof=1)) if x.size > 1 else 0.0
    return EmpiricalSummary(
        name=name, n_samples=int(x.size), mean=float(x.mean()), variance=var,
        quantiles=[float(q) for q in np.quantile(x, probs)],
        stderr=math.sqrt(var / x.size))


def ks_distance(samples_a, samples_b) -> Tuple[float, float]:
    """Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value."""
    a = np.asarray(samples_a, dtype=np.float64)
    b = np.asarray(samples_b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise ValueError("both sample sets must be non-empty")
    res = sps.ks_2samp(a, b, method="asymp")
    return float(res.statistic), float(res.pvalue)


def _as_state(sample):
    if isinstance(sample, (IntegerInterface, PairInterface)):
        return sample
    arr = np.asarray(sample)
    if arr.ndim == 1:
        n = (len(arr) - 1) // 2
        return IntegerInterface(n, arr.astype(np.int64))
    if arr.ndim == 2 and arr.shape[0] == 2:
        n = (arr.shape[1] - 1) // 2
        return PairInterface(IntegerInterface(n, arr[0].astype(np.int64)),
                             IntegerInterface(n, arr[1].astype(np.int64)))
    raise ValueError(f"cannot interpret sample of shape {arr.shape} as a state")


def empirical_vs_exact(samples, mu: GibbsMeasure
                       ) -> Tuple[float, float, float]:
    """Chi-square of observed state counts against the exact weights, its
    p-value, and the total-variation distance of the two histograms.

    Chi-square bins with expected count below 5 are merged into their
    weakest neighbors (standard small-expectation pooling); the TV distance
    uses the raw, unmerged histogram over the full enumeration.
    """
    counts = np.zeros(len(mu.states))
    for s in samples:
        try:
            counts[mu.index(_as_state(s))] += 1
        except KeyError:
            raise ValueError("sample outside the enumerated state space")
    n = counts.sum()
    if n == 0:
        raise ValueError("need at least one sample")
    expected = n * mu.probs
    tv = 0.5 * float(np.abs(counts / n - mu.probs).sum())

    # pool small-expectation cells: sort ascending, sweep into groups >= 5
    order = np.argsort(expected)
    grp_obs, grp_exp = [], []
    acc_o = acc_e = 0.0
    for i in order:
        acc_o += counts[i]
        acc_e += expected[i]
        if acc_e >= 5.0:
            grp_obs.append(acc_o)
            grp_exp.append(acc_e)
            acc_o = acc_e = 0.0
    if acc_e > 0:
        if grp_exp:
            grp_obs[-1] += acc_o
            grp_exp[-1] += acc_e
        else:
            grp_obs.append(acc_o)
            grp_exp.append(acc_e)
    obs = np.array(grp_obs)
    exp = np.array(grp_exp) * (n / sum(grp_exp))  # exact renormalization
    chi2 = float(((obs - exp) ** 2 / exp).sum())
    dof = max(len(obs) - 1, 1)
    p = float(sps.chi2.sf(chi2, dof))
    return chi2, p, tv


@dataclass
class ProfileFit:
    x: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    target: np.ndarray
    sup_deviation: float
    n_outside: int          # grid points with |mean - target| > 3 stderr
    n_points: int

    @property
    def outside_fraction(self) -> float:
        return self.n_outside / max(self.n_points, 1)


def profile_fit(samples, target: Callable[[float], float]) -> ProfileFit:
    """Mean profile of an ensemble against a target curve, with pointwise
    3-stderr bands.  samples: (B, m+1) array or a list of GridFunction."""
    if hasattr(samples, "values") or (len(samples) and hasattr(samples[0], "values")):
        arr = np.stack([g.values for g in samples])
    else:
        arr = np.asarray(samples, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError("need a (B, m+1) ensemble")
    B, L = arr.shape
    if B < 100:
        raise ValueError("need an ensemble of at least 100")
    x = np.arange(L) / (L - 1)
    mean = arr.mean(axis=0)
    stderr = arr.std(axis=0, ddof=1) / math.sqrt(B)
    tgt = np.array([float(target(xi)) for xi in x])
    dev = np.abs(mean - tgt)
    return ProfileFit(x=x, mean=mean, stderr=stderr, target=tgt,
                      sup_deviation=float(dev.max()),
                      n_outside=int((dev > 3.0 * stderr).sum()),
                      n_points=L)


def relaxation_spacing(n: int, c_relax: float = 10.0) -> float:
    """Decorrelation spacing for stationary sampling: c_relax times the
    slowest-mode relaxation time 1/((2N)^2 (1 - cos(pi/2N))) of the
    symmetric dynamics (an O(1) time under diffusive scaling)."""
    two_n = 2 * n
    gap = two_n ** 2 * (1.0 - math.cos(math.pi / two_n))
    return c_relax / gap


__all__ = [
    "EmpiricalSummary", "summarize", "ks_distance", "empirical_vs_exact",
    "ProfileFit", "profile_fit", "relaxation_spacing",
]
