"""Monte Carlo aggregation, comparison with theory, growth fits and the CLT test."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import erfc

from .simulate import WindingError, WindingSample, discretize, wind_paths
from .spectral import SpectralMeasure
from .theory import VarianceCurve

MAX_FAILURE_RATE = 1e-3


class SimulationError(RuntimeError):
    """Too many paths failed to produce a winding."""


@dataclass(frozen=True)
class MCReport:
    n_paths: int
    T: float
    mean: float
    variance: float
    se_mean: float
    se_variance: float
    seed: int
    n_failures: int = 0
    deltas: np.ndarray = field(default=None, repr=False, compare=False)
    samples: tuple = field(default=(), repr=False, compare=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("deltas")
        d.pop("samples")
        return d


@dataclass(frozen=True)
class GrowthFit:
    exponent: float
    intercept: float
    residual: float
    T_range: tuple[float, float]
    n_points: int

    @property
    def reliable(self) -> bool:
        return self.residual < 0.1


@dataclass(frozen=True)
class CLTReport:
    n_samples: int
    statistic: float
    p_value: float
    standardization: str
    loc: float
    scale: float


def jackknife_variance(x) -> tuple[float, float]:
    """Unbiased sample variance and its jackknife standard error.

    Leave-one-out variances come from the closed form
    ``(sum d^2 - n d_i^2 / (n - 1)) / (n - 2)`` with ``d = x - mean``.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 3:
        raise ValueError("need at least 3 samples")
    d = x - x.mean()
    ss = math.fsum((d * d).tolist())
    var = ss / (n - 1)
    loo = (ss - n * d * d / (n - 1)) / (n - 2)
    se = math.sqrt((n - 1) / n * float(np.sum((loo - loo.mean()) ** 2)))
    return var, se


def summarize(deltas, T: float, seed: int, n_failures: int = 0, samples=()) -> MCReport:
    x = np.asarray(deltas, dtype=float)
    var, se_var = jackknife_variance(x)
    return MCReport(n_paths=x.size, T=float(T), mean=float(math.fsum(x.tolist()) / x.size),
                    variance=var, se_mean=math.sqrt(var / x.size), se_variance=se_var,
                    seed=int(seed), n_failures=n_failures, deltas=x, samples=tuple(samples))


def mc_winding(measure: SpectralMeasure, T: float, n_paths: int, seed: int,
               n_freq: int | None = None, dt0: float | None = None, threads: int = 1,
               t0: float = 0.0, allow_degenerate: bool = False, T_max: float | None = None) -> MCReport:
    """Simulate ``n_paths`` windings over ``[t0, t0 + T]`` and summarize them.

    Paths whose refinement fails are dropped and counted; more than 0.1%
    failures raises :class:`SimulationError`.
    """
    grid = discretize(measure, T_max if T_max is not None else t0 + T, n_freq,
                      allow_degenerate=allow_degenerate)
    results = wind_paths(grid, n_paths, T, seed, dt0=dt0, t0=t0, threads=threads)
    ok = [r for r in results if isinstance(r, WindingSample)]
    failed = [r for r in results if isinstance(r, WindingError)]
    if len(failed) > MAX_FAILURE_RATE * n_paths:
        raise SimulationError(f"{len(failed)} of {n_paths} paths failed; first at t={failed[0].t}")
    return summarize([r.delta for r in ok], T, seed, len(failed), ok)


def compare(theory_V: float, report: MCReport) -> float:
    """z-score of the empirical variance against a theoretical value."""
    if not report.se_variance > 0:
        raise ValueError("se_variance must be positive")
    return (report.variance - theory_V) / report.se_variance


def _series(data, T_min, T_max):
    if isinstance(data, VarianceCurve):
        T, V = data.T_grid, data.V_via_K
    elif len(data) and isinstance(data[0], MCReport):
        T = np.array([r.T for r in data])
        V = np.array([r.variance for r in data])
    else:
        T, V = (np.asarray(v, dtype=float) for v in data)
    T = np.asarray(T, dtype=float)
    V = np.asarray(V, dtype=float)
    keep = np.ones(T.size, dtype=bool)
    if T_min is not None:
        keep &= T >= T_min
    if T_max is not None:
        keep &= T <= T_max
    return T[keep], V[keep]


def growth_exponent(data, T_min: float | None = None, T_max: float | None = None,
                    min_points: int = 6) -> GrowthFit:
    """Least-squares slope of ``log V`` against ``log T``.

    ``data`` is a :class:`VarianceCurve`, a list of :class:`MCReport`, or a
    ``(T, V)`` pair.  ``residual`` is the largest absolute log-residual.
    """
    T, V = _series(data, T_min, T_max)
    if T.size < min_points:
        raise ValueError(f"need at least {min_points} points in range, got {T.size}")
    if np.any(V <= 0):
        raise ValueError("growth fit needs positive V")
    x, y = np.log(T), np.log(V)
    slope, intercept = np.polyfit(x, y, 1)
    resid = float(np.max(np.abs(y - (slope * x + intercept))))
    return GrowthFit(float(slope), float(intercept), resid, (float(T[0]), float(T[-1])), int(T.size))


def normal_cdf(z):
    return 0.5 * erfc(-np.asarray(z, dtype=float) / math.sqrt(2.0))


def kolmogorov_pvalue(D: float, n: float, terms: int = 20) -> float:
    """Asymptotic Kolmogorov tail ``2 sum (-1)^(k-1) exp(-2 k^2 lam^2)``.

    ``lam`` carries Stephens' finite-sample correction
    ``(sqrt(n) + 0.12 + 0.11/sqrt(n)) D``.
    """
    rn = math.sqrt(n)
    lam = (rn + 0.12 + 0.11 / rn) * D
    if lam < 1e-3:
        return 1.0
    k = np.arange(1, terms + 1)
    p = 2.0 * float(np.sum((-1.0) ** (k - 1) * np.exp(-2.0 * k * k * lam * lam)))
    return min(1.0, max(0.0, p))


def clt_test(samples, loc: float | None = None, scale: float | None = None) -> CLTReport:
    """One-sample KS test of standardized samples against N(0, 1).

    By default the samples are standardized by their own mean and standard
    deviation.  That makes the Kolmogorov p-value conservative (estimated
    parameters pull the empirical CDF toward the normal); pass ``loc`` and
    ``scale`` to test against a fully specified normal.
    """
    x = np.asarray(samples, dtype=float)
    n = x.size
    if n < 100:
        raise ValueError("clt_test needs at least 100 samples")
    mode = "known"
    if loc is None or scale is None:
        mode = "empirical"
        loc = float(x.mean()) if loc is None else loc
        scale = float(x.std(ddof=1)) if scale is None else scale
    if not scale > 0:
        raise ValueError("zero sample variance")
    z = np.sort((x - loc) / scale)
    cdf = normal_cdf(z)
    i = np.arange(1, n + 1)
    D = float(max(np.max(i / n - cdf), np.max(cdf - (i - 1) / n)))
    return CLTReport(n, D, kolmogorov_pvalue(D, n), mode, float(loc), float(scale))


def linear_lower_bound_check(curve: VarianceCurve) -> float:
    """``min V(T)/T`` over the curve."""
    return float(np.min(curve.V_via_K / curve.T_grid))


def subquadratic_check(data: VarianceCurve | Sequence) -> list[float]:
    """``V(T)/T^2`` along the curve or MC series."""
    T, V = _series(data, None, None)
    return (V / T ** 2).tolist()


def ks_two_sample(a, b) -> tuple[float, float]:
    """Two-sample KS statistic and asymptotic p-value."""
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    allv = np.concatenate([a, b])
    D = float(np.max(np.abs(np.searchsorted(a, allv, side="right") / a.size
                            - np.searchsorted(b, allv, side="right") / b.size)))
    ne = a.size * b.size / (a.size + b.size)
    return D, kolmogorov_pvalue(D, ne)
