"""Sample paths of a complex Gaussian stationary process and their winding.

A path is the random trigonometric sum

    f(t) = sum_k a_k zeta_k exp(-i lambda_k t)

with i.i.d. standard complex Gaussian ``zeta_k`` (real and imaginary parts
independent with variance 1/2).  Atoms of the spectral measure enter
exactly; a density is sampled on a midpoint grid fine enough that the
resulting almost-periodic process does not repeat within ten times the
simulated horizon.

The winding over ``[t0, t0 + T]`` is the sum of principal-value argument
increments between consecutive samples.  Any increment of modulus
``pi/2`` or more is bisected with exact re-evaluation of ``f`` until every
accepted piece is below that guard.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .quadrature import tanh_sinh
from .spectral import DegenerateMeasureError, SpectralMeasure, _density_at

GUARD = math.pi / 2
MAX_DEPTH = 40
PERIOD_FACTOR = 10.0
CHUNK = 64          # paths evaluated together; fixed so results do not depend on --threads
_TIME_BLOCK = 256


class WindingError(RuntimeError):
    """Bisection exhausted near a (numerical) zero of the path."""

    def __init__(self, t: float, path_index: int | None = None):
        self.t = t
        self.path_index = path_index
        where = f" (path {path_index})" if path_index is not None else ""
        super().__init__(f"winding refinement exhausted at t={t!r}{where}; "
                         "near-zero passage, retry with a smaller dt0")


@dataclass(frozen=True)
class FrequencyGrid:
    frequencies: np.ndarray
    amplitudes: np.ndarray
    periodization_period: float = math.inf
    T_max: float = math.inf

    def __post_init__(self):
        if self.frequencies.shape != self.amplitudes.shape:
            raise ValueError("frequencies and amplitudes differ in length")
        if np.any(self.amplitudes < 0):
            raise ValueError("amplitudes must be nonnegative")
        if abs(math.fsum((self.amplitudes ** 2).tolist()) - 1.0) > 1e-12:
            raise ValueError("sum of squared amplitudes must be 1")
        if math.isfinite(self.periodization_period) and math.isfinite(self.T_max) \
                and self.periodization_period < PERIOD_FACTOR * self.T_max * (1 - 1e-12):
            raise ValueError("periodization period shorter than 10 x T_max")

    @property
    def size(self) -> int:
        return self.frequencies.size

    @property
    def rms_frequency(self) -> float:
        return math.sqrt(float(np.sum(self.amplitudes ** 2 * self.frequencies ** 2)))

    def default_dt0(self) -> float:
        """Initial step: about 0.3 rad of typical phase motion per step."""
        return 0.3 / max(1.0, self.rms_frequency)


@dataclass(frozen=True)
class TrigSumProcess:
    grid: FrequencyGrid
    coefficients: np.ndarray
    seed: int
    path_index: int = 0

    @property
    def weights(self) -> np.ndarray:
        """``a_k zeta_k``, the complex weight of each frequency."""
        return self.grid.amplitudes * self.coefficients


@dataclass(frozen=True)
class WindingSample:
    T: float
    delta: float
    n_segments: int
    max_increment: float
    refinements: int
    t0: float = 0.0
    path_index: int = field(default=0, compare=False)


def required_n_freq(measure: SpectralMeasure, T_max: float) -> int:
    """Smallest density grid size with period ``2 pi / dlam >= 10 T_max``."""
    if not measure.has_density:
        return 0
    lo, hi = measure.density.interval
    return int(math.ceil((hi - lo) * PERIOD_FACTOR * T_max / (2 * math.pi) - 1e-9))


def _cell_masses(density, edges: np.ndarray) -> np.ndarray:
    mids = 0.5 * (edges[:-1] + edges[1:])
    dlam = edges[1] - edges[0]
    masses = np.asarray(density.pdf(mids), dtype=float) * dlam
    # a cell holding an integrable singularity gets its exact mass instead
    for s in density.singular_points:
        k = int(np.searchsorted(edges, s, side="right")) - 1
        for j in {k - 1, k} if edges[k] == s else {k}:
            if 0 <= j < mids.size:
                masses[j] = _exact_cell(density, edges[j], edges[j + 1], s)
    return masses


def _exact_cell(density, a, b, s):
    parts = [(a, s), (s, b)] if a < s < b else [(a, b)]
    total = 0.0
    for lo, hi in parts:
        total += tanh_sinh(lambda base, d: _density_at(density, base, d), lo, hi,
                           tol=1e-12, max_level=12, t_max=6.0, offset=True)[0]
    return total


def discretize(measure: SpectralMeasure, T_max: float, n_freq: int | None = None,
               allow_degenerate: bool = False) -> FrequencyGrid:
    """Frequency grid for simulating ``measure`` up to time ``T_max``.

    Atoms are copied exactly.  A density is sampled at ``n_freq`` cell
    midpoints over its effective interval with ``a_k^2 = p(lambda_k) dlam``;
    ``n_freq`` defaults to the smallest admissible value.  Squared amplitudes
    are then renormalized to sum to one.
    """
    if T_max <= 0:
        raise ValueError("T_max must be positive")
    if measure.degenerate and not allow_degenerate:
        raise DegenerateMeasureError(
            f"{measure.name}: single-atom measure, winding is deterministic")
    freqs = [np.array([f for f, _ in measure.atoms], dtype=float)]
    power = [np.array([m for _, m in measure.atoms], dtype=float)]
    period = math.inf
    if measure.has_density:
        need = required_n_freq(measure, T_max)
        n = need if n_freq is None else int(n_freq)
        if n < 2:
            raise ValueError("n_freq must be at least 2")
        if n < need:
            raise ValueError(f"n_freq={n} too small for T_max={T_max}: "
                             f"need at least {need} to keep the period >= 10 T_max")
        lo, hi = measure.density.interval
        edges = np.linspace(lo, hi, n + 1)
        dlam = (hi - lo) / n
        freqs.append(0.5 * (edges[:-1] + edges[1:]))
        power.append(measure.density_weight * _cell_masses(measure.density, edges))
        period = 2 * math.pi / dlam
    lam = np.concatenate(freqs)
    p = np.concatenate(power)
    p = p / math.fsum(p.tolist())
    amps = np.sqrt(p)
    # one more pass so the squared sum is 1 to rounding
    amps = amps / math.sqrt(math.fsum((amps ** 2).tolist()))
    return FrequencyGrid(lam, amps, period, T_max)


def _rng(seed: int, path_index: int) -> np.random.Generator:
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, path_index & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _draw(grid_size: int, seed: int, path_index: int) -> np.ndarray:
    z = _rng(seed, path_index).standard_normal((grid_size, 2))
    return (z[:, 0] + 1j * z[:, 1]) / math.sqrt(2.0)


def sample_process(grid: FrequencyGrid, seed: int, path_index: int = 0) -> TrigSumProcess:
    """Draw ``zeta_k`` from a Philox stream keyed by ``(seed, path_index)``."""
    return TrigSumProcess(grid, _draw(grid.size, seed, path_index), int(seed), int(path_index))


def _eval(freqs, weights, t, order=0):
    """Exact sum over frequencies; numpy's pairwise summation along the last axis."""
    t = np.asarray(t, dtype=float)
    phase = np.exp(-1j * np.multiply.outer(t, freqs))
    terms = phase * (weights if order == 0 else weights * (-1j * freqs))
    return np.sum(terms, axis=-1)


def evaluate(proc: TrigSumProcess, t):
    """``(f(t), f'(t))`` by exact summation; ``t`` may be an array."""
    w = proc.weights
    f = _eval(proc.grid.frequencies, w, t)
    df = _eval(proc.grid.frequencies, w, t, order=1)
    return f[()], df[()]


def _refine(freqs, w, ta, fa, tb, fb, depth, path_index):
    """Split ``[ta, tb]`` until each argument increment is below the guard.

    Returns ``(increments, refinements)``.
    """
    tm = 0.5 * (ta + tb)
    fm = complex(_eval(freqs, w, tm))
    if depth >= MAX_DEPTH or tm == ta or tm == tb or fm == 0:
        raise WindingError(tm, path_index)
    out, count = [], 1
    for (t1, f1, t2, f2) in ((ta, fa, tm, fm), (tm, fm, tb, fb)):
        inc = float(np.angle(f2 * np.conj(f1)))
        if abs(inc) < GUARD:
            out.append(inc)
        else:
            sub, c = _refine(freqs, w, t1, f1, t2, f2, depth + 1, path_index)
            out.extend(sub)
            count += c
    return out, count


def _wind_block(grid: FrequencyGrid, weights: np.ndarray, path_indices, T: float,
                dt0: float, t0: float) -> list:
    """Windings for a block of paths sharing one time grid.

    ``weights`` has shape ``(n_freq, n_paths)``.  Failures come back as
    :class:`WindingError` instances in place of samples.
    """
    m = max(1, int(math.ceil(T / dt0 - 1e-12)))
    ts = t0 + T * np.arange(m + 1) / m
    freqs = grid.frequencies
    f = np.empty((m + 1, weights.shape[1]), dtype=complex)
    for s in range(0, m + 1, _TIME_BLOCK):
        tt = ts[s:s + _TIME_BLOCK]
        f[s:s + tt.size] = np.exp(-1j * np.multiply.outer(tt, freqs)) @ weights
    inc = np.angle(f[1:] * np.conj(f[:-1]))
    results = []
    for j, idx in enumerate(path_indices):
        incs = inc[:, j].tolist()
        refinements = 0
        try:
            if np.any(f[:, j] == 0):
                raise WindingError(float(ts[np.argmax(f[:, j] == 0)]), idx)
            pieces = []
            for i, d in enumerate(incs):
                if abs(d) < GUARD:
                    pieces.append(d)
                    continue
                sub, c = _refine(freqs, weights[:, j], ts[i], f[i, j], ts[i + 1], f[i + 1, j], 0, idx)
                pieces.extend(sub)
                refinements += c
        except WindingError as err:
            results.append(err)
            continue
        results.append(WindingSample(T=T, delta=math.fsum(pieces), n_segments=len(pieces),
                                     max_increment=max(abs(p) for p in pieces),
                                     refinements=refinements, t0=t0, path_index=idx))
    return results


def winding(proc: TrigSumProcess, T: float, dt0: float | None = None, t0: float = 0.0) -> WindingSample:
    """Total argument increment of ``f`` over ``[t0, t0 + T]``."""
    if T <= 0:
        raise ValueError("T must be positive")
    dt0 = proc.grid.default_dt0() if dt0 is None else dt0
    if dt0 <= 0:
        raise ValueError("dt0 must be positive")
    out = _wind_block(proc.grid, proc.weights[:, None], [proc.path_index], T, dt0, t0)[0]
    if isinstance(out, WindingError):
        raise out
    return out


def wind_paths(grid: FrequencyGrid, n_paths: int, T: float, seed: int,
               dt0: float | None = None, t0: float = 0.0, threads: int = 1,
               first_path: int = 0) -> list:
    """Windings of paths ``first_path ... first_path + n_paths - 1``.

    Paths are processed in fixed blocks of :data:`CHUNK`; ``threads`` only
    changes how many blocks run at once, never the numbers produced.
    Entries are :class:`WindingSample` or :class:`WindingError`.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be positive")
    if T <= 0:
        raise ValueError("T must be positive")
    dt0 = grid.default_dt0() if dt0 is None else dt0
    indices = list(range(first_path, first_path + n_paths))
    blocks = [indices[i:i + CHUNK] for i in range(0, n_paths, CHUNK)]

    def run(block):
        w = np.stack([_draw(grid.size, seed, k) for k in block], axis=1)
        return _wind_block(grid, grid.amplitudes[:, None] * w, block, T, dt0, t0)

    if threads <= 1:
        parts = [run(b) for b in blocks]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, blocks))
    return [s for part in parts for s in part]


def empirical_covariance(grid: FrequencyGrid, n_paths: int, t_list, seed: int) -> list:
    """Monte Carlo ``E f(t) conj f(0)`` with standard errors.

    Returns ``[(estimate, se), ...]`` with one complex estimate per ``t``;
    ``se`` is the standard error of the real and imaginary parts combined
    in quadrature.
    """
    ts = np.asarray(t_list, dtype=float)
    prods = np.empty((n_paths, ts.size), dtype=complex)
    for start in range(0, n_paths, CHUNK):
        block = range(start, min(n_paths, start + CHUNK))
        w = np.stack([_draw(grid.size, seed, k) for k in block], axis=1) * grid.amplitudes[:, None]
        f0 = np.sum(w, axis=0)
        ft = np.exp(-1j * np.multiply.outer(ts, grid.frequencies)) @ w
        prods[start:start + len(block)] = (ft * np.conj(f0)).T
    est = prods.mean(axis=0)
    se = np.sqrt((prods.real.var(axis=0, ddof=1) + prods.imag.var(axis=0, ddof=1)) / n_paths)
    return [(complex(e), float(s)) for e, s in zip(est, se)]
