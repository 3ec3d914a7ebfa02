"""Closed-form mean and variance of the winding and the kernels behind them.

With ``g = |r|^2``, ``a = r' conj(r)`` and ``R = r'/r`` the two variance
kernels are, on ``0 < g < 1``,

    K      = g/(1-g) Im^2(R - R(0)) - 1/2 log(1/(1-g)) Re R'
    Ktilde = g/(1-g) Im^2(R - R(0)) + 1/4 (log 1/(1-g))' (log g)'

and both are assigned ``|r'|^2 / 2`` where ``g`` is 0 or 1.  Everything is
rewritten in terms of ``g`` and ``a`` so that the limit ``r -> 0`` is
evaluated without dividing by small numbers:

    g/(1-g) Im^2(R - R(0))          = (Im a - g Im r'(0))^2 / (g (1-g))
    1/4 (log 1/(1-g))' (log g)'     = (Re a)^2 / (g (1-g))
    log(1/(1-g)) Re R'              = L/g (Re(r'' conj r) - Re(a^2)/g)

The variance is ``V(T) = T int_{-T}^{T} (1 - |x|/T) K(x) dx``, or
equivalently ``T [int (1 - |x|/T) Ktilde + boundary_term(|r(T)|^2, T)]``.
The two routes share no quadrature code path: the first integrates the log
singularities of ``K`` with tanh-sinh, the second only ever sees the bounded
``Ktilde``, and the boundary term comes from a dilogarithm.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .quadrature import dilog, gauss_kronrod, tanh_sinh
from .spectral import CovarianceEval, DegenerateMeasureError, InvariantError, nondegeneracy_margin

EPS_SW = 1e-12   # band on |r|^2 around 0 and 1 where the pointwise branch values apply
EPS_C = 1e-10    # |r|^2 > 1 - EPS_C counts as |r| = 1


def _arr(v):
    return np.asarray(v, dtype=complex)


def require_nondegenerate(ev: CovarianceEval) -> float:
    """Return the non-degeneracy margin, raising for a single-atom measure."""
    if ev.measure.degenerate:
        raise DegenerateMeasureError(
            f"{ev.measure.name}: single-atom measure, winding is deterministic")
    return nondegeneracy_margin(ev)


def mean_winding(ev: CovarianceEval, T: float) -> float:
    """Expected winding over ``[0, T]``: ``T Im r'(0)``."""
    if T <= 0:
        raise ValueError("T must be positive")
    return T * complex(ev.dr(0.0)).imag


class _Terms:
    __slots__ = ("g", "open", "first", "a", "re_a", "r", "dr", "ddr", "gs", "om", "L")

    def __init__(self, ev: CovarianceEval, x, one_minus_g=None, band=EPS_SW):
        x = np.asarray(x, dtype=float)
        self.r, self.dr, self.ddr = _arr(ev.r(x)), _arr(ev.dr(x)), _arr(ev.ddr(x))
        im0 = complex(ev.dr(0.0)).imag
        self.a = self.dr * np.conj(self.r)
        g_direct = self.r.real ** 2 + self.r.imag ** 2
        self.re_a = self.a.real
        if ev.gap is not None:
            om = np.asarray(ev.gap(x), dtype=float)
            self.re_a = -0.5 * np.asarray(ev.dgap(x), dtype=float)
        elif one_minus_g is not None:
            om = np.asarray(one_minus_g, dtype=float)
        else:
            om = 1.0 - g_direct
        # take whichever of g, 1 - g is small from its accurate source
        near_one = om < 0.5
        g = np.where(near_one, 1.0 - om, g_direct)
        self.g = g
        self.open = (g > EPS_SW) & (om > band)
        self.gs = np.where(self.open, g, 1.0)
        self.om = np.where(self.open, om, 1.0)
        self.L = np.where(near_one, -np.log(self.om), -np.log1p(-np.where(self.open & ~near_one, g_direct, 0.0)))
        self.first = (self.a.imag - g * im0) ** 2 / (self.gs * self.om)


def kernel_K(ev: CovarianceEval, x):
    """The variance kernel ``K`` of the winding (real, even in ``x``)."""
    return _kernel_K(ev, x, None)


def _kernel_K(ev, x, one_minus_g):
    # K keeps its log singularity right up to |r| = 1, so no band there
    p = _Terms(ev, x, one_minus_g, band=0.0)
    L = p.L
    re_rr = (p.ddr * np.conj(p.r)).real - (p.a * p.a).real / p.gs
    second = -0.5 * (L / p.gs) * re_rr
    out = np.where(p.open, p.first + second, 0.5 * np.abs(p.dr) ** 2)
    return out[()] if out.ndim == 0 else out


def kernel_Ktilde(ev: CovarianceEval, x):
    """Integrated-by-parts kernel; both terms are nonnegative."""
    p = _Terms(ev, x)
    second = p.re_a ** 2 / (p.gs * p.om)
    out = np.where(p.open, p.first + second, 0.5 * np.abs(p.dr) ** 2)
    return out[()] if out.ndim == 0 else out


def kernel_KtildeStar(ev: CovarianceEval, x):
    """Continuous version of ``Ktilde``.

    Equals ``|r'|^2`` where ``r = 0`` and the limit ``Re(r'(0)^2 - r''(0))``
    where ``|r| = 1`` (taken as ``|r|^2 > 1 - EPS_C``).  That limit is the
    spectral variance: near such a point ``1 - |r|^2 ~ C d^2`` and
    ``Re(r' conj r) ~ -C d``, so the second term tends to ``C`` while the
    first vanishes.
    """
    p = _Terms(ev, x)
    peak = (complex(ev.dr(0.0)) ** 2 - complex(ev.ddr(0.0))).real
    near_one = p.g > 1.0 - EPS_C
    usable = p.open & ~near_one
    second = p.re_a ** 2 / (p.gs * p.om)
    out = np.where(usable, p.first + second, np.abs(p.dr) ** 2)
    out = np.where(near_one, peak, out)
    return out[()] if out.ndim == 0 else out


def _golden_max(fun, a: float, b: float, tol: float = 1e-12) -> float:
    inv = (math.sqrt(5.0) - 1.0) / 2.0
    c, d = b - inv * (b - a), a + inv * (b - a)
    fc, fd = fun(c), fun(d)
    while b - a > tol * max(1.0, abs(a)):
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - inv * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv * (b - a)
            fd = fun(d)
    return 0.5 * (a + b)


def _abs2(ev, x):
    v = _arr(ev.r(x))
    return v.real ** 2 + v.imag ** 2


def _bandwidth(ev: CovarianceEval) -> float:
    """RMS spectral frequency, ``sqrt(-r''(0))``; sets the natural time step."""
    return math.sqrt(max(-complex(ev.ddr(0.0)).real, 1e-12))


def singular_set(ev: CovarianceEval, x_max: float, h_scan: float | None = None) -> list[float]:
    """All ``x`` in ``[0, x_max]`` with ``|r(x)| = 1`` (always contains 0).

    A measure with a density cannot live on a lattice, so only ``{0}`` is
    possible there.  Otherwise ``|r|^2`` is scanned on a grid, candidate local
    maxima are refined by golden section and polished by Newton steps on
    ``d/dx |r|^2 = 2 Re(r' conj r) = 0``.
    """
    if x_max <= 0:
        raise ValueError("x_max must be positive")
    if ev.measure.has_density:
        return [0.0]
    if ev.measure.degenerate:
        raise InvariantError("|r| = 1 everywhere: measure is degenerate")
    margin = nondegeneracy_margin(ev)
    bw = _bandwidth(ev)
    h = h_scan if h_scan is not None else 0.05 / bw
    n = int(math.ceil(x_max / h))
    grid = np.linspace(0.0, x_max, n + 1)
    g = _abs2(ev, grid)
    near = g > 1.0 - EPS_C
    run = np.convolve(near.astype(int), np.ones(3, dtype=int), mode="valid")
    if np.any(run == 3) and h < 1e-3:
        raise InvariantError("|r| = 1 on an interval: measure is likely degenerate")
    if np.any(run == 3):
        # could be a very flat peak; a finer scan settles it
        return singular_set(ev, x_max, h_scan=h / 100.0)
    thresh = 1.0 - 4.0 * margin * h * h
    found = [0.0]
    for i in range(1, n + 1):
        gi = g[i]
        left = g[i - 1]
        right = g[i + 1] if i < n else -1.0
        if gi < thresh or gi < left or gi < right:
            continue
        lo, hi = grid[i - 1], min(grid[i] + h, x_max)
        x = _golden_max(lambda v: float(_abs2(ev, v)), lo, hi)
        for _ in range(4):
            rr, d1, d2 = complex(ev.r(x)), complex(ev.dr(x)), complex(ev.ddr(x))
            num = (d1 * rr.conjugate()).real
            den = abs(d1) ** 2 + (d2 * rr.conjugate()).real
            if den == 0:
                break
            step = num / den
            x -= step
            if abs(step) < 1e-15 * max(1.0, abs(x)):
                break
        if not 0.0 < x <= x_max * (1 + 1e-12):
            continue
        if 1.0 - float(_abs2(ev, x)) <= EPS_C and all(abs(x - s) > h for s in found):
            found.append(min(x, x_max))
    return sorted(found)


def boundary_term(rT2: float, T: float) -> float:
    """``1/(2T) int_{rT2}^1 log(1/(1-y)) dy/y = (pi^2/6 - Li2(rT2)) / (2T)``."""
    if T <= 0:
        raise ValueError("T must be positive")
    if not -1e-9 <= rT2 <= 1.0 + 1e-9:
        raise ValueError(f"|r(T)|^2 = {rT2} outside [0, 1]")
    y = min(max(rT2, 0.0), 1.0)
    return (math.pi ** 2 / 6.0 - dilog(y)) / (2.0 * T)


def _windows(points, lo, hi, width):
    """Split ``[lo, hi]`` into singular windows around ``points`` and regular gaps."""
    pts = sorted(p for p in points if lo <= p <= hi)
    windows = []
    for i, s in enumerate(pts):
        gap_l = s - pts[i - 1] if i > 0 else math.inf
        gap_r = pts[i + 1] - s if i + 1 < len(pts) else math.inf
        hw = min(width, 0.5 * gap_l, 0.5 * gap_r)
        if s > lo:
            windows.append((max(lo, s - hw), s))
        if s < hi:
            windows.append((s, min(hi, s + hw)))
    gaps = []
    cursor = lo
    for a, b in sorted(windows):
        if a > cursor:
            gaps.append((cursor, a))
        cursor = max(cursor, b)
    if cursor < hi:
        gaps.append((cursor, hi))
    return windows, gaps


def _gap_breakpoints(gaps, width):
    pieces = []
    for a, b in gaps:
        n = max(1, int(math.ceil((b - a) / width)))
        pieces.append(np.linspace(a, b, n + 1))
    return pieces


def _integrate_with_windows(fun, lo, hi, singular, width, rtol=1e-11):
    """Integrate ``fun(x, dist)`` where ``dist`` is the exact offset from the
    singular point for nodes in a singular window and ``None`` elsewhere."""
    windows, gaps = _windows(singular, lo, hi, width)
    sing = set(singular)
    parts = []
    for a, b in windows:
        s = a if a in sing else b

        def local(base, d, s=s):
            x = base + d
            dist = np.where(base == s, np.abs(d), np.abs(x - s))
            return fun(x, dist)
        parts.append(tanh_sinh(local, a, b, tol=1e-13, max_level=12, t_max=6.0, offset=True)[0])
    for edges in _gap_breakpoints(gaps, width):
        parts.append(gauss_kronrod(lambda x: fun(x, None), edges, rtol=rtol, atol=1e-15)[0])
    re = math.fsum(float(np.real(p)) for p in parts)
    im = math.fsum(float(np.imag(p)) for p in parts)
    return complex(re, im) if im else re


def _panel_width(ev):
    return min(1.0, 0.5 / _bandwidth(ev))


def _near_one_minus_g(ev, x, dist, curvature):
    """``1 - |r|^2`` with the quadratic law ``C d^2`` substituted where the
    direct difference would be dominated by rounding."""
    r = _arr(ev.r(x))
    direct = 1.0 - (r.real ** 2 + r.imag ** 2)
    if dist is None:
        return None
    quad_law = curvature * dist ** 2
    return np.where(quad_law < 1e-8, quad_law, direct)


def variance_via_K(ev: CovarianceEval, T: float, fold: bool = True,
                   singular: list[float] | None = None) -> float:
    """``V(T) = T int_{-T}^{T} (1 - |x|/T) K(x) dx``.

    Panels around each point of the singular set are integrated by
    tanh-sinh with the singular point as an endpoint.  Next to those points
    ``1 - |r|^2`` is taken from its quadratic law ``C d^2`` (exact to leading
    order at every point of the set, since there ``r`` is a unimodular
    multiple of its value at ``d``), which keeps the log singularity of ``K``
    resolved below rounding level.  ``fold=True`` integrates
    ``K(x) + K(-x)`` over ``[0, T]``; ``fold=False`` integrates the full
    symmetric interval (the two must agree).
    """
    if T <= 0:
        raise ValueError("T must be positive")
    curv = require_nondegenerate(ev)
    sing = singular if singular is not None else singular_set(ev, T)
    width = min(_panel_width(ev), T)
    if fold:
        def fun(x, dist):
            kp = _kernel_K(ev, x, _near_one_minus_g(ev, x, dist, curv))
            km = _kernel_K(ev, -x, _near_one_minus_g(ev, -x, dist, curv))
            return (1.0 - x / T) * (kp + km)
        return T * _integrate_with_windows(fun, 0.0, T, sing, width)

    def fun(x, dist):
        return (1.0 - np.abs(x) / T) * _kernel_K(ev, x, _near_one_minus_g(ev, x, dist, curv))
    both = sorted(set(sing) | {-s for s in sing})
    return T * _integrate_with_windows(fun, -T, T, both, width)


def variance_via_Ktilde(ev: CovarianceEval, T: float,
                        singular: list[float] | None = None) -> float:
    """``V(T) = T [int (1 - |x|/T) Ktilde + boundary_term(|r(T)|^2, T)]``."""
    return T * (_ktilde_integral(ev, T, singular) + _boundary(ev, T))


def _boundary(ev, T):
    return boundary_term(float(_abs2(ev, T)), T)


def _ktilde_integral(ev, T, singular=None):
    if T <= 0:
        raise ValueError("T must be positive")
    require_nondegenerate(ev)
    sing = singular if singular is not None else singular_set(ev, T)
    width = min(_panel_width(ev), T)

    def fun(x):
        # Ktilde* differs from Ktilde only on the rounding band around
        # |r| = 1, where it carries the limiting value instead
        return (1.0 - x / T) * (kernel_KtildeStar(ev, x) + kernel_KtildeStar(ev, -x))

    edges = sorted(set([0.0, T] + [s for s in sing if 0 < s < T]))
    pieces = _gap_breakpoints(list(zip(edges[:-1], edges[1:])), width)
    return math.fsum(gauss_kronrod(fun, e, rtol=1e-11, atol=1e-15)[0] for e in pieces)


def asymptotic_slope(ev: CovarianceEval, max_doublings: int = 15) -> float:
    """``lim V(T)/T = int_R Ktilde``, or ``inf`` when the integral diverges.

    Integrates ``[0, 1]`` then dyadic blocks ``[2^k, 2^(k+1)]``.  Stops once
    ``|r|`` and ``|r'|`` fall below 1e-8 across a block and two consecutive
    blocks contribute less than 1e-10.  If the blocks are still nonnegligible
    after ``max_doublings``, their ratio decides: a steady ratio below 0.75
    is a power-law tail, summed as a geometric series; a ratio near 1 means
    a ``1/x`` tail or worse and the integral diverges.
    """
    require_nondegenerate(ev)
    if not ev.measure.has_density:
        # r is almost periodic, so the nonnegative Ktilde keeps returning to
        # the same positive values and its integral grows linearly
        return math.inf
    width = _panel_width(ev)

    def fun(x):
        return kernel_KtildeStar(ev, x) + kernel_KtildeStar(ev, -x)

    def block(a, b):
        pieces = _gap_breakpoints([(a, b)], width)
        return math.fsum(gauss_kronrod(fun, e, rtol=1e-11, atol=1e-16)[0] for e in pieces)

    total = block(0.0, 1.0)
    blocks = []
    quiet = 0
    for k in range(max_doublings):
        a, b = 2.0 ** k, 2.0 ** (k + 1)
        val = block(a, b)
        blocks.append(val)
        total += val
        probe = np.linspace(a, b, 257)
        small = max(np.max(np.abs(_arr(ev.r(probe)))), np.max(np.abs(_arr(ev.dr(probe))))) < 1e-8
        quiet = quiet + 1 if (small and val < 1e-10) else 0
        if quiet >= 2:
            return total
    ratios = [blocks[i] / blocks[i - 1] for i in range(len(blocks) - 3, len(blocks)) if blocks[i - 1] > 0]
    if ratios and max(ratios) < 0.75:
        rho = ratios[-1]
        return total + blocks[-1] * rho / (1.0 - rho)
    return math.inf


def ratio_cov_oracle(r11: float, r22: float, r12: complex, s11: complex, s12: complex,
                     s21: complex, s22: complex, t12: complex, conjugated: bool) -> complex:
    """Covariance of ``F1'/F1`` with ``F2'/F2`` (or with its conjugate).

    Inputs are the second moments of a jointly Gaussian complex vector
    ``(F1, F2, F1', F2')``: ``r_jk = E F_j conj F_k``, ``s_jk = E F'_j conj F_k``
    and ``t12 = E F'_1 conj F'_2``.  ``cov(A, B)`` means ``E[AB] - E[A]E[B]``
    (no conjugation).
    """
    r12 = complex(r12)
    det = r11 * r22 - abs(r12) ** 2
    if r11 <= 0 or r22 <= 0 or det <= 1e-15 * r11 * r22:
        raise ValueError("ratio covariance diverges: need r11 r22 > |r12|^2 and r11, r22 > 0")
    if r12 == 0:
        return 0j if conjugated else complex(s12 * s21 / (r11 * r22))
    r21 = r12.conjugate()
    c = abs(r12) ** 2 / det
    A = s12 / r12 - s11 / r11
    B = s21 / r21 - s22 / r22
    if not conjugated:
        return complex(c * A * B)
    log_term = -math.log1p(-abs(r12) ** 2 / (r11 * r22))
    return complex(c * A * np.conj(B) + log_term * (t12 / r12 - s12 * np.conj(s21) / r12 ** 2))


# ---------------------------------------------------------------------------
# tabulations


@dataclass(frozen=True)
class KernelProfile:
    grid: np.ndarray
    K_values: np.ndarray
    Ktilde_values: np.ndarray
    KtildeStar_values: np.ndarray
    singular_points: list

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x", "K", "Ktilde", "KtildeStar"])
            for row in zip(self.grid, self.K_values, self.Ktilde_values, self.KtildeStar_values):
                w.writerow([repr(float(v)) for v in row])


def kernel_profile(ev: CovarianceEval, x_grid) -> KernelProfile:
    """Tabulate ``K``, ``Ktilde`` and ``Ktilde*`` and locate ``|r| = 1`` points."""
    x = np.asarray(x_grid, dtype=float)
    require_nondegenerate(ev)
    x_max = float(np.max(np.abs(x))) if x.size else 1.0
    sing = singular_set(ev, max(x_max, 1e-9))
    return KernelProfile(x, np.asarray(kernel_K(ev, x)), np.asarray(kernel_Ktilde(ev, x)),
                         np.asarray(kernel_KtildeStar(ev, x)), sing)


@dataclass(frozen=True)
class VarianceCurve:
    T_grid: np.ndarray
    mean: np.ndarray
    V_via_K: np.ndarray
    V_via_Ktilde: np.ndarray
    boundary_terms: np.ndarray

    @property
    def rel_gap(self) -> np.ndarray:
        """Relative disagreement of the two variance routes."""
        return np.abs(self.V_via_K - self.V_via_Ktilde) / np.abs(self.V_via_K)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["T", "mean", "V_K", "V_Ktilde", "boundary"])
            for row in zip(self.T_grid, self.mean, self.V_via_K, self.V_via_Ktilde,
                           self.boundary_terms):
                w.writerow([repr(float(v)) for v in row])


def _cumulative_moments(fun, Ts, sing, width, windowed):
    """Per segment ``[T_{j-1}, T_j]`` integrals of ``F`` and ``x F`` for an
    even kernel folded as ``F(x) = k(x) + k(-x)``, returned cumulatively.

    ``V(T)/T = int_0^T (1 - x/T) F = A(T) - B(T)/T`` so one pass over
    ``[0, T_max]`` serves the whole grid.  Both moments are integrated at once
    as the real and imaginary parts of ``F(x) (1 + i x)``.
    """
    cuts = np.concatenate([[0.0], Ts])
    A, B = [], []
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        inside = [p for p in sing if lo <= p <= hi]
        if windowed:
            val = _integrate_with_windows(lambda x, d: fun(x, d) * (1.0 + 1j * x),
                                          lo, hi, inside, width)
        else:
            edges = sorted(set([lo, hi] + inside))
            pieces = _gap_breakpoints(list(zip(edges[:-1], edges[1:])), width)
            val = _fsum_complex(gauss_kronrod(lambda x: fun(x, None) * (1.0 + 1j * x), e,
                                              rtol=1e-11, atol=1e-15)[0] for e in pieces)
        A.append(complex(val).real)
        B.append(complex(val).imag)
    return np.cumsum(A), np.cumsum(B)


def _fsum_complex(vals):
    vals = [complex(v) for v in vals]
    return complex(math.fsum(v.real for v in vals), math.fsum(v.imag for v in vals))


def variance_curve(ev: CovarianceEval, T_grid) -> VarianceCurve:
    """Mean and variance by both routes on an increasing grid of times.

    Each route accumulates ``int_0^T F`` and ``int_0^T x F`` segment by
    segment, so the cost is that of a single evaluation at ``max(T_grid)``.
    """
    Ts = np.asarray(T_grid, dtype=float)
    if Ts.size == 0 or np.any(Ts <= 0) or np.any(np.diff(Ts) <= 0):
        raise ValueError("T grid must be positive and strictly increasing")
    curv = require_nondegenerate(ev)
    sing = singular_set(ev, float(Ts[-1]))
    width = min(_panel_width(ev), float(Ts[0]))

    def fold_K(x, dist):
        return (_kernel_K(ev, x, _near_one_minus_g(ev, x, dist, curv))
                + _kernel_K(ev, -x, _near_one_minus_g(ev, -x, dist, curv)))

    def fold_Kt(x, _dist):
        return kernel_KtildeStar(ev, x) + kernel_KtildeStar(ev, -x)

    A, B = _cumulative_moments(fold_K, Ts, sing, width, windowed=True)
    vk = Ts * A - B
    At, Bt = _cumulative_moments(fold_Kt, Ts, sing, width, windowed=False)
    bt = np.array([_boundary(ev, T) for T in Ts])
    vt = Ts * At - Bt + Ts * bt
    mu = np.array([mean_winding(ev, T) for T in Ts])
    return VarianceCurve(Ts, mu, vk, vt, bt)
