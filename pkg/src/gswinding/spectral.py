"""Spectral measures and the covariance functions they generate.

A complex stationary Gaussian process with unit variance is described by a
probability measure ``rho`` on the real line; its covariance is

    r(t) = int exp(-i lam t) d rho(lam),

and derivatives are the spectral moments ``r^(k)(t) = int (-i lam)^k
exp(-i lam t) d rho``.  Measures here are a finite list of atoms plus an
optional weighted density.  Every built-in ships closed-form ``r, r', r''``
and can also be evaluated by quadrature of its density, which the tests use
as an independent route.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, special

from .quadrature import gauss_kronrod, tanh_sinh

MASS_TOL = 1e-9


class DegenerateMeasureError(ValueError):
    """The spectral measure is a single atom (deterministic winding)."""


class InvariantError(ValueError):
    """A standing hypothesis on the measure or covariance is violated."""


@dataclass(frozen=True)
class SpectralDensity:
    """Absolutely continuous part of a spectral measure.

    ``pdf`` must be vectorised.  ``cutoff`` bounds the region where the
    density is numerically relevant when the support is unbounded; ``tail``
    says what happens beyond it (``"none"`` for compact support,
    ``"exponential"`` when it can be dropped, ``"algebraic"`` when it has to
    be integrated).  ``singular_points`` lists integrable singularities;
    ``pdf_offset(s, d)`` evaluates ``p(s + d)`` for such an ``s`` without
    rounding ``s + d``.
    """

    pdf: Callable[[np.ndarray], np.ndarray]
    support: tuple[float, float]
    cutoff: float = math.inf
    tail: str = "none"
    singular_points: tuple[float, ...] = ()
    pdf_offset: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None
    symmetric: bool = True
    name: str = "density"

    @property
    def interval(self) -> tuple[float, float]:
        lo, hi = self.support
        return max(lo, -self.cutoff), min(hi, self.cutoff)


@dataclass(frozen=True)
class SpectralMeasure:
    """Atoms ``(frequency, mass)`` plus ``density_weight`` times a density."""

    atoms: tuple[tuple[float, float], ...] = ()
    density: SpectralDensity | None = None
    density_weight: float = 1.0
    name: str = "custom"
    params: tuple = ()

    def __post_init__(self):
        atoms = tuple((float(f), float(m)) for f, m in self.atoms)
        object.__setattr__(self, "atoms", atoms)
        if any(m < 0 for _, m in atoms):
            raise InvariantError("atom masses must be nonnegative")
        if self.density is None:
            object.__setattr__(self, "density_weight", 0.0)
        elif self.density_weight < 0:
            raise InvariantError("density weight must be nonnegative")
        if not atoms and self.density is None:
            raise InvariantError("empty spectral measure")
        mass = total_mass(self)
        if abs(mass - 1.0) > MASS_TOL:
            raise InvariantError(f"total mass {mass!r} differs from 1")

    @property
    def degenerate(self) -> bool:
        live = [a for a in self.atoms if a[1] > 0]
        return len(live) == 1 and self.density_weight == 0.0

    @property
    def has_density(self) -> bool:
        return self.density is not None and self.density_weight > 0

    @property
    def symmetric(self) -> bool:
        atoms_sym = sorted((f, m) for f, m in self.atoms if m > 0) == sorted(
            (-f, m) for f, m in self.atoms if m > 0)
        dens_sym = not self.has_density or self.density.symmetric
        return atoms_sym and dens_sym


@dataclass(frozen=True)
class CovarianceEval:
    """Evaluators for ``r``, ``r'`` and ``r''``; all accept scalars or arrays.

    ``gap`` and ``dgap``, when present, evaluate ``1 - |r|^2`` and its
    derivative without the cancellation of the direct difference near
    ``|r| = 1``.
    """

    r: Callable
    dr: Callable
    ddr: Callable
    provenance: str
    measure: SpectralMeasure = field(repr=False)
    gap: Callable | None = field(default=None, repr=False)
    dgap: Callable | None = field(default=None, repr=False)

    def derivative(self, order: int) -> Callable:
        return {0: self.r, 1: self.dr, 2: self.ddr}[order]


# ---------------------------------------------------------------------------
# quadrature of spectral integrals


def _panel_edges(lo: float, hi: float, width: float) -> np.ndarray:
    n = max(1, int(math.ceil((hi - lo) / width)))
    return np.linspace(lo, hi, n + 1)


def _density_at(density: SpectralDensity, base, d):
    """``p(base + d)`` honouring ``pdf_offset`` at singular bases."""
    base = np.asarray(base, dtype=float)
    d = np.asarray(d, dtype=float)
    out = np.empty(d.shape)
    sing = np.zeros(d.shape, dtype=bool)
    if density.pdf_offset is not None:
        for s in density.singular_points:
            mask = base == s
            if np.any(mask):
                out[mask] = density.pdf_offset(s, d[mask])
                sing |= mask
    if np.any(~sing):
        out[~sing] = density.pdf(base[~sing] + d[~sing])
    return out


def spectral_moment(density: SpectralDensity, t: float, order: int,
                    tol: float = 1e-12, weight: Callable | None = None) -> complex:
    """``int (-i lam)^order exp(-i lam t) p(lam) d lam`` for one density.

    The effective interval is cut into panels no wider than ``pi / (4|t|)``
    so the phase turns slowly inside each panel.  Panels touching a singular
    point of the density go to tanh-sinh in offset mode; all others to
    adaptive Gauss-Kronrod.  Algebraic tails beyond the cutoff are handled
    with QUADPACK's Fourier-integral routine.

    ``weight``, when given, replaces ``(-i lam)^order exp(-i lam t)`` by an
    arbitrary real function of ``lam`` (used for moment conditions).
    """
    lo, hi = density.interval
    t = float(t)
    if weight is None:
        def kern(lam):
            return (-1j * lam) ** order * np.exp(-1j * lam * t)
    else:
        kern = weight
    width = (hi - lo) / 16.0
    if t != 0.0:
        width = min(width, math.pi / (4.0 * abs(t)))
    sing = sorted(s for s in density.singular_points if lo <= s <= hi)
    hard = sorted(set([lo, hi] + sing))

    pieces: list[complex] = []
    for left, right in zip(hard[:-1], hard[1:]):
        edges = _panel_edges(left, right, width)
        left_sing = left in sing
        right_sing = right in sing
        if len(edges) == 2 and (left_sing or right_sing):
            ts_ranges, gk_edges = [(left, right)], None
        else:
            ts_ranges = []
            start, stop = 0, len(edges) - 1
            if left_sing:
                ts_ranges.append((edges[0], edges[1]))
                start = 1
            if right_sing:
                ts_ranges.append((edges[-2], edges[-1]))
                stop = len(edges) - 2
            gk_edges = edges[start:stop + 1] if stop > start else None
        for a, b in ts_ranges:
            def f_off(base, d):
                lam = base + d
                return kern(lam) * _density_at(density, base, d)
            val, _ = tanh_sinh(f_off, a, b, tol=1e-13, max_level=12,
                               t_max=6.0, offset=True)
            pieces.append(complex(val))
        if gk_edges is not None:
            val, _ = gauss_kronrod(lambda lam: kern(lam) * density.pdf(lam),
                                   gk_edges, rtol=tol, atol=tol)
            pieces.append(complex(val))

    if density.tail == "algebraic":
        pieces.append(_algebraic_tails(density, t, order, lo, hi, weight))
    return complex(math.fsum(p.real for p in pieces), math.fsum(p.imag for p in pieces))


def _algebraic_tails(density, t, order, lo, hi, weight) -> complex:
    """Contributions of ``|lam| > cutoff`` for a density with power-law tails."""
    total = 0j
    for sign, edge, open_side in ((1.0, hi, density.support[1]),
                                  (-1.0, -lo, -density.support[0])):
        if not math.isinf(open_side):
            continue

        def g(mu, sign=sign):
            lam = sign * mu
            if weight is not None:
                return float(weight(np.array([lam]))[0] * density.pdf(np.array([lam]))[0])
            return float(mu ** order * density.pdf(np.array([lam]))[0])

        if weight is not None:
            total += integrate.quad(g, edge, math.inf, limit=500)[0]
            continue
        # (-i lam)^k e^{-i lam t} with lam = sign*mu
        pref = (-1j * sign) ** order
        if t == 0.0:
            total += pref * integrate.quad(g, edge, math.inf, limit=500)[0]
        else:
            c = integrate.quad(g, edge, math.inf, weight="cos", wvar=abs(t), limlst=200)[0]
            s = integrate.quad(g, edge, math.inf, weight="sin", wvar=abs(t), limlst=200)[0]
            # e^{-i sign mu t} = cos(mu |t|) - i sgn(sign t) sin(mu |t|)
            total += pref * (c - 1j * math.copysign(1.0, sign * t) * s)
    return total


def quadrature_covariance(measure: SpectralMeasure) -> CovarianceEval:
    """Evaluate ``r, r', r''`` of ``measure`` by spectral quadrature."""

    def make(order):
        def fn(t):
            ts = np.asarray(t, dtype=float)
            out = np.empty(ts.shape, dtype=complex)
            for idx, tv in np.ndenumerate(ts):
                out[idx] = _moment_total(measure, float(tv), order)
            return out if out.ndim else complex(out)
        return fn

    return CovarianceEval(make(0), make(1), make(2), "quadrature", measure)


def _moment_total(measure: SpectralMeasure, t: float, order: int) -> complex:
    val = 0j
    for f, m in measure.atoms:
        val += m * (-1j * f) ** order * np.exp(-1j * f * t)
    if measure.has_density:
        val += measure.density_weight * spectral_moment(measure.density, t, order)
    return complex(val)


# ---------------------------------------------------------------------------
# operations


def total_mass(measure: SpectralMeasure) -> float:
    """Sum of atom masses plus the weighted integral of the density."""
    mass = math.fsum(m for _, m in measure.atoms)
    if measure.density is not None and measure.density_weight > 0:
        integral = spectral_moment(measure.density, 0.0, 0)
        if not math.isfinite(integral.real):
            raise InvariantError("density integral diverges")
        mass += measure.density_weight * integral.real
    return mass


def covariance(ev: CovarianceEval, t):
    """``r(t)``."""
    return ev.r(t)


def covariance_derivative(ev: CovarianceEval, t, order: int):
    """``r'(t)`` (order 1) or ``r''(t)`` (order 2)."""
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    return ev.derivative(order)(t)


def nondegeneracy_margin(ev: CovarianceEval) -> float:
    """``r'(0)^2 - r''(0)``; positive exactly when the process is non-degenerate."""
    c = complex(ev.dr(0.0)) ** 2 - complex(ev.ddr(0.0))
    if abs(c.imag) > 1e-9:
        raise InvariantError(f"r'(0)^2 - r''(0) has imaginary part {c.imag:g}")
    if not ev.measure.degenerate and c.real <= 1e-12:
        raise InvariantError(
            f"non-degenerate measure {ev.measure.name} has margin {c.real:g}")
    return c.real


def moment_condition(measure: SpectralMeasure, alpha: float = 1.0) -> float:
    """``int lam^2 log^(1+alpha)(1+|lam|) d rho``; ``inf`` (with a warning) if divergent.

    Algebraic tails are integrated decade by decade out to ``1e12``; the
    integral is declared divergent when the decade contributions stop
    shrinking.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")

    def w(lam):
        lam = np.asarray(lam, dtype=float)
        return lam ** 2 * np.log1p(np.abs(lam)) ** (1.0 + alpha)

    val = math.fsum(float(w(np.array([f]))[0]) * m for f, m in measure.atoms)
    if not measure.has_density:
        return val
    dens = measure.density
    core = spectral_moment(dens, 0.0, 0, weight=w).real
    if dens.tail != "algebraic":
        return val + measure.density_weight * core
    lo, hi = dens.interval
    tail = 0.0
    prev = None
    growing = 0
    for sign, edge, far in ((1.0, hi, dens.support[1]), (-1.0, -lo, -dens.support[0])):
        if not math.isinf(far):
            continue
        a = edge
        for _ in range(12):
            b = a * 10.0
            piece = integrate.quad(
                lambda mu: float(w(np.array([mu]))[0] * dens.pdf(np.array([sign * mu]))[0]),
                a, b, limit=400)[0]
            tail += piece
            if prev is not None and piece >= 0.5 * prev:
                growing += 1
            prev = piece
            a = b
        prev = None
    if growing >= 4:
        warnings.warn(f"moment condition diverges for {measure.name}", RuntimeWarning)
        return math.inf
    return val + measure.density_weight * (core + tail)


# ---------------------------------------------------------------------------
# built-in densities and closed forms


def _sinc_density() -> SpectralDensity:
    return SpectralDensity(
        pdf=lambda lam: np.where(np.abs(lam) <= math.pi, 1.0 / (2 * math.pi), 0.0),
        support=(-math.pi, math.pi), name="sinc")


def _gaussian_density() -> SpectralDensity:
    c = 1.0 / math.sqrt(2 * math.pi)
    return SpectralDensity(pdf=lambda lam: c * np.exp(-0.5 * np.asarray(lam) ** 2),
                           support=(-math.inf, math.inf), cutoff=9.5,
                           tail="exponential", name="gaussian")


def _arcsine_density() -> SpectralDensity:
    def pdf(lam):
        lam = np.asarray(lam, dtype=float)
        inside = np.abs(lam) < 1
        out = np.zeros(lam.shape)
        out[inside] = 1.0 / (math.pi * np.sqrt(1.0 - lam[inside] ** 2))
        return out

    def pdf_offset(s, d):
        # lam = s + d with s = +-1 and d pointing inward
        dist = np.abs(d)
        return 1.0 / (math.pi * np.sqrt(dist * (2.0 - dist)))

    return SpectralDensity(pdf=pdf, support=(-1.0, 1.0), singular_points=(-1.0, 1.0),
                           pdf_offset=pdf_offset, name="bessel_j0")


def _ou_smooth_density(a: float) -> SpectralDensity:
    def pdf(lam):
        s = np.sqrt(1.0 + np.asarray(lam, dtype=float) ** 2)
        z = a * s
        return a * special.kve(1, z) * np.exp(a - z) / (math.pi * s)

    return SpectralDensity(pdf=pdf, support=(-math.inf, math.inf), cutoff=(48.0 + a) / a,
                           tail="exponential", name="ou_smooth")


def _ou_spectral_density(M: float) -> SpectralDensity:
    c = M * (M + 1) / math.pi

    def pdf(lam):
        l2 = np.asarray(lam, dtype=float) ** 2
        return c / ((l2 + 1.0) * (l2 + M * M))

    return SpectralDensity(pdf=pdf, support=(-math.inf, math.inf), cutoff=40.0 * M,
                           tail="algebraic", name="ou_spectral")


def _power_cosine_density(b: float) -> SpectralDensity:
    # (1+t^2)^(-nu) has density (|mu|/2)^(nu-1/2) K_(1/2-nu)(|mu|) / (sqrt(pi) Gamma(nu));
    # multiplying by cos t averages the shifts by +1 and -1.
    nu = 0.5 * b
    norm = 1.0 / (math.sqrt(math.pi) * math.gamma(nu))

    def q(mu):
        m = np.abs(np.asarray(mu, dtype=float))
        out = np.full(m.shape, np.inf)
        pos = m > 0
        mp = m[pos]
        out[pos] = norm * (0.5 * mp) ** (nu - 0.5) * special.kve(0.5 - nu, mp) * np.exp(-mp)
        return out

    def pdf(lam):
        lam = np.asarray(lam, dtype=float)
        return 0.5 * (q(lam - 1.0) + q(lam + 1.0))

    def pdf_offset(s, d):
        return 0.5 * (q(d) + q(s + d + s))

    return SpectralDensity(pdf=pdf, support=(-math.inf, math.inf), cutoff=48.0,
                           tail="exponential", singular_points=(-1.0, 1.0),
                           pdf_offset=pdf_offset, name="power_cosine")


def _sinc_closed():
    def r(t):
        return np.asarray(np.sinc(np.asarray(t, dtype=float)), dtype=complex)[()]

    def dr(t):
        u = math.pi * np.asarray(t, dtype=float)
        small = np.abs(u) < 0.5
        us = np.where(small, 1.0, u)
        direct = (us * np.cos(us) - np.sin(us)) / us ** 2
        u2 = u * u
        series = u * (-1 / 3 + u2 * (1 / 30 + u2 * (-1 / 840 + u2 / 45360)))
        return (math.pi * np.where(small, series, direct)).astype(complex)[()]

    def ddr(t):
        u = math.pi * np.asarray(t, dtype=float)
        small = np.abs(u) < 0.5
        us = np.where(small, 1.0, u)
        direct = (-us ** 2 * np.sin(us) - 2 * us * np.cos(us) + 2 * np.sin(us)) / us ** 3
        u2 = u * u
        series = -1 / 3 + u2 * (1 / 10 + u2 * (-1 / 168 + u2 / 6480))
        return (math.pi ** 2 * np.where(small, series, direct)).astype(complex)[()]

    return r, dr, ddr


def _gaussian_closed():
    def r(t):
        t = np.asarray(t, dtype=float)
        return np.exp(-0.5 * t * t).astype(complex)[()]

    def dr(t):
        t = np.asarray(t, dtype=float)
        return (-t * np.exp(-0.5 * t * t)).astype(complex)[()]

    def ddr(t):
        t = np.asarray(t, dtype=float)
        return ((t * t - 1.0) * np.exp(-0.5 * t * t)).astype(complex)[()]

    return r, dr, ddr


def _bessel_closed():
    # J0' = -J1 and J0'' = J1/t - J0 = (J2 - J0)/2, which has no 1/t at the origin
    def r(t):
        return special.j0(np.asarray(t, dtype=float)).astype(complex)[()]

    def dr(t):
        return (-special.j1(np.asarray(t, dtype=float))).astype(complex)[()]

    def ddr(t):
        t = np.asarray(t, dtype=float)
        return (0.5 * (special.jv(2, t) - special.j0(t))).astype(complex)[()]

    return r, dr, ddr


def _ou_smooth_closed(a: float):
    # r = exp(a - s), s = sqrt(a^2 + t^2);  r' = -(t/s) r;  r'' = (t^2/s^2 - a^2/s^3) r
    def parts(t):
        t = np.asarray(t, dtype=float)
        s = np.sqrt(a * a + t * t)
        return t, s, np.exp(a - s)

    def r(t):
        return parts(t)[2].astype(complex)[()]

    def dr(t):
        t, s, e = parts(t)
        return (-(t / s) * e).astype(complex)[()]

    def ddr(t):
        t, s, e = parts(t)
        return ((t * t / (s * s) - a * a / s ** 3) * e).astype(complex)[()]

    return r, dr, ddr


def _ou_spectral_closed(M: float):
    # r = (M e^{-|t|} - e^{-M|t|})/(M-1);  r' = -M sgn(t)(e^{-|t|} - e^{-M|t|})/(M-1);
    # r'' = (M e^{-|t|} - M^2 e^{-M|t|})/(M-1)
    def r(t):
        at = np.abs(np.asarray(t, dtype=float))
        return ((M * np.exp(-at) - np.exp(-M * at)) / (M - 1)).astype(complex)[()]

    def dr(t):
        t = np.asarray(t, dtype=float)
        at = np.abs(t)
        return (-M * np.sign(t) * (np.exp(-at) - np.exp(-M * at)) / (M - 1)).astype(complex)[()]

    def ddr(t):
        at = np.abs(np.asarray(t, dtype=float))
        return ((M * np.exp(-at) - M * M * np.exp(-M * at)) / (M - 1)).astype(complex)[()]

    return r, dr, ddr


def _power_cosine_closed(b: float):
    # r = cos(t) u(t), u = (1+t^2)^(-b/2)
    # u' = -b t (1+t^2)^(-b/2-1);  u'' = -b (1+t^2)^(-b/2-1) + b(b+2) t^2 (1+t^2)^(-b/2-2)
    # r' = -sin u + cos u';  r'' = -cos u - 2 sin u' + cos u''
    def parts(t):
        t = np.asarray(t, dtype=float)
        w = 1.0 + t * t
        u = w ** (-0.5 * b)
        du = -b * t * u / w
        ddu = -b * u / w + b * (b + 2) * t * t * u / (w * w)
        return np.cos(t), np.sin(t), u, du, ddu

    def r(t):
        c, s, u, du, ddu = parts(t)
        return (c * u).astype(complex)[()]

    def dr(t):
        c, s, u, du, ddu = parts(t)
        return (-s * u + c * du).astype(complex)[()]

    def ddr(t):
        c, s, u, du, ddu = parts(t)
        return (-c * u - 2 * s * du + c * ddu).astype(complex)[()]

    return r, dr, ddr


def _atomic_closed(atoms: Sequence[tuple[float, float]]):
    freqs = np.array([f for f, _ in atoms], dtype=float)
    masses = np.array([m for _, m in atoms], dtype=float)

    def make(order):
        coef = masses * (-1j * freqs) ** order

        def fn(t):
            t = np.asarray(t, dtype=float)
            return (np.exp(-1j * np.multiply.outer(t, freqs)) @ coef)[()]
        return fn

    return make(0), make(1), make(2)


def _atomic_gap(atoms: Sequence[tuple[float, float]]):
    """``1 - |r|^2 = 4 sum_{j<k} p_j p_k sin^2((f_j - f_k) t / 2)`` plus the
    (tiny) defect ``1 - (sum p)^2``, and its derivative."""
    freqs = np.array([f for f, _ in atoms], dtype=float)
    masses = np.array([m for _, m in atoms], dtype=float)
    j, k = np.triu_indices(len(atoms), 1)
    diff = freqs[j] - freqs[k]
    w = masses[j] * masses[k]
    defect = 1.0 - math.fsum(masses.tolist()) ** 2

    def gap(t):
        t = np.asarray(t, dtype=float)
        return (defect + 4.0 * (np.sin(0.5 * np.multiply.outer(t, diff)) ** 2 @ w))[()]

    def dgap(t):
        t = np.asarray(t, dtype=float)
        return (2.0 * (np.sin(np.multiply.outer(t, diff)) @ (w * diff)))[()]

    return gap, dgap


_DENSITIES = {
    "sinc": (lambda p: _sinc_density(), lambda p: _sinc_closed(), ()),
    "gaussian": (lambda p: _gaussian_density(), lambda p: _gaussian_closed(), ()),
    "bessel_j0": (lambda p: _arcsine_density(), lambda p: _bessel_closed(), ()),
    "ou_smooth": (lambda p: _ou_smooth_density(p[0]), lambda p: _ou_smooth_closed(p[0]), (0.5,)),
    "ou_spectral": (lambda p: _ou_spectral_density(p[0]), lambda p: _ou_spectral_closed(p[0]), (10.0,)),
    "power_cosine": (lambda p: _power_cosine_density(p[0]), lambda p: _power_cosine_closed(p[0]), (0.25,)),
}

BUILTIN_NAMES = tuple(_DENSITIES) + ("atomic",)
DEFAULT_PARAMS = {name: spec[2] for name, spec in _DENSITIES.items()}


def _check_params(name: str, params: tuple) -> tuple:
    if name not in _DENSITIES:
        raise ValueError(f"unknown built-in {name!r}; choose from {', '.join(BUILTIN_NAMES)}")
    params = tuple(float(p) for p in params) if params else DEFAULT_PARAMS[name]
    if name == "power_cosine" and not 0 < params[0] < 0.5:
        raise ValueError("power_cosine requires 0 < b < 1/2")
    if name == "ou_smooth" and params[0] <= 0:
        raise ValueError("ou_smooth requires a > 0")
    if name == "ou_spectral" and params[0] <= 1:
        raise ValueError("ou_spectral requires M > 1")
    return params


def builtin(name: str, params: Sequence = ()) -> tuple[SpectralMeasure, CovarianceEval]:
    """Construct a named measure together with its closed-form covariance.

    ``atomic`` takes ``params`` as a sequence of ``(frequency, mass)`` pairs;
    the masses are used as given and must sum to one.  The other names take
    at most one real parameter (``a``, ``M`` or ``b``) and fall back to
    :data:`DEFAULT_PARAMS`.

    ``power_cosine`` uses ``cos t / (1 + t^2)^(b/2)``: the same ``|t|^-b``
    decay as ``cos t / (1 + |t|)^b`` but smooth at the origin, which the
    variance formula requires.
    """
    if name == "atomic":
        atoms = tuple((float(f), float(m)) for f, m in params)
        if not atoms:
            raise ValueError("atomic measure needs at least one (frequency, mass) pair")
        measure = SpectralMeasure(atoms=atoms, name="atomic", params=atoms)
        r, dr, ddr = _atomic_closed(atoms)
        gap, dgap = _atomic_gap(atoms)
        return measure, CovarianceEval(r, dr, ddr, "closed-form", measure, gap, dgap)
    params = _check_params(name, tuple(params))
    dens_fn, closed_fn, _ = _DENSITIES[name]
    measure = SpectralMeasure(density=dens_fn(params), name=name, params=params)
    r, dr, ddr = closed_fn(params)
    return measure, CovarianceEval(r, dr, ddr, "closed-form", measure)


def measure_from_json(doc: dict) -> tuple[SpectralMeasure, CovarianceEval]:
    """Build a measure from ``{"atoms": [...], "density": {...}}``.

    ``atoms`` is a list of ``{"freq": float, "mass": float}``; ``density`` is
    ``{"builtin": name, "params": [...], "weight": w}`` where ``weight``
    defaults to one minus the atom mass.  Either key may be omitted.  The
    covariance is the matching mixture of closed forms.
    """
    atoms = tuple((float(a["freq"]), float(a["mass"])) for a in doc.get("atoms", []))
    dens_doc = doc.get("density")
    if dens_doc is None:
        if not atoms:
            raise ValueError("measure document has neither atoms nor density")
        return builtin("atomic", atoms)
    name = dens_doc["builtin"]
    params = _check_params(name, tuple(dens_doc.get("params", ())))
    weight = float(dens_doc.get("weight", 1.0 - math.fsum(m for _, m in atoms)))
    dens_fn, closed_fn, _ = _DENSITIES[name]
    measure = SpectralMeasure(atoms=atoms, density=dens_fn(params), density_weight=weight,
                              name=doc.get("name", name if not atoms else f"{name}+atoms"),
                              params=params)
    dr_closed = closed_fn(params)
    at_closed = _atomic_closed(atoms) if atoms else None

    def mix(order):
        def fn(t):
            val = weight * np.asarray(dr_closed[order](t))
            if at_closed is not None:
                val = val + np.asarray(at_closed[order](t))
            return val[()]
        return fn

    return measure, CovarianceEval(mix(0), mix(1), mix(2), "closed-form", measure)


def measure_to_json(measure: SpectralMeasure) -> dict:
    doc: dict = {"atoms": [{"freq": f, "mass": m} for f, m in measure.atoms]}
    if measure.has_density:
        doc["density"] = {"builtin": measure.density.name, "params": list(measure.params),
                          "weight": measure.density_weight}
    return doc
