"""Quadrature primitives used throughout the package.

Two integrators live here:

* :func:`gauss_kronrod` -- globally adaptive 7/15-point Gauss-Kronrod over a
  set of initial panels.  The integrand is called once per refinement sweep
  with all active nodes at once, so it must accept and return numpy arrays.
* :func:`tanh_sinh` -- double-exponential quadrature for panels whose
  endpoints carry integrable (log or algebraic) singularities.

:func:`dilog` is the real dilogarithm on ``[0, 1]``, evaluated by series with
the Euler reflection, used for the boundary term of the variance.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

# QUADPACK qk15 abscissae (non-negative half) and weights.
_XGK = np.array([
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
])
_WGK = np.array([
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
])

# full 15-point node set on [-1, 1], ordered left to right
KRONROD_NODES = np.concatenate([-_XGK[:-1], _XGK[::-1]])
KRONROD_WEIGHTS = np.concatenate([_WGK[:-1], _WGK[::-1]])
_GAUSS_WEIGHTS_FULL = np.zeros(15)
# Gauss nodes are the odd-indexed Kronrod nodes (xgk[1], xgk[3], ...)
_GAUSS_WEIGHTS_FULL[[1, 3, 5, 7, 9, 11, 13]] = np.concatenate([_WG[:-1], _WG[::-1]])


_EPS = np.finfo(float).eps


class QuadratureError(RuntimeError):
    """Raised when an integrator exhausts its budget before converging."""


def _kronrod_panels(f, a, b):
    half = 0.5 * (b - a)
    mid = 0.5 * (a + b)
    x = mid[:, None] + half[:, None] * KRONROD_NODES[None, :]
    fx = np.asarray(f(x.ravel())).reshape(x.shape)
    k = (fx @ KRONROD_WEIGHTS) * half
    g = (fx @ _GAUSS_WEIGHTS_FULL) * half
    mag = (np.abs(fx) @ KRONROD_WEIGHTS) * half
    return k, np.abs(k - g), mag


def gauss_kronrod(
    f: Callable[[np.ndarray], np.ndarray],
    breakpoints,
    rtol: float = 1e-10,
    atol: float = 1e-14,
    max_panels: int = 200_000,
    strict: bool = False,
) -> tuple[complex | float, float]:
    """Integrate ``f`` over ``[breakpoints[0], breakpoints[-1]]``.

    Each initial panel is bisected until its G7/K15 error estimate falls
    under its share (by length) of ``max(atol, rtol * |I|)``.  Returns the
    integral and the summed error estimate.  With ``strict=True`` an
    exhausted panel budget raises :class:`QuadratureError`; otherwise the
    best estimate is returned.

    Accepted panel contributions are summed with ``math.fsum`` (real and
    imaginary parts separately), so the result does not depend on the order
    in which panels converge.
    """
    pts = np.asarray(breakpoints, dtype=float)
    a, b = pts[:-1], pts[1:]
    keep = b > a
    a, b = a[keep], b[keep]
    if a.size == 0:
        return 0.0, 0.0
    total_len = float(np.sum(b - a))

    done_val: list[np.ndarray] = []
    done_err: list[np.ndarray] = []
    n_used = a.size
    est_total = None
    while a.size:
        val, err, mag = _kronrod_panels(f, a, b)
        if est_total is None:
            est_total = abs(np.sum(val))
        else:
            est_total = abs(sum(np.sum(v) for v in done_val) + np.sum(val))
        tol = max(atol, rtol * est_total)
        share = tol * (b - a) / total_len
        # roundoff floor: no estimate can beat ~eps * int |f| on a panel
        ok = (err <= share) | (err <= 50 * _EPS * mag) | ((b - a) < 1e-13 * max(1.0, total_len))
        done_val.append(val[ok])
        done_err.append(err[ok])
        a, b = a[~ok], b[~ok]
        if a.size and n_used + a.size > max_panels:
            if strict:
                raise QuadratureError(
                    f"gauss_kronrod: panel budget {max_panels} exhausted")
            val2, err2, _ = _kronrod_panels(f, a, b)
            done_val.append(val2)
            done_err.append(err2)
            break
        if a.size:
            m = 0.5 * (a + b)
            a, b = np.concatenate([a, m]), np.concatenate([m, b])
            order = np.argsort(a, kind="stable")
            a, b = a[order], b[order]
            n_used += a.size // 2
    vals = np.concatenate(done_val)
    errs = np.concatenate(done_err)
    return _fsum(vals), float(np.sum(errs))


def _fsum(vals: np.ndarray):
    if np.iscomplexobj(vals):
        return complex(math.fsum(vals.real.tolist()), math.fsum(vals.imag.tolist()))
    return math.fsum(vals.tolist())


def _tanh_sinh_nodes(level: int, t_max: float):
    """Nodes added at refinement ``level`` (step 2**-level), offsets and weights.

    Returns ``(t, delta, w)`` where ``delta = 1 - |x|`` is computed without
    cancellation so points can be placed next to an endpoint accurately.
    """
    h = 2.0 ** (-level)
    if level == 0:
        k = np.arange(-int(t_max), int(t_max) + 1, dtype=float)
    else:
        n = int(t_max / h)
        k = np.arange(-n + (1 - n % 2), n + 1, 2, dtype=float)
    t = k * h
    s = 0.5 * math.pi * np.sinh(np.abs(t))
    delta = 2.0 / (np.exp(2.0 * s) + 1.0)
    w = h * 0.5 * math.pi * np.cosh(t) / np.cosh(s) ** 2
    return t, delta, w


def tanh_sinh(
    f: Callable[[np.ndarray], np.ndarray],
    a: float,
    b: float,
    tol: float = 1e-12,
    max_level: int = 10,
    t_max: float = 4.0,
    offset: bool = False,
) -> tuple[complex | float, float]:
    """Double-exponential quadrature of ``f`` over ``[a, b]``.

    Tolerates integrable endpoint singularities of log or algebraic type.
    Refines by halving the step until two successive estimates agree to
    ``tol`` (relative, with an absolute floor of ``tol``).  Returns the
    estimate and the last difference between levels.

    With ``offset=True`` the integrand is called as ``f(base, d)`` with the
    node at ``base + d``, ``base`` being the nearer endpoint.  Nodes closer
    to an endpoint than its floating-point spacing then keep their exact
    offset, which matters for algebraic singularities such as
    ``|x - a|**-0.75``.
    """
    if b == a:
        return 0.0, 0.0
    if b < a:
        val, err = tanh_sinh(f, b, a, tol, max_level, t_max, offset)
        return -val, err
    half = 0.5 * (b - a)

    def level_sum(level):
        t, delta, w = _tanh_sinh_nodes(level, t_max)
        left = t < 0
        d = np.where(left, half * delta, -half * delta)
        d = np.where(t == 0, half, d)
        base = np.where(left | (t == 0), a, b)
        fx = np.zeros(t.shape, dtype=complex)
        if offset:
            inside = d != 0.0
            if np.any(inside):
                fx[inside] = f(base[inside], d[inside])
        else:
            x = base + d
            inside = (x > a) & (x < b)
            if np.any(inside):
                fx[inside] = f(x[inside])
        return np.sum(w * fx) * half

    h_sum = level_sum(0)
    est = h_sum
    err = math.inf
    for level in range(1, max_level + 1):
        # trapezoid sums: halving the step keeps half the old sum
        h_sum = 0.5 * h_sum + level_sum(level)
        new = h_sum
        err = abs(new - est)
        est = new
        if level >= 3 and err <= tol * max(1.0, abs(est)):
            break
    if abs(est.imag) == 0.0:
        return float(est.real), float(err)
    return complex(est), float(err)


def dilog(y: float) -> float:
    """Real dilogarithm ``Li2(y) = -int_0^y log(1-u)/u du`` for ``0 <= y <= 1``.

    Power series for ``y <= 1/2``; the reflection
    ``Li2(y) = pi^2/6 - log(y) log(1-y) - Li2(1-y)`` covers the rest.
    """
    if not 0.0 <= y <= 1.0:
        raise ValueError(f"dilog: argument {y} outside [0, 1]")
    if y == 0.0:
        return 0.0
    if y == 1.0:
        return math.pi ** 2 / 6.0
    if y > 0.5:
        return math.pi ** 2 / 6.0 - math.log(y) * math.log1p(-y) - dilog(1.0 - y)
    total = 0.0
    term = y
    k = 1
    while True:
        add = term / (k * k)
        total += add
        if add <= 1e-18 * total:
            break
        k += 1
        term *= y
    return total
