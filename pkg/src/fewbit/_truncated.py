"""Compiled per-element truncated-moment routines.

Standardized coordinates throughout: the normal routines work with the
density ``exp(-u^2/2)`` and the logistic ones with ``q(w) = s(w) s(-w)``,
``s`` the logistic sigmoid.  Each routine returns the mean and variance of
the density restricted to ``(a, b]``.

The closed forms are evaluated on the side of the origin where they are
stable (the interval is reflected so that ``a + b <= 0``).  When the
variance they produce is small enough that cancellation could have eaten
the leading digits, the moments are recomputed by 64-point Gauss-Legendre
quadrature over the part of the interval that carries the mass.
"""

import math

import numpy as np
from numba import njit

_SQRT2 = math.sqrt(2.0)
_SQRT2PI = math.sqrt(2.0 * math.pi)
_INV_SQRTPI = 1.0 / math.sqrt(math.pi)
_PI2_3 = math.pi**2 / 3.0
_INF = math.inf

FALLBACK_VAR = 0.05
NORMAL_EXPONENT = 55.0
LOGISTIC_SPAN = 60.0
LOGISTIC_TAIL = -30.0

_x, _w = np.polynomial.legendre.leggauss(64)
GL_X = (_x + 1.0) / 2.0
GL_W = _w / 2.0
_x, _w = np.polynomial.legendre.leggauss(16)
GL16_X = (_x + 1.0) / 2.0
GL16_W = _w / 2.0
# a log-density that varies by less than this over the window is integrated
# with 16 nodes (error far below double precision) instead of 64
SMOOTH_RANGE = 4.0

MODE_LOGISTIC = 0
MODE_NORMAL = 1
MODE_PLUGIN = 2


# ---------------------------------------------------------------- special functions

@njit(cache=True)
def erfcx_nonneg(y):
    """``exp(y^2) erfc(y)`` for ``y >= 0``."""
    if y < 26.0:
        hi = y * y
        # exact low part of y*y (Dekker split) so exp(y^2) keeps full accuracy
        c = 134217729.0 * y
        yh = c - (c - y)
        yl = y - yh
        lo = ((yh * yh - hi) + 2.0 * yh * yl) + yl * yl
        return math.exp(hi) * (1.0 + lo) * math.erfc(y)
    inv = 0.5 / (y * y)
    term = 1.0
    s = 1.0
    for n in range(1, 13):
        term *= -(2.0 * n - 1.0) * inv
        s += term
    return s * _INV_SQRTPI / y


@njit(cache=True)
def ndtr(x):
    return 0.5 * math.erfc(-x / _SQRT2)


# B_{2k} / (2k+1)! for k = 1..10
_LI2_C = np.array([
    1.0 / 36.0, -1.0 / 3600.0, 1.0 / 211680.0, -1.0 / 10886400.0, 1.0 / 526901760.0,
    -691.0 / 16999766784000.0, 1.0 / 1120863744000.0, -3617.0 / 181400588328960000.0,
    43867.0 / 97072790126247936000.0, -174611.0 / 16860010916664115200000.0,
])


@njit(cache=True)
def li2_small(u):
    """Dilogarithm for ``0 <= u <= 1/2``."""
    return li2_z(-math.log1p(-u))


@njit(cache=True)
def li2_z(z):
    """``Li2(1 - exp(-z))`` for ``0 <= z <= log 2``.

    Bernoulli series in ``z``, which converges much faster than the power
    series in ``u = 1 - exp(-z)``.
    """
    z2 = z * z
    s = 0.0
    for k in range(_LI2_C.size - 1, -1, -1):
        s = s * z2 + _LI2_C[k]
    return z - z2 / 4.0 + z * z2 * s


# ---------------------------------------------------------------- quadrature

@njit(cache=True)
def _gl(lo, hi, r0, kind):
    """Gauss-Legendre mean/variance on ``[lo, hi]`` in offsets from ``r0``."""
    # bound on the variation of the log-density over the window
    if kind == MODE_NORMAL:
        spread = (hi - lo) * max(abs(lo), abs(hi))
    else:
        spread = hi - lo
    if spread <= SMOOTH_RANGE:
        return _gl_nodes(lo, hi, r0, kind, GL16_X, GL16_W)
    return _gl_nodes(lo, hi, r0, kind, GL_X, GL_W)


@njit(cache=True)
def _gl_nodes(lo, hi, r0, kind, X, W):
    n = X.size
    d = np.empty(n)
    g = np.empty(n)
    gmax = -_INF
    width = hi - lo
    base = lo - r0
    ar0 = abs(r0)
    for j in range(n):
        dj = base + width * X[j]
        d[j] = dj
        if kind == MODE_NORMAL:
            gj = -dj * (dj + 2.0 * r0) / 2.0
        else:
            aw = abs(r0 + dj)
            gj = -(aw - ar0) - 2.0 * (math.log1p(math.exp(-aw)) - math.log1p(math.exp(-ar0)))
        g[j] = gj
        if gj > gmax:
            gmax = gj
    tot = 0.0
    s1 = 0.0
    for j in range(n):
        wj = W[j] * math.exp(g[j] - gmax)
        g[j] = wj
        tot += wj
        s1 += wj * d[j]
    md = s1 / tot
    s2 = 0.0
    for j in range(n):
        t = d[j] - md
        s2 += g[j] * t * t
    return r0 + md, s2 / tot


# ---------------------------------------------------------------- normal

@njit(cache=True)
def _normal_closed(a, b):
    if b <= 0.0:
        if a == -_INF:
            expo = -_INF
            rho = 0.0
            ea = 0.0
            arho = 0.0
        else:
            expo = -(a - b) * (a + b) / 2.0
            rho = math.exp(expo)
            ea = 0.5 * erfcx_nonneg(-a / _SQRT2)
            arho = a * rho if rho != 0.0 else 0.0
        eb = 0.5 * erfcx_nonneg(-b / _SQRT2)
        den = _SQRT2PI * (eb - ea * rho)
        m = math.expm1(expo) / den
        s = (arho - b) / den
        return m, 1.0 + s - m * m
    z = ndtr(b) - ndtr(a)
    pa = 0.0
    apa = 0.0
    if a != -_INF:
        pa = math.exp(-a * a / 2.0) / _SQRT2PI
        apa = a * pa
    pb = 0.0
    bpb = 0.0
    if b != _INF:
        pb = math.exp(-b * b / 2.0) / _SQRT2PI
        bpb = b * pb
    m = (pa - pb) / z
    return m, 1.0 + (apa - bpb) / z - m * m


@njit(cache=True)
def normal_moments(a, b):
    flip = a + b > 0.0
    if flip:
        a, b = -b, -a
    m, v = _normal_closed(a, b)
    if not (math.isfinite(m) and math.isfinite(v)) or v < FALLBACK_VAR:
        r0 = min(max(0.0, a), b)
        if b < 0.0:
            span = 2.0 * NORMAL_EXPONENT / (abs(b) + math.sqrt(b * b + 2.0 * NORMAL_EXPONENT))
            lo = max(a, b - span)
            hi = b
        else:
            half = math.sqrt(2.0 * NORMAL_EXPONENT)
            lo = max(a, -half)
            hi = min(b, half)
        m, v = _gl(lo, hi, r0, MODE_NORMAL)
    if flip:
        m = -m
    return m, v


# ---------------------------------------------------------------- logistic

@njit(cache=True)
def _endpoint(w):
    """``(A1(w), A2(w), s(w), s(-w))`` for the logistic kernel.

    ``A1`` and ``A2`` are the first and second moment integrals of ``q`` up
    to ``w`` (``A1`` is even and vanishes at both infinities).  Everything
    is built from ``e = exp(-|w|)``; the second moment uses
    ``Li2(-e^w) = -Li2(s(w)) - softplus(w)^2 / 2`` with ``s(w) <= 1/2``.
    """
    if w == -_INF:
        return 0.0, 0.0, 0.0, 1.0
    if w == _INF:
        return 0.0, _PI2_3, 1.0, 0.0
    wn = -abs(w)
    e = math.exp(wn)
    sn = e / (1.0 + e)
    sc = 1.0 / (1.0 + e)
    sp = math.log1p(e)
    a1 = wn * sn - sp
    # -log(1 - s(wn)) is exactly softplus(wn)
    a2n = wn * wn * sn - 2.0 * wn * sp + 2.0 * li2_z(sp) + sp * sp
    if w <= 0.0:
        return a1, a2n, sn, sc
    return a1, _PI2_3 - a2n, sc, sn


@njit(cache=True)
def _logistic_closed(a, b):
    if b < LOGISTIC_TAIL:
        # q(w) = e^w (1 + O(e^w)): truncated exponential below b
        L = b - a
        if math.isinf(L):
            return b - 1.0, 1.0
        sh = math.sinh(L / 2.0)
        mt = 1.0 - L / math.expm1(L)
        vt = 1.0 - (L / 2.0) ** 2 / (sh * sh)
        return b - mt, vt
    a1a, a2a, _, sma = _endpoint(a)
    a1b, a2b, sb, _ = _endpoint(b)
    z = sb * sma * -math.expm1(a - b)
    m = (a1b - a1a) / z
    e2 = (a2b - a2a) / z
    return m, e2 - m * m


@njit(cache=True)
def logistic_moments(a, b):
    flip = a + b > 0.0
    if flip:
        a, b = -b, -a
    m, v = _logistic_closed(a, b)
    if not (math.isfinite(m) and math.isfinite(v)) or v < FALLBACK_VAR:
        r0 = min(max(0.0, a), b)
        m, v = _gl(max(a, r0 - LOGISTIC_SPAN), min(b, r0 + LOGISTIC_SPAN), r0, MODE_LOGISTIC)
    if flip:
        m = -m
    return m, v


# ---------------------------------------------------------------- plug-in

@njit(cache=True)
def _sig(x):
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


@njit(cache=True)
def plugin_moments(a, b, c):
    """Normal truncation formulas with ``Phi`` and ``phi`` swapped for the
    logistic CDF ``F(u) = s(c u)`` and its density ``c F (1 - F)``.

    Not the moments of any density.  The normalizer is factored as
    ``F(b) - F(a) = s(cb) s(-ca) (1 - exp(c (a - b)))`` so that both
    endpoint ratios stay finite far into the tails.
    """
    flip = a + b > 0.0
    if flip:
        a, b = -b, -a
    if b == _INF:
        return 0.0, 1.0
    d = -math.expm1(c * (a - b)) if a != -_INF else 1.0
    # p(a)/Z and p(b)/Z
    if a == -_INF:
        ra = 0.0
        ara = 0.0
    else:
        if b <= 0.0:
            # s(ca)/s(cb) without underflow; a <= b <= 0
            ra = c * math.exp(c * (a - b)) * (1.0 + math.exp(c * b)) / ((1.0 + math.exp(c * a)) * d)
        else:
            ra = c * _sig(c * a) / (_sig(c * b) * d)
        ara = a * ra
    rb = c * _sig(-c * b) / (_sig(-c * a) * d) if a != -_INF else c * _sig(-c * b)
    m = ra - rb
    v = 1.0 + ara - b * rb - m * m
    if v < 0.0:
        v = 0.0
    if flip:
        m = -m
    return m, v


# ---------------------------------------------------------------- drivers

@njit(cache=True)
def std_moments(a, b, mode, m_out, v_out):
    for k in range(a.size):
        if mode == MODE_NORMAL:
            m, v = normal_moments(a[k], b[k])
        elif mode == MODE_PLUGIN:
            m, v = plugin_moments(a[k], b[k], 3.0 / math.sqrt(math.pi))
        else:
            m, v = logistic_moments(a[k], b[k])
        m_out[k] = m
        v_out[k] = v


@njit(cache=True)
def one_moment(mu, gamma, lo, up, mode, slope):
    """Moments of ``exp(-gamma (x - mu)^2)`` on ``(lo, up]`` for one element.

    ``slope`` rescales standardized units for the logistic kernel.  The mean
    is clamped to the open interval.
    """
    sd = 1.0 / math.sqrt(2.0 * gamma)
    a = (lo - mu) / sd
    b = (up - mu) / sd
    if mode == MODE_NORMAL:
        m, v = normal_moments(a, b)
    elif mode == MODE_PLUGIN:
        m, v = plugin_moments(a, b, slope)
    else:
        m, v = logistic_moments(slope * a, slope * b)
        m /= slope
        v /= slope * slope
    mean = mu + sd * m
    var = sd * sd * v
    lo_in = np.nextafter(lo, _INF)
    up_in = np.nextafter(up, -_INF)
    if mean < lo_in:
        mean = lo_in
    if mean > up_in:
        mean = up_in
    return mean, var


@njit(cache=True)
def real_moments(mu, gamma, lo, up, mode, slope, m_out, v_out):
    """Elementwise :func:`one_moment`; returns False on a non-finite result."""
    ok = True
    for k in range(mu.size):
        mean, var = one_moment(mu[k], gamma[k], lo[k], up[k], mode, slope)
        if not (math.isfinite(mean) and math.isfinite(var)):
            ok = False
        m_out[k] = mean
        v_out[k] = var
    return ok


@njit(cache=True)
def complex_moments(mu, gamma, lo, up, mode, slope, m_out, v_out):
    """Complex version of :func:`real_moments` on flat arrays."""
    ok = True
    for k in range(mu.size):
        mr, vr = one_moment(mu[k].real, gamma[k], lo[k].real, up[k].real, mode, slope)
        mi, vi = one_moment(mu[k].imag, gamma[k], lo[k].imag, up[k].imag, mode, slope)
        if not (math.isfinite(mr) and math.isfinite(mi) and math.isfinite(vr + vi)):
            ok = False
        m_out[k] = complex(mr, mi)
        v_out[k] = vr + vi
    return ok


@njit(cache=True)
def sequential_sweep(G, e, r_mean, r_var, r_loc, r_prec, lo, up, mode, slope):
    """Antenna-by-antenna update of the quantized signals under a precision matrix.

    ``G`` is ``(T, M, M)`` or ``(1, M, M)`` (shared).  Columns are independent,
    so each is swept over ``m = 0..M-1`` in turn; ``e`` is updated in place
    after every antenna so later antennas see the new residual.
    """
    M, T = e.shape
    shared = G.shape[0] == 1
    ok = True
    for t in range(T):
        g = 0 if shared else t
        for m in range(M):
            acc = 0j
            for n in range(M):
                acc += G[g, m, n] * e[n, t]
            gm = G[g, m, m].real
            s = r_mean[m, t] - acc / gm
            mr, vr = one_moment(s.real, gm, lo[m, t].real, up[m, t].real, mode, slope)
            mi, vi = one_moment(s.imag, gm, lo[m, t].imag, up[m, t].imag, mode, slope)
            if not (math.isfinite(mr) and math.isfinite(mi) and math.isfinite(vr + vi)):
                ok = False
            new = complex(mr, mi)
            e[m, t] += new - r_mean[m, t]
            r_mean[m, t] = new
            r_var[m, t] = vr + vi
            r_loc[m, t] = s
            r_prec[m, t] = gm
    return ok
