"""Statistical kernels shared by the detectors.

Truncated moments of complex Gaussian (or logistic-kernel) densities on
rectangular bins, discrete posteriors over a constellation, and the expected
quadratic form used by every precision update.

Conventions: a complex Gaussian with precision ``gamma`` has variance
``1/(2 gamma)`` per real dimension.  Bounds are carried as complex numbers
whose real and imaginary parts are the bounds of the two dimensions; either
part may be infinite.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from . import _truncated as _tr
from .errors import DimensionMismatch, InvalidState, NonFiniteResult

#: Slope of the logistic surrogate CDF ``1/(1+exp(-c x))``.
LOGISTIC_SLOPE = 3.0 / math.sqrt(math.pi)

_SQRT2 = math.sqrt(2.0)
_SQRT2PI = math.sqrt(2.0 * math.pi)
_LOG_SQRT_2PI_E = 0.5 * math.log(2.0 * math.pi * math.e)


class CdfMode(str, enum.Enum):
    """How the per-dimension latent density is modelled inside a bin.

    ``LOGISTIC`` gives the exact moments of the logistic-kernel density.
    ``LOGISTIC_PLUGIN`` keeps the normal truncation formulas and substitutes
    the logistic CDF and pdf into them; it is the default in the detectors.
    """

    EXACT_NORMAL = "exact-normal"
    LOGISTIC = "logistic"
    LOGISTIC_PLUGIN = "logistic-plugin"
    NAIVE_NORMAL = "naive-normal"


@dataclass(frozen=True)
class ComplexInterval:
    """Rectangular bin ``(lo_re, up_re] x (lo_im, up_im]``."""

    lo_re: float
    up_re: float
    lo_im: float
    up_im: float

    def __post_init__(self):
        for lo, up in ((self.lo_re, self.up_re), (self.lo_im, self.up_im)):
            if math.isnan(lo) or math.isnan(up) or not lo < up:
                raise ValueError(f"empty or invalid interval ({lo}, {up}]")

    @property
    def lo(self) -> complex:
        return pack_complex(self.lo_re, self.lo_im)[()]

    @property
    def up(self) -> complex:
        return pack_complex(self.up_re, self.up_im)[()]


@dataclass(frozen=True)
class MomentPair:
    """Mean and total variance (real plus imaginary) of a complex variable."""

    mean: complex
    var: float


@dataclass(frozen=True)
class Constellation:
    """Finite symbol alphabet with prior probabilities.

    ``modulus2`` is set only for constant-modulus alphabets, in which case
    second moments are reported as that exact value.
    """

    name: str
    points: np.ndarray
    priors: np.ndarray
    modulus2: float | None = None
    _logp: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=complex).ravel()
        pri = np.asarray(self.priors, dtype=float).ravel()
        if pts.size == 0 or pts.shape != pri.shape:
            raise DimensionMismatch("points and priors must be non-empty and equal length")
        if np.any(pri < 0) or not np.isclose(pri.sum(), 1.0, rtol=0, atol=1e-12):
            raise ValueError("priors must be non-negative and sum to one")
        mod = self.modulus2
        if mod is None:
            m2 = np.abs(pts) ** 2
            if np.all(m2 == m2[0]):
                mod = float(m2[0])
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "priors", pri)
        object.__setattr__(self, "modulus2", mod)
        with np.errstate(divide="ignore"):
            object.__setattr__(self, "_logp", np.log(pri))

    @property
    def size(self) -> int:
        return self.points.size

    @property
    def log_priors(self) -> np.ndarray:
        return self._logp

    @property
    def mean(self) -> complex:
        return complex(np.dot(self.priors, self.points))

    @property
    def variance(self) -> float:
        second = np.dot(self.priors, np.abs(self.points) ** 2)
        return float(second - abs(self.mean) ** 2)


def psk(order: int) -> Constellation:
    """Unit-modulus ``order``-PSK with uniform priors."""
    k = np.arange(order)
    if order == 4:
        pts = (1 - 2 * (k & 1) + 1j * (1 - 2 * (k >> 1))) / _SQRT2
    else:
        pts = np.exp(2j * np.pi * k / order)
    return Constellation(f"{order}psk", pts, np.full(order, 1.0 / order), modulus2=1.0)


def qpsk() -> Constellation:
    return psk(4)


def qam(order: int) -> Constellation:
    """Square ``order``-QAM normalised to unit average energy."""
    side = math.isqrt(order)
    if side * side != order or side < 2:
        raise ValueError("QAM order must be an even power of two")
    lev = np.arange(-(side - 1), side, 2, dtype=float)
    pts = (lev[None, :] + 1j * lev[::-1, None]).ravel()
    pts /= math.sqrt(np.mean(np.abs(pts) ** 2))
    return Constellation(f"{order}qam", pts, np.full(order, 1.0 / order))


def constellation_by_name(name: str) -> Constellation:
    key = name.lower().replace("-", "")
    table = {"qpsk": qpsk, "4psk": qpsk, "bpsk": lambda: psk(2), "8psk": lambda: psk(8),
             "16qam": lambda: qam(16), "64qam": lambda: qam(64)}
    if key not in table:
        raise ValueError(f"unknown constellation {name!r}")
    return table[key]()


def pack_complex(re, im) -> np.ndarray:
    """Build a complex array from parts without ``0*inf`` contamination."""
    re = np.asarray(re, dtype=float)
    im = np.asarray(im, dtype=float)
    out = np.empty(np.broadcast(re, im).shape, dtype=complex)
    out.real = re
    out.imag = im
    return out


# ---------------------------------------------------------------- truncated moments

_MODE_CODES = {CdfMode.EXACT_NORMAL: _tr.MODE_NORMAL, CdfMode.LOGISTIC: _tr.MODE_LOGISTIC,
               CdfMode.LOGISTIC_PLUGIN: _tr.MODE_PLUGIN}

def _std(a, b, mode):
    a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    shape = a.shape
    a = np.ascontiguousarray(a).ravel()
    b = np.ascontiguousarray(b).ravel()
    m = np.empty(a.size)
    v = np.empty(a.size)
    _tr.std_moments(a, b, mode, m, v)
    return m.reshape(shape), v.reshape(shape)


def std_normal_moments(a, b):
    """Mean and variance of a standard normal truncated to ``(a, b]``."""
    return _std(a, b, _tr.MODE_NORMAL)


def std_logistic_moments(a, b):
    """Mean and variance of the standard logistic density ``s(w)s(-w)`` on ``(a, b]``."""
    return _std(a, b, _tr.MODE_LOGISTIC)


def _naive_normal(a, b):
    # textbook ratio of pdf differences to a CDF difference; breaks down once
    # the CDF difference underflows
    with np.errstate(divide="ignore", invalid="ignore"):
        z = special.ndtr(b) - special.ndtr(a)
        if np.any(~(z > 0.0)):
            raise NonFiniteResult("normalising mass underflowed to zero")
        pa = np.exp(-a * a / 2.0) / _SQRT2PI
        pb = np.exp(-b * b / 2.0) / _SQRT2PI
        apa = np.where(pa == 0.0, 0.0, a * pa)
        bpb = np.where(pb == 0.0, 0.0, b * pb)
        m = (pa - pb) / z
        v = 1.0 + (apa - bpb) / z - m * m
    return m, np.maximum(v, 0.0)


def truncated_real_moments(mu, gamma, lo, up, mode=CdfMode.LOGISTIC_PLUGIN):
    """Per-dimension truncated moments of ``exp(-gamma (x-mu)^2)`` on ``(lo, up]``.

    All arguments broadcast.  Returns ``(mean, var)`` arrays.  The mean is
    guaranteed to lie inside the interval.
    """
    mode = CdfMode(mode)
    arrs = np.broadcast_arrays(*(np.asarray(x, dtype=float) for x in (mu, gamma, lo, up)))
    shape = arrs[0].shape
    mu, gamma, lo, up = (np.array(x, order="C").ravel() for x in arrs)
    mean = np.empty(mu.size)
    var = np.empty(mu.size)
    if mode is CdfMode.NAIVE_NORMAL:
        sd = 1.0 / np.sqrt(2.0 * gamma)
        with np.errstate(invalid="ignore"):
            m, v = _naive_normal((lo - mu) / sd, (up - mu) / sd)
        mean = np.clip(mu + sd * m, np.nextafter(lo, np.inf), np.nextafter(up, -np.inf))
        var = sd * sd * v
        ok = bool(np.all(np.isfinite(mean)) and np.all(np.isfinite(var)))
    else:
        code = _MODE_CODES[mode]
        ok = _tr.real_moments(mu, gamma, lo, up, code, LOGISTIC_SLOPE, mean, var)
    if not ok:
        raise NonFiniteResult("truncated moments are not finite")
    return mean.reshape(shape), var.reshape(shape)


def truncated_moments(mu, gamma, lo, up, mode=CdfMode.LOGISTIC_PLUGIN):
    """Complex version of :func:`truncated_real_moments`.

    Returns the complex mean and the total variance (sum over dimensions).
    """
    mode = CdfMode(mode)
    if mode is CdfMode.NAIVE_NORMAL:
        mu = np.asarray(mu, dtype=complex)
        lo = np.asarray(lo, dtype=complex)
        up = np.asarray(up, dtype=complex)
        mr, vr = truncated_real_moments(mu.real, gamma, lo.real, up.real, mode)
        mi, vi = truncated_real_moments(mu.imag, gamma, lo.imag, up.imag, mode)
        return pack_complex(mr, mi), vr + vi
    mu, gamma, lo, up = np.broadcast_arrays(
        np.asarray(mu, dtype=complex), np.asarray(gamma, dtype=float),
        np.asarray(lo, dtype=complex), np.asarray(up, dtype=complex))
    shape = mu.shape
    flat = [np.array(x, order="C").ravel() for x in (mu, gamma, lo, up)]
    mean = np.empty(mu.size, dtype=complex)
    var = np.empty(mu.size)
    code = _MODE_CODES[mode]
    if not _tr.complex_moments(*flat, code, LOGISTIC_SLOPE, mean, var):
        raise NonFiniteResult("truncated moments are not finite")
    return mean.reshape(shape), var.reshape(shape)


def sequential_update(G, e, r_mean, r_var, r_loc, r_prec, lo, up, mode=CdfMode.LOGISTIC_PLUGIN):
    """In-place antenna-ordered update of the quantized signals.

    ``G`` is a stack of precision matrices, one per column or a single shared
    one.  Each column is swept over its antennas in index order and the
    residual ``e`` follows every step.
    """
    mode = CdfMode(mode)
    G = np.asarray(G, dtype=complex)
    if mode is CdfMode.NAIVE_NORMAL:
        Gt = np.broadcast_to(G, (e.shape[1],) + G.shape[1:])
        for m in range(e.shape[0]):
            g = np.real(Gt[:, m, m])
            s = r_mean[m] - np.einsum("tn,nt->t", Gt[:, m, :], e) / g
            new, var = truncated_moments(s, g, lo[m], up[m], mode)
            e[m] += new - r_mean[m]
            r_mean[m], r_var[m], r_loc[m], r_prec[m] = new, var, s, g
        return
    code = _MODE_CODES[mode]
    ok = _tr.sequential_sweep(np.ascontiguousarray(G, dtype=complex), e, r_mean, r_var, r_loc,
                              r_prec, np.asarray(lo, dtype=complex),
                              np.asarray(up, dtype=complex), code, LOGISTIC_SLOPE)
    if not ok:
        raise NonFiniteResult("truncated moments are not finite")


def truncated_complex_moments(mu: complex, gamma: float, interval: ComplexInterval,
                              mode=CdfMode.LOGISTIC_PLUGIN) -> MomentPair:
    """Mean and total variance of ``CN(mu, 1/gamma)`` restricted to ``interval``."""
    if not (gamma > 0.0 and math.isfinite(gamma)):
        raise ValueError("precision must be positive and finite")
    mean, var = truncated_moments(mu, gamma, interval.lo, interval.up, mode)
    return MomentPair(complex(mean.ravel()[0]), float(np.ravel(var)[0]))


def log_normal_mass(a, b):
    """``log(Phi(b) - Phi(a))`` evaluated without cancellation."""
    a = np.array(a, dtype=float, ndmin=1)
    b = np.array(b, dtype=float, ndmin=1)
    with np.errstate(invalid="ignore"):
        flip = (a + b) > 0.0
    a2 = np.where(flip, -b, a)
    b2 = np.where(flip, -a, b)
    lb = special.log_ndtr(b2)
    la = special.log_ndtr(a2)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = lb + np.log(-np.expm1(la - lb))
    return out


def truncated_normal_entropy(mu, gamma, lo, up):
    """Differential entropy of a complex Gaussian truncated to a rectangle.

    Sums the two per-dimension entropies of ``exp(-gamma (x-mu)^2)``.
    """
    mu = np.asarray(mu, dtype=complex)
    lo = np.asarray(lo, dtype=complex)
    up = np.asarray(up, dtype=complex)
    gamma = np.asarray(gamma, dtype=float)
    total = 0.0
    for part in (np.real, np.imag):
        sd = np.broadcast_to(1.0 / np.sqrt(2.0 * gamma), np.shape(mu))
        a = ((part(lo) - part(mu)) / sd).ravel()
        b = ((part(up) - part(mu)) / sd).ravel()
        m, v = std_normal_moments(a, b)
        s = v + m * m - 1.0  # (a phi(a) - b phi(b)) / Z
        ent = np.log(sd.ravel()) + _LOG_SQRT_2PI_E + log_normal_mass(a, b) + s / 2.0
        total = total + ent.reshape(np.shape(mu))
    return total


# ---------------------------------------------------------------- discrete posterior

@dataclass(frozen=True)
class DiscretePosterior:
    """Posterior over constellation points; arrays broadcast over leading axes."""

    probs: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    second_moment: np.ndarray


def _posterior_from_sqdist(sqdist, gamma, cons: Constellation) -> DiscretePosterior:
    logits = cons.log_priors - gamma[..., None] * sqdist
    logits = logits - logits.max(axis=-1, keepdims=True)
    w = np.exp(logits)
    probs = w / w.sum(axis=-1, keepdims=True)
    mean = probs @ cons.points
    if cons.modulus2 is not None:
        second = np.full(mean.shape, cons.modulus2)
    else:
        second = probs @ (np.abs(cons.points) ** 2)
    var = np.maximum(second - np.abs(mean) ** 2, 0.0)
    return DiscretePosterior(probs, mean, var, second)


def discrete_posterior(z, gamma, cons: Constellation) -> DiscretePosterior:
    """Posterior ``p(a|z) ∝ p_a exp(-gamma |z-a|^2)`` for every point ``a``.

    ``z`` and ``gamma`` broadcast; the returned ``probs`` has one extra
    trailing axis indexing the constellation.
    """
    z = np.asarray(z, dtype=complex)
    gamma = np.asarray(gamma, dtype=float)
    z, gamma = np.broadcast_arrays(z, gamma)
    if np.any(~(gamma > 0.0)) or not np.all(np.isfinite(z)):
        raise NonFiniteResult("posterior inputs must be finite with positive precision")
    sqdist = np.abs(z[..., None] - cons.points) ** 2
    post = _posterior_from_sqdist(sqdist, gamma, cons)
    if not np.all(np.isfinite(post.probs)):
        raise NonFiniteResult("posterior probabilities are not finite")
    return post


def hard_decision(probs) -> np.ndarray:
    """Index of the most probable point; ties go to the lowest index."""
    return np.argmax(probs, axis=-1)


# ---------------------------------------------------------------- quadratic form

def expected_quadratic_form(y_mean, y_cov, A_mean, A_cols_cov, x_mean, x_cov, B) -> float:
    """``E[(y - A x)^H B (y - A x)]`` for independent ``y``, columns of ``A`` and ``x``.

    ``A_cols_cov`` is a sequence of column covariances (or ``None`` for a known
    matrix).  Covariances of ``y`` and ``x`` may be given as matrices or as
    vectors holding diagonals.
    """
    y = np.asarray(y_mean, dtype=complex)
    A = np.atleast_2d(np.asarray(A_mean, dtype=complex))
    x = np.asarray(x_mean, dtype=complex)
    B = np.asarray(B, dtype=complex)
    M, K = A.shape
    if y.shape != (M,) or x.shape != (K,) or B.shape != (M, M):
        raise DimensionMismatch("incompatible shapes in quadratic form")
    Sy = _as_matrix(y_cov, M)
    Sx = _as_matrix(x_cov, K)
    r = y - A @ x
    total = np.vdot(r, B @ r) + np.trace(B @ Sy)
    total += np.trace(Sx @ (A.conj().T @ B @ A))
    if A_cols_cov is not None:
        if len(A_cols_cov) != K:
            raise DimensionMismatch("one covariance per column of A is required")
        dvals = np.array([np.trace(B @ _as_matrix(S, M)) for S in A_cols_cov])
        # D = diag(Tr(B Sigma_i)); contributes x^H D x + Tr(Sigma_x D)
        total += np.sum(dvals * (np.abs(x) ** 2 + np.real(np.diag(Sx))))
    return float(np.real(total))


def _as_matrix(cov, n):
    if cov is None:
        return np.zeros((n, n), dtype=complex)
    c = np.asarray(cov)
    if c.ndim == 0:
        return np.eye(n) * c
    if c.ndim == 1:
        if c.size != n:
            raise DimensionMismatch("covariance diagonal has wrong length")
        return np.diag(c)
    if c.shape != (n, n):
        raise DimensionMismatch("covariance matrix has wrong shape")
    return c


def check_invariant(cond: bool, msg: str):
    if not cond:
        raise InvalidState(msg)
