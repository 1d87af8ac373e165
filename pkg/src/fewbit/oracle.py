"""Brute-force reference computations used by the verification suites.

These are deliberately naive: dense midpoint quadrature straight from the
densities and plain Monte Carlo.  They share no code with the kernels they
check.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

QUAD_POINTS = 1_000_000
# the window keeps everything within exp(-50) of the peak density
_LOG_DROP = 50.0


@njit(cache=True)
def _midpoint_moments(lo, hi, center, logistic, slope, n):
    h = (hi - lo) / n
    # density at the center, used as the scale
    if logistic:
        wc = abs(slope * center)
        # beyond this e^-|w| is negligible next to 1 across the whole window
        ec = math.exp(-wc) if wc < 600.0 else 0.0
    else:
        g0 = -center * center / 2.0
    s0 = 0.0
    s1 = 0.0
    s2 = 0.0
    for j in range(n):
        u = lo + (j + 0.5) * h
        if logistic:
            # s(w) s(-w) = e / (1 + e)^2 with e = exp(-|w|), relative to the center
            r = math.exp(wc - abs(slope * u))
            c = (1.0 + ec) / (1.0 + r * ec)
            f = r * c * c
        else:
            f = math.exp(-u * u / 2.0 - g0)
        d = u - center
        s0 += f
        s1 += f * d
        s2 += f * d * d
    m = s1 / s0
    return center + m, s2 / s0 - m * m


def quadrature_moments(mu: float, gamma: float, lo: float, up: float, logistic: bool,
                       slope: float = 3.0 / math.sqrt(math.pi), n: int = QUAD_POINTS):
    """Mean and variance of ``exp(-gamma (x-mu)^2)`` (or its logistic-kernel
    counterpart ``q(slope (x-mu) sqrt(2 gamma))``) restricted to ``(lo, up]``.
    """
    sd = 1.0 / math.sqrt(2.0 * gamma)
    a = (lo - mu) / sd
    b = (up - mu) / sd
    center = min(max(0.0, a), b)
    if logistic:
        reach = abs(center) + _LOG_DROP / slope
    else:
        reach = math.sqrt(center * center + 2.0 * _LOG_DROP)
    wlo = max(a, -reach)
    whi = min(b, reach)
    m, v = _midpoint_moments(wlo, whi, center, logistic, slope, n)
    return mu + sd * m, sd * sd * v


def monte_carlo_quadratic_form(rng: np.random.Generator, y_mean, y_cov, A_mean, A_cols_cov,
                               x_mean, x_cov, B, samples: int = 1_000_000,
                               batch: int = 100_000) -> float:
    """Sample average of ``(y - A x)^H B (y - A x)`` with independent Gaussian
    ``y``, columns of ``A`` and ``x`` (full covariance matrices)."""
    M, K = A_mean.shape
    Ly = _sqrt_factor(y_cov)
    Lx = _sqrt_factor(x_cov)
    La = [_sqrt_factor(S) for S in A_cols_cov]
    total = 0.0
    done = 0
    while done < samples:
        n = min(batch, samples - done)
        y = y_mean + _cn(rng, (n, M)) @ Ly.T
        x = x_mean + _cn(rng, (n, K)) @ Lx.T
        A = np.repeat(A_mean[None], n, axis=0)
        for k in range(K):
            A[:, :, k] += _cn(rng, (n, M)) @ La[k].T
        r = y - np.einsum("nmk,nk->nm", A, x)
        total += float(np.sum(np.real(np.einsum("nm,mk,nk->n", r.conj(), B, r))))
        done += n
    return total / samples


def _cn(rng, shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)


def _sqrt_factor(S):
    lam, U = np.linalg.eigh(S)
    return U * np.sqrt(np.maximum(lam, 0.0))
