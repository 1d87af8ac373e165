"""Noise precision operators used by the detectors.

A precision is either a scalar per slot (``ScalarPrecision``) or a Hermitian
matrix per slot (``MatrixPrecision``).  Both expose the same small set of
operations, so the matched-filter and LMMSE algorithms share one engine and
the scalar case reduces the matrix formulas to their matched-filter forms
exactly rather than approximately.

Slot-indexed quantities have shape ``(T,)``; residual blocks are ``(M, T)``.
"""

from __future__ import annotations

import numpy as np

from .errors import SingularCovariance

GAMMA_CAP = 1e12
COND_LIMIT = 1e14


def capped_ratio(num, den):
    """``num/den`` capped at :data:`GAMMA_CAP` (also when ``den == 0``)."""
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    out = np.full(np.broadcast(num, den).shape, GAMMA_CAP)
    ok = den * GAMMA_CAP > num
    np.divide(num, den, out=out, where=ok)
    return out


def hermitian_inverse(A, floor=None):
    """Inverse of a stack of Hermitian PD matrices with a condition check.

    ``floor`` is an optional per-matrix lower bound on the smallest
    eigenvalue.  When it together with the trace already proves the
    condition number is acceptable, the inverse is taken by LU instead of a
    full eigendecomposition.
    """
    A = np.asarray(A)
    if floor is not None:
        tr = np.real(np.trace(A, axis1=-2, axis2=-1))
        floor = np.asarray(floor, dtype=float)
        if np.all(floor > 0.0) and np.all(tr <= COND_LIMIT * floor):
            inv = np.linalg.inv(A)
            return (inv + np.conj(np.swapaxes(inv, -1, -2))) / 2.0
    lam, V = np.linalg.eigh(A)
    lo = lam[..., 0]
    hi = lam[..., -1]
    if np.any(~(lo > 0.0)) or np.any(hi > COND_LIMIT * lo):
        raise SingularCovariance("precision estimate is numerically singular")
    inv = (V / lam[..., None, :]) @ np.conj(np.swapaxes(V, -1, -2))
    return (inv + np.conj(np.swapaxes(inv, -1, -2))) / 2.0


class ScalarPrecision:
    """Precision ``gamma_t I`` for every slot ``t``."""

    is_matrix = False

    def __init__(self, gamma):
        self.gamma = np.asarray(gamma, dtype=float)
        self._hn = None

    def as_matrices(self, M):
        return self.gamma[:, None, None] * np.eye(M)[None]

    # -- known-channel detection ------------------------------------------
    def prepare(self, H):
        self._hn = np.sum(np.abs(H) ** 2, axis=0)
        return self

    def whitened(self, e, m):
        return e[m]

    def diag(self, m):
        return self.gamma

    def filter(self, i, H, e):
        hn = self._hn[i]
        return (H[:, i].conj() @ e) / hn, self.gamma * hn

    # -- channel estimation -----------------------------------------------
    def channel_precision(self, a, w):
        """``a + sum_t gamma_t w_t`` (a scalar)."""
        return a + np.dot(self.gamma, w)

    def channel_rhs(self, gi, tau, h, pil, E, xc):
        """``Gamma_i k_i`` from the residual shortcut."""
        return (gi - np.dot(self.gamma, tau)) * h + pil + E @ (xc * self.gamma)

    def symbol_filter(self, h, post, E, xm):
        hn = np.real(np.vdot(h, h))
        tot = hn + post.trace
        z = (hn * xm + h.conj() @ E) / tot
        return z, self.gamma * tot


class MatrixPrecision:
    """Hermitian PD precision matrix per slot, or one shared matrix.

    ``G`` has shape ``(T, M, M)``, or ``(1, M, M)`` when ``shared``.
    """

    is_matrix = True

    def __init__(self, G, shared=False):
        self.G = np.asarray(G, dtype=complex)
        self.shared = shared
        self._GH = None
        self._quad = None

    def as_matrices(self, M):
        return self.G

    def _rows(self, m, e):
        if self.shared:
            return self.G[0, m, :] @ e
        return np.einsum("tk,kt->t", self.G[:, m, :], e)

    # -- known-channel detection ------------------------------------------
    def prepare(self, H):
        self._GH = self.G @ H  # (T, M, K)
        self._quad = np.real(np.einsum("mk,tmk->tk", H.conj(), self._GH))
        return self

    def whitened(self, e, m):
        return self._rows(m, e) / np.real(self.G[:, m, m])

    def diag(self, m):
        return np.real(self.G[:, m, m])

    def filter(self, i, H, e):
        gh = self._GH[:, :, i]
        q = self._quad[:, i]
        if self.shared:
            num = gh[0].conj() @ e
        else:
            num = np.einsum("tm,mt->t", gh.conj(), e)
        return num / q, q

    # -- channel estimation -----------------------------------------------
    def _weighted_sum(self, w):
        if self.shared:
            return np.sum(w) * self.G[0]
        return np.einsum("t,tmk->mk", w, self.G)

    def channel_precision(self, a, w):
        M = self.G.shape[-1]
        return a * np.eye(M) + self._weighted_sum(w)

    def channel_rhs(self, Gi, tau, h, pil, E, xc):
        corr = self._weighted_sum(tau)
        if self.shared:
            weighted = self.G[0] @ (E @ xc)
        else:
            weighted = np.einsum("tmk,kt->m", self.G, E * xc[None, :])
        return (Gi - corr) @ h + pil + weighted

    def symbol_filter(self, h, post, E, xm):
        S = post.cov
        if self.shared:
            G = self.G[0]
            gh = G @ h
            q = np.real(np.vdot(h, gh))
            tr = np.real(np.sum(G * S.T))
            num = gh.conj() @ E
        else:
            gh = self.G @ h  # (T, M)
            q = np.real(gh @ h.conj())
            tr = np.real(np.einsum("tmk,km->t", self.G, S))
            num = np.einsum("tm,mt->t", gh.conj(), E)
        tot = q + tr
        return (q * xm + num) / tot, tot
