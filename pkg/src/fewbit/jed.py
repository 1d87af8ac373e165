"""Joint channel estimation and data detection from quantized pilots and data.

The frame has ``T_p`` pilot slots with known symbols and ``T_d`` data slots.
The engine alternates, in this order: pilot precision and pilot-slot
quantized signals; data precision(s) and data-slot quantized signals; one
Gaussian factor per user channel; one discrete factor per data symbol.

Two residual blocks are maintained incrementally, ``E_p = R_p - H X_p`` and
``E_d = R_d - H X_d`` in posterior means, so no update ever recomputes a full
matrix product.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import linalg
from scipy.linalg import lapack

from .errors import DimensionMismatch, InvalidLength, SingularCovariance
from .kernels import (CdfMode, Constellation, DiscretePosterior, discrete_posterior,
                      hard_decision, sequential_update, truncated_moments)
from .precision import (MatrixPrecision, ScalarPrecision, capped_ratio,
                        hermitian_inverse)
from .quantizer import QuantizedBlock


class JedAlgorithm(str, enum.Enum):
    MFJED = "mf-qvb-jed"
    LMMSEJED = "lmmse-qvb-jed"
    CONVJED = "conv-qvb-jed"


@dataclass(frozen=True)
class JedOptions:
    algorithm: JedAlgorithm = JedAlgorithm.MFJED
    lite: bool = True
    max_iters: int = 50
    cdf_mode: CdfMode = CdfMode.LOGISTIC_PLUGIN
    early_stop_tol: float = 0.0

    def __post_init__(self):
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise ValueError("max_iters must be a positive integer")
        object.__setattr__(self, "cdf_mode", CdfMode(self.cdf_mode))
        object.__setattr__(self, "algorithm", JedAlgorithm(self.algorithm))


# ---------------------------------------------------------------- channel factors

@dataclass
class ChannelPosterior:
    """Gaussian factor of one user's channel.

    The covariance is kept as ``U diag(d) U^H`` (``U=None`` meaning the
    identity) when it commutes with the prior, and as a dense matrix
    otherwise.
    """

    mean: np.ndarray
    d: np.ndarray | None = None
    U: np.ndarray | None = None
    dense: np.ndarray | None = None

    @property
    def trace(self) -> float:
        if self.dense is not None:
            return float(np.real(np.trace(self.dense)))
        return float(np.sum(self.d))

    @property
    def cov(self) -> np.ndarray:
        if self.dense is None:
            if self.U is None:
                self.dense = np.diag(self.d).astype(complex)
            else:
                self.dense = (self.U * self.d) @ self.U.conj().T
        return self.dense


class ChannelPrior:
    """Zero-mean Gaussian prior ``CN(0, C)`` on one user's channel.

    Diagonal covariances are handled elementwise.  Otherwise the prior is
    eigendecomposed once; the posterior covariance
    ``(G + C^{-1})^{-1}`` is formed as ``S (S G S + I)^{-1} S`` with
    ``S = C^{1/2}``, which never inverts ``C`` and stays valid when ``C`` is
    rank deficient.
    """

    def __init__(self, C, force_general: bool = False):
        C = np.asarray(C, dtype=complex)
        if C.ndim != 2 or C.shape[0] != C.shape[1]:
            raise DimensionMismatch("covariance must be square")
        self.C = C
        self.M = C.shape[0]
        off = C - np.diag(np.diag(C))
        self.diagonal = not force_general and not np.any(off)
        if self.diagonal:
            self.c = np.real(np.diag(C)).copy()
            self.S = None
        else:
            lam, U = np.linalg.eigh(C)
            self.lam = np.maximum(lam, 0.0)
            self.U = U
            self.S = (U * np.sqrt(self.lam)) @ U.conj().T

    def initial(self) -> ChannelPosterior:
        h = np.zeros(self.M, dtype=complex)
        if self.diagonal:
            return ChannelPosterior(h, d=self.c.copy())
        return ChannelPosterior(h, d=self.lam.copy(), U=self.U)

    def posterior(self, G, b) -> ChannelPosterior:
        """Factor with precision ``G`` (scalar or matrix) and ``G k = b``."""
        if np.ndim(G) == 0:
            g = float(G)
            if self.diagonal:
                d = self.c / (g * self.c + 1.0)
                return ChannelPosterior(d * b, d=d)
            d = self.lam / (g * self.lam + 1.0)
            h = self.U @ (d * (self.U.conj().T @ b))
            return ChannelPosterior(h, d=d, U=self.U)
        S = np.diag(np.sqrt(self.c)).astype(complex) if self.diagonal else self.S
        A = S @ G @ S
        A = (A + A.conj().T) / 2.0
        A[np.diag_indices_from(A)] += 1.0
        L, info = lapack.zpotrf(A, lower=1, clean=1)
        if info != 0:
            raise SingularCovariance("channel precision is not positive definite")
        # S (L L^H)^{-1} S = W^H W with W = L^{-1} S
        W = linalg.solve_triangular(L, S, lower=True, check_finite=False)
        Sig = W.conj().T @ W
        Sig = (Sig + Sig.conj().T) / 2.0
        return ChannelPosterior(Sig @ b, dense=Sig)


# ---------------------------------------------------------------- state

@dataclass
class JedState:
    Rp_mean: np.ndarray
    Rp_var: np.ndarray
    Rd_mean: np.ndarray
    Rd_var: np.ndarray
    Rd_loc: np.ndarray
    Rd_prec: np.ndarray
    h_post: list
    Xd_mean: np.ndarray
    Xd_var: np.ndarray
    Xd_x2: np.ndarray
    Xd_probs: np.ndarray
    gamma_p: float
    data_precision: ScalarPrecision | MatrixPrecision | None
    Ep: np.ndarray
    Ed: np.ndarray

    @property
    def H_mean(self) -> np.ndarray:
        return np.stack([p.mean for p in self.h_post], axis=1)

    def h_cov(self, i: int) -> np.ndarray:
        return self.h_post[i].cov


@dataclass
class JedResult:
    H_hat: np.ndarray
    Xd_hat: np.ndarray
    Xd_idx: np.ndarray
    soft: DiscretePosterior
    iters_run: int
    final_state: JedState = field(repr=False)


# ---------------------------------------------------------------- updates

def _slot_energy(st: JedState, traces, hnorms):
    """Per data slot ``E||r_t - H x_t||^2``."""
    return (np.sum(np.abs(st.Ed) ** 2, axis=0) + np.sum(st.Rd_var, axis=0)
            + traces @ st.Xd_x2 + hnorms @ st.Xd_var)


def _pilot_precision(st: JedState, Xp, traces):
    M, Tp = st.Ep.shape
    energy = (np.sum(np.abs(st.Ep) ** 2) + np.sum(st.Rp_var)
              + np.dot(np.sum(np.abs(Xp) ** 2, axis=1), traces))
    return float(capped_ratio(M * Tp, energy))


def _data_precision(st: JedState, matrix: bool, lite: bool):
    M, Td = st.Ed.shape
    traces = np.array([p.trace for p in st.h_post])
    Hm = st.H_mean
    if not matrix:
        hnorms = np.sum(np.abs(Hm) ** 2, axis=0)
        q = _slot_energy(st, traces, hnorms)
        if lite:
            return ScalarPrecision(np.full(Td, float(capped_ratio(M * Td, np.sum(q)))))
        return ScalarPrecision(capped_ratio(M, q))
    covs = np.stack([p.cov for p in st.h_post])  # (K, M, M)
    eye = np.eye(M, dtype=complex)
    if lite:
        A = (np.sum(np.abs(st.Ed) ** 2) / M) * eye
        A[np.diag_indices(M)] += np.sum(st.Rd_var, axis=1)
        A += np.einsum("k,kmn->mn", np.sum(st.Xd_x2, axis=1), covs)
        A += (Hm * np.sum(st.Xd_var, axis=1)) @ Hm.conj().T
        return MatrixPrecision(Td * hermitian_inverse(A)[None], shared=True)
    A = (np.sum(np.abs(st.Ed) ** 2, axis=0) / M)[:, None, None] * eye
    idx = np.arange(M)
    A[:, idx, idx] += st.Rd_var.T
    A += np.einsum("kt,kmn->tmn", st.Xd_x2, covs)
    A += np.einsum("mk,kt,nk->tmn", Hm, st.Xd_var, Hm.conj())
    return MatrixPrecision(hermitian_inverse(A))


def channel_update(P, gamma_p, Xp_row, Ep, Ed, x_mean, x_var, x2, prior: ChannelPrior,
                   h_current) -> ChannelPosterior:
    """Gaussian factor of one user's channel given all other factors.

    Uses the residual form: contributions of the user itself are added back
    to the residual blocks analytically rather than recomputed.
    """
    a = gamma_p * float(np.sum(np.abs(Xp_row) ** 2))
    G = P.channel_precision(a, x2)
    pil = gamma_p * (Ep @ Xp_row.conj())
    b = P.channel_rhs(G, x_var, h_current, pil, Ed, x_mean.conj())
    return prior.posterior(G, b)


def channel_posterior_mf(gamma_p, gamma_d, Xp, Xd_mean, Xd_var, Xd_x2, Ep, Ed, C, h_mean,
                         user: int):
    """Matched-filter channel factor of ``user``: returns ``(mean, cov)``.

    ``gamma_d`` holds one precision per data slot; ``h_mean`` is the current
    ``M x K`` channel mean that the residuals ``Ep`` and ``Ed`` refer to.
    """
    Xp = np.atleast_2d(Xp)
    P = ScalarPrecision(np.asarray(gamma_d, dtype=float).reshape(-1))
    prior = C if isinstance(C, ChannelPrior) else ChannelPrior(C)
    post = channel_update(P, float(gamma_p), Xp[user], Ep, Ed, Xd_mean[user], Xd_var[user],
                          Xd_x2[user], prior, h_mean[:, user])
    return post.mean, post.cov




# ---------------------------------------------------------------- engine

def _run(Yp: QuantizedBlock, Yd: QuantizedBlock, Xp, Cs, cons: Constellation, opts: JedOptions,
         N0: float | None = None, callback: Callable | None = None, isotropic: bool = False):
    Xp = np.atleast_2d(np.asarray(Xp, dtype=complex))
    K, Tp = Xp.shape
    yp = np.asarray(Yp.values, dtype=complex)
    yd = np.asarray(Yd.values, dtype=complex)
    if yp.ndim != 2 or yd.ndim != 2 or yp.shape[0] != yd.shape[0] or yp.shape[1] != Tp:
        raise DimensionMismatch("pilot/data blocks do not match the pilot matrix")
    M, Td = yd.shape
    if Tp < 1 or Td < 1:
        raise InvalidLength("pilot and data blocks must both be non-empty")
    if len(Cs) != K:
        raise DimensionMismatch("one channel covariance per user is required")
    priors = [c if isinstance(c, ChannelPrior) else ChannelPrior(c) for c in Cs]
    if any(p.M != M for p in priors):
        raise DimensionMismatch("covariance size does not match the antenna count")
    lop, upp = np.asarray(Yp.lo), np.asarray(Yp.up)
    lod, upd = np.asarray(Yd.lo), np.asarray(Yd.up)
    alg = opts.algorithm
    mode = opts.cdf_mode
    conv = alg is JedAlgorithm.CONVJED
    matrix = alg is JedAlgorithm.LMMSEJED and not isotropic
    sequential = alg is JedAlgorithm.LMMSEJED
    x2_init = cons.modulus2 if cons.modulus2 is not None else cons.variance
    st = JedState(
        Rp_mean=yp.copy(), Rp_var=np.zeros((M, Tp)),
        Rd_mean=yd.copy(), Rd_var=np.zeros((M, Td)),
        Rd_loc=yd.copy(), Rd_prec=np.full((M, Td), np.inf),
        h_post=[p.initial() for p in priors],
        Xd_mean=np.zeros((K, Td), dtype=complex),
        Xd_var=np.full((K, Td), cons.variance),
        Xd_x2=np.full((K, Td), x2_init),
        Xd_probs=np.broadcast_to(cons.priors, (K, Td, cons.size)).copy(),
        gamma_p=float("nan"), data_precision=None,
        Ep=yp.copy(), Ed=yd.copy(),
    )
    notify = callback or (lambda stage, state: None)
    if conv:
        if not (N0 is not None and N0 > 0 and math.isfinite(N0)):
            raise ValueError("a positive N0 is required for fixed precisions")
        fixed_p = 1.0 / N0
        fixed_d = ScalarPrecision(np.full(Td, 1.0 / N0))
    iters = 0
    for it in range(opts.max_iters):
        iters = it + 1
        x_before = st.Xd_mean.copy()
        traces = np.array([p.trace for p in st.h_post])
        # pilot slots
        st.gamma_p = fixed_p if conv else _pilot_precision(st, Xp, traces)
        notify("gamma_p", st)
        s = st.Rp_mean - st.Ep
        new, var = truncated_moments(s, st.gamma_p, lop, upp, mode)
        st.Ep += new - st.Rp_mean
        st.Rp_mean, st.Rp_var = new, var
        notify("r_p", st)
        # data slots
        P = fixed_d if conv else _data_precision(st, matrix, opts.lite)
        st.data_precision = P
        notify("precision_d", st)
        if sequential and P.is_matrix:
            sequential_update(P.G, st.Ed, st.Rd_mean, st.Rd_var, st.Rd_loc, st.Rd_prec,
                              lod, upd, mode)
        else:
            s = st.Rd_mean - st.Ed
            new, var = truncated_moments(s, P.gamma[None, :], lod, upd, mode)
            st.Ed += new - st.Rd_mean
            st.Rd_mean, st.Rd_var, st.Rd_loc = new, var, s
            st.Rd_prec = np.broadcast_to(P.gamma, (M, Td)).copy()
        notify("r_d", st)
        # channels
        for i in range(K):
            old = st.h_post[i].mean
            post = channel_update(P, st.gamma_p, Xp[i], st.Ep, st.Ed, st.Xd_mean[i],
                                  st.Xd_var[i], st.Xd_x2[i], priors[i], old)
            dh = old - post.mean
            st.Ep += np.outer(dh, Xp[i])
            st.Ed += np.outer(dh, st.Xd_mean[i])
            st.h_post[i] = post
            notify(("h", i), st)
        # data symbols
        for i in range(K):
            hp = st.h_post[i]
            z, prec = P.symbol_filter(hp.mean, hp, st.Ed, st.Xd_mean[i])
            post = discrete_posterior(z, prec, cons)
            st.Ed += np.outer(hp.mean, st.Xd_mean[i] - post.mean)
            st.Xd_mean[i], st.Xd_var[i], st.Xd_probs[i] = post.mean, post.var, post.probs
            if cons.modulus2 is None:
                st.Xd_x2[i] = post.second_moment
            notify(("x", i), st)
        if opts.early_stop_tol > 0 and np.max(np.abs(st.Xd_mean - x_before)) < opts.early_stop_tol:
            break
    idx = hard_decision(st.Xd_probs)
    soft = DiscretePosterior(st.Xd_probs, st.Xd_mean, st.Xd_var, st.Xd_x2)
    return JedResult(st.H_mean, cons.points[idx], idx, soft, iters, st)


def mf_qvb_jed(Yp, Yd, Xp, Cs, cons, opts: JedOptions | None = None, callback=None) -> JedResult:
    """Matched-filter JED with learned scalar precisions."""
    opts = opts or JedOptions(algorithm=JedAlgorithm.MFJED)
    if opts.algorithm is not JedAlgorithm.MFJED:
        opts = JedOptions(JedAlgorithm.MFJED, opts.lite, opts.max_iters, opts.cdf_mode,
                          opts.early_stop_tol)
    return _run(Yp, Yd, Xp, Cs, cons, opts, callback=callback)


def lmmse_qvb_jed(Yp, Yd, Xp, Cs, cons, opts: JedOptions | None = None, callback=None,
                  isotropic: bool = False) -> JedResult:
    """LMMSE JED with a learned precision matrix for the data slots.

    ``isotropic=True`` swaps the matrix estimate for the scalar one while
    keeping the per-antenna update order.
    """
    opts = opts or JedOptions(algorithm=JedAlgorithm.LMMSEJED)
    if opts.algorithm is not JedAlgorithm.LMMSEJED:
        opts = JedOptions(JedAlgorithm.LMMSEJED, opts.lite, opts.max_iters, opts.cdf_mode,
                          opts.early_stop_tol)
    return _run(Yp, Yd, Xp, Cs, cons, opts, callback=callback, isotropic=isotropic)


def conv_qvb_jed(Yp, Yd, Xp, Cs, cons, N0: float, opts: JedOptions | None = None,
                 callback=None) -> JedResult:
    """JED with every precision fixed to ``1/N0``."""
    opts = opts or JedOptions(algorithm=JedAlgorithm.CONVJED)
    if opts.algorithm is not JedAlgorithm.CONVJED:
        opts = JedOptions(JedAlgorithm.CONVJED, opts.lite, opts.max_iters, opts.cdf_mode,
                          opts.early_stop_tol)
    return _run(Yp, Yd, Xp, Cs, cons, opts, N0=N0, callback=callback)


def run_jed(Yp, Yd, Xp, Cs, cons, N0, opts: JedOptions) -> JedResult:
    if opts.algorithm is JedAlgorithm.CONVJED:
        return conv_qvb_jed(Yp, Yd, Xp, Cs, cons, N0, opts)
    if opts.algorithm is JedAlgorithm.LMMSEJED:
        return lmmse_qvb_jed(Yp, Yd, Xp, Cs, cons, opts)
    return mf_qvb_jed(Yp, Yd, Xp, Cs, cons, opts)
