"""Variational detectors for quantized observations with known channel.

All detectors process a block of ``T`` independent columns at once; each
column is an independent single-slot detection problem and gets its own
noise precision.  Within a column the updates run in the order of the
coordinate-ascent sweep: precision, then the quantized-signal block, then
the users one at a time.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .errors import DimensionMismatch, InvalidState, ZeroColumn
from .kernels import (CdfMode, Constellation, DiscretePosterior, discrete_posterior,
                      hard_decision, sequential_update, truncated_moments,
                      truncated_normal_entropy)
from .precision import (MatrixPrecision, ScalarPrecision, capped_ratio,
                        hermitian_inverse)
from .quantizer import QuantizedBlock

_LOG_FLOOR = 1e-300


class Algorithm(str, enum.Enum):
    MFQVB = "mf-qvb"
    LMMSEQVB = "lmmse-qvb"
    CONVQVB = "conv-qvb"


@dataclass(frozen=True)
class DetectorOptions:
    max_iters: int = 50
    cdf_mode: CdfMode = CdfMode.LOGISTIC_PLUGIN
    early_stop_tol: float = 0.0
    algorithm: Algorithm = Algorithm.MFQVB

    def __post_init__(self):
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise ValueError("max_iters must be a positive integer")
        object.__setattr__(self, "cdf_mode", CdfMode(self.cdf_mode))
        object.__setattr__(self, "algorithm", Algorithm(self.algorithm))


@dataclass
class CsirState:
    """Variational state for a block of columns.

    ``r_loc`` and ``r_prec`` are the location and precision of the truncated
    Gaussian factor for each quantized sample; ``r_prec`` is infinite while
    the factor is still the initial point mass.
    """

    r_mean: np.ndarray
    r_var: np.ndarray
    r_loc: np.ndarray
    r_prec: np.ndarray
    x_mean: np.ndarray
    x_var: np.ndarray
    x_probs: np.ndarray
    precision: ScalarPrecision | MatrixPrecision | None
    residual: np.ndarray

    def copy(self) -> "CsirState":
        return replace(self, **{k: np.copy(v) for k, v in self.__dict__.items()
                                if isinstance(v, np.ndarray)})


@dataclass
class DetectionResult:
    hard: np.ndarray
    hard_idx: np.ndarray
    soft: DiscretePosterior
    iters_run: int
    final_state: CsirState = field(repr=False)


def _as_block(obs: QuantizedBlock):
    vals = np.asarray(obs.values, dtype=complex)
    single = vals.ndim == 1
    if single:
        return (vals[:, None], np.asarray(obs.lo)[:, None], np.asarray(obs.up)[:, None]), True
    return (vals, np.asarray(obs.lo), np.asarray(obs.up)), False


def _check_inputs(vals, H):
    H = np.asarray(H, dtype=complex)
    if H.ndim != 2 or H.shape[0] != vals.shape[0]:
        raise DimensionMismatch("H must have one row per antenna")
    if np.any(np.sum(np.abs(H) ** 2, axis=0) == 0.0):
        raise ZeroColumn("channel matrix has an all-zero column")
    return H


def init_state(vals, K, cons: Constellation) -> CsirState:
    M, T = vals.shape
    prior_var = cons.variance
    return CsirState(
        r_mean=vals.copy(),
        r_var=np.zeros((M, T)),
        r_loc=vals.copy(),
        r_prec=np.full((M, T), np.inf),
        x_mean=np.zeros((K, T), dtype=complex),
        x_var=np.full((K, T), prior_var),
        x_probs=np.broadcast_to(cons.priors, (K, T, cons.size)).copy(),
        precision=None,
        residual=vals.copy(),
    )


def expected_residual_energy(st: CsirState, H) -> np.ndarray:
    """Per-column ``E||r - Hx||^2`` under the current factors."""
    hn = np.sum(np.abs(H) ** 2, axis=0)
    return (np.sum(np.abs(st.residual) ** 2, axis=0) + np.sum(st.r_var, axis=0)
            + hn @ st.x_var)


# ---------------------------------------------------------------- precision steps

def _scalar_mstep(st, H):
    M = H.shape[0]
    return ScalarPrecision(capped_ratio(M, expected_residual_energy(st, H)))


def _fixed(N0):
    def step(st, H):
        return ScalarPrecision(np.full(st.residual.shape[1], 1.0 / N0))
    return step


def _matrix_mstep(st, H):
    M, T = st.residual.shape
    e = st.residual
    base = (np.sum(np.abs(e) ** 2, axis=0) / M)[:, None] + st.r_var.T  # (T, M)
    A = (H[None, :, :] * st.x_var.T[:, None, :]) @ H.conj().T
    idx = np.arange(M)
    A[:, idx, idx] += base
    # the diagonal part bounds the spectrum from below
    return MatrixPrecision(hermitian_inverse(A, floor=np.min(base, axis=1)))


# ---------------------------------------------------------------- engine

def _run(obs, H, cons, opts: DetectorOptions, mstep, sequential: bool,
         callback: Callable | None = None) -> DetectionResult:
    (vals, lo, up), single = _as_block(obs)
    H = _check_inputs(vals, H)
    M, K = H.shape
    mode = opts.cdf_mode
    st = init_state(vals, K, cons)
    e = st.residual
    notify = callback or (lambda stage, state: None)
    iters = 0
    for it in range(opts.max_iters):
        iters = it + 1
        x_before = st.x_mean.copy()
        P = mstep(st, H)
        st.precision = P
        notify("precision", st)
        if sequential and P.is_matrix:
            sequential_update(P.G, e, st.r_mean, st.r_var, st.r_loc, st.r_prec, lo, up, mode)
        else:
            # with a scalar precision the antenna order is immaterial
            g = np.broadcast_to(P.gamma, (M, P.gamma.size))
            s = st.r_mean - e
            new, var = truncated_moments(s, g, lo, up, mode)
            e += new - st.r_mean
            st.r_mean, st.r_var, st.r_loc, st.r_prec = new, var, s, g.copy()
        notify("r", st)
        P.prepare(H)
        for i in range(K):
            zinc, prec = P.filter(i, H, e)
            post = discrete_posterior(st.x_mean[i] + zinc, prec, cons)
            e += np.outer(H[:, i], st.x_mean[i] - post.mean)
            st.x_mean[i], st.x_var[i], st.x_probs[i] = post.mean, post.var, post.probs
            notify(("x", i), st)
        if opts.early_stop_tol > 0 and np.max(np.abs(st.x_mean - x_before)) < opts.early_stop_tol:
            break
    idx = hard_decision(st.x_probs)
    second = (np.full(st.x_mean.shape, cons.modulus2) if cons.modulus2 is not None
              else np.abs(st.x_mean) ** 2 + st.x_var)
    soft = DiscretePosterior(st.x_probs, st.x_mean, st.x_var, second)
    hard = cons.points[idx]
    if single:
        soft = DiscretePosterior(st.x_probs[:, 0], st.x_mean[:, 0], st.x_var[:, 0], second[:, 0])
        hard, idx = hard[:, 0], idx[:, 0]
    return DetectionResult(hard, idx, soft, iters, st)


def mf_qvb_detect(obs: QuantizedBlock, H, cons: Constellation, N0_hint=None,
                  opts: DetectorOptions | None = None, callback=None) -> DetectionResult:
    """Matched-filter detector with a learned scalar noise precision."""
    opts = opts or DetectorOptions()
    return _run(obs, H, cons, opts, _scalar_mstep, False, callback)


def lmmse_qvb_detect(obs: QuantizedBlock, H, cons: Constellation,
                     opts: DetectorOptions | None = None, callback=None,
                     isotropic: bool = False) -> DetectionResult:
    """LMMSE-filter detector with a learned precision matrix.

    ``isotropic=True`` replaces the matrix estimate by the scalar estimate
    times the identity while keeping the per-antenna update order.
    """
    opts = opts or DetectorOptions(algorithm=Algorithm.LMMSEQVB)
    mstep = _scalar_mstep if isotropic else _matrix_mstep
    return _run(obs, H, cons, opts, mstep, True, callback)


def conv_qvb_detect(obs: QuantizedBlock, H, cons: Constellation, N0: float,
                    opts: DetectorOptions | None = None, callback=None) -> DetectionResult:
    """Matched-filter detector with the precision fixed to ``1/N0``."""
    if not (N0 > 0.0 and math.isfinite(N0)):
        raise ValueError("N0 must be positive and finite")
    opts = opts or DetectorOptions(algorithm=Algorithm.CONVQVB)
    return _run(obs, H, cons, opts, _fixed(N0), False, callback)


def detect(obs, H, cons, N0, opts: DetectorOptions) -> DetectionResult:
    if opts.algorithm is Algorithm.MFQVB:
        return mf_qvb_detect(obs, H, cons, N0, opts)
    if opts.algorithm is Algorithm.LMMSEQVB:
        return lmmse_qvb_detect(obs, H, cons, opts)
    return conv_qvb_detect(obs, H, cons, N0, opts)


# ---------------------------------------------------------------- ELBO

def elbo(state: CsirState, obs: QuantizedBlock, H, cons: Constellation) -> float:
    """Evidence lower bound of the scalar-precision model, summed over columns.

    Samples whose factor is still a point mass (before the first update) are
    treated as observed and contribute no entropy.
    """
    (vals, lo, up), _ = _as_block(obs)
    H = np.asarray(H, dtype=complex)
    P = state.precision
    if not isinstance(P, ScalarPrecision):
        raise InvalidState("the bound is defined for a scalar precision")
    r = state.r_mean.reshape(vals.shape)
    if np.any(r.real <= lo.real) or np.any(r.real > up.real) or \
            np.any(r.imag <= lo.imag) or np.any(r.imag > up.imag):
        raise InvalidState("r_mean lies outside its quantization bin")
    M = H.shape[0]
    gamma = P.gamma
    total = np.sum(M * np.log(gamma / np.pi) - gamma * expected_residual_energy(state, H))
    live = np.isfinite(state.r_prec) & (state.r_var > 0)
    if np.any(live):
        total += np.sum(truncated_normal_entropy(state.r_loc[live], state.r_prec[live],
                                                 lo[live], up[live]))
    q = state.x_probs
    logq = np.log(np.maximum(q, _LOG_FLOOR))
    with np.errstate(invalid="ignore"):
        cross = np.where(q > 0, q * cons.log_priors, 0.0)
    total += np.sum(cross) - np.sum(q * logq)
    return float(total)
