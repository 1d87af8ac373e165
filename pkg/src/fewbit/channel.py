"""Channel, pilot and frame generation for the block-fading uplink model."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import special

from .errors import DimensionMismatch, InvalidLength, QuadratureFailure
from .kernels import Constellation

_QUAD_NODES = 2048  # per side of the Laplacian peak
_PSD_TOL = 1e-6


@lru_cache(maxsize=None)
def _legendre01(n):
    x, w = special.roots_legendre(n)
    return (x + 1.0) / 2.0, w / 2.0


def laplacian_covariance(M: int, mean_angle: float, angle_spread: float) -> np.ndarray:
    """Spatial covariance of a half-wavelength ULA under a Laplacian angle spectrum.

    The angular density is ``exp(-sqrt(2)|theta-mean|/spread)`` restricted to
    ``mean +- pi/2`` and renormalised, so ``angle_spread`` is its standard
    deviation before truncation.
    """
    if M < 1:
        raise InvalidLength("M must be at least 1")
    if not 0.0 < angle_spread < math.pi / 2:
        raise ValueError("angle spread must lie in (0, pi/2)")
    x, w = _legendre01(_QUAD_NODES)
    half = math.pi / 2
    # the density has a kink at the mean, so integrate each side separately
    off = np.concatenate((-half * x[::-1], half * x))
    wts = np.concatenate((w[::-1], w)) * half
    dens = np.exp(-math.sqrt(2.0) * np.abs(off) / angle_spread)
    wts = wts * dens
    wts /= wts.sum()
    # lag l needs sum_j w_j z_j^l with z_j = exp(j pi sin(theta_j)); powers by
    # repeated unit-modulus products are as accurate as exp at these orders
    z = np.exp(1j * math.pi * np.sin(mean_angle + off))
    lags = np.empty(M, dtype=complex)
    v = wts.astype(complex)
    for lag in range(M):
        lags[lag] = v.sum()
        v *= z
    idx = np.arange(M)
    diff = idx[:, None] - idx[None, :]
    C = np.where(diff >= 0, lags[np.abs(diff)], np.conj(lags[np.abs(diff)]))
    return _project_psd(C)


def _project_psd(C):
    C = (C + C.conj().T) / 2.0
    lam, U = np.linalg.eigh(C)
    # small negative eigenvalues are quadrature rounding and get clipped
    if lam[0] < -_PSD_TOL * lam[-1]:
        raise QuadratureFailure("covariance quadrature is not positive semidefinite")
    lam = np.maximum(lam, 0.0)
    C = (U * lam) @ U.conj().T
    d = np.sqrt(np.real(np.diag(C)))
    C = C / d[:, None] / d[None, :]
    C = (C + C.conj().T) / 2.0
    np.fill_diagonal(C, 1.0)
    return C


def matrix_sqrt_psd(C: np.ndarray) -> np.ndarray:
    lam, U = np.linalg.eigh(C)
    return (U * np.sqrt(np.maximum(lam, 0.0))) @ U.conj().T


@dataclass
class ChannelModel:
    """Per-user spatial covariances; ``covs=None`` means i.i.d. Rayleigh."""

    M: int
    K: int
    covs: list | None = None
    _sqrt: list | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if self.M < 1 or self.K < 1:
            raise InvalidLength("M and K must be positive")
        if self.covs is not None:
            if len(self.covs) != self.K:
                raise DimensionMismatch("one covariance per user is required")
            for C in self.covs:
                if np.shape(C) != (self.M, self.M):
                    raise DimensionMismatch("covariance has the wrong shape")

    @property
    def iid(self) -> bool:
        return self.covs is None

    def covariances(self) -> list:
        if self.covs is None:
            return [np.eye(self.M) for _ in range(self.K)]
        return list(self.covs)

    def sqrt(self) -> list:
        if self._sqrt is None and self.covs is not None:
            self._sqrt = [matrix_sqrt_psd(C) for C in self.covs]
        return self._sqrt


def iid_model(M: int, K: int) -> ChannelModel:
    return ChannelModel(M, K, None)


def laplacian_model(M: int, K: int, angles, angle_spread: float) -> ChannelModel:
    return ChannelModel(M, K, [laplacian_covariance(M, a, angle_spread) for a in angles])


def complex_normal(rng: np.random.Generator, shape) -> np.ndarray:
    """Standard circular complex normal samples (unit total variance)."""
    z = rng.standard_normal(tuple(shape) + (2,))
    return (z[..., 0] + 1j * z[..., 1]) / math.sqrt(2.0)


def sample_channel(model: ChannelModel, rng: np.random.Generator) -> np.ndarray:
    W = complex_normal(rng, (model.K, model.M)).T
    if model.iid:
        return np.ascontiguousarray(W)
    S = model.sqrt()
    return np.stack([S[i] @ W[:, i] for i in range(model.K)], axis=1)


def build_pilots(K: int, T_p: int, power: float = 1.0) -> np.ndarray:
    """First ``K`` rows of the ``T_p``-point DFT matrix scaled by ``sqrt(power)``."""
    if T_p < K:
        raise InvalidLength(f"pilot length {T_p} is shorter than the number of users {K}")
    k = np.arange(K)[:, None]
    t = np.arange(T_p)[None, :]
    return math.sqrt(power) * np.exp(-2j * math.pi * ((k * t) % T_p) / T_p)


@dataclass(frozen=True)
class FrameRealization:
    H: np.ndarray
    Xp: np.ndarray
    Xd: np.ndarray
    Xd_idx: np.ndarray
    Rp: np.ndarray
    Rd: np.ndarray
    N0: float


def sample_frame(model: ChannelModel, cons: Constellation, T_p: int, T_d: int,
                 N0: float, rng: np.random.Generator, pilot_power: float = 1.0) -> FrameRealization:
    """Draw one frame.

    Channel, symbols and the two noise blocks come from independent child
    streams, and slot-indexed draws are made slot-major, so frames with a
    shorter ``T_d`` are prefixes of longer ones and the noise scales with
    ``sqrt(N0)`` over a fixed underlying draw.
    """
    seeds = rng.integers(0, 2**63, size=4)
    g_h, g_x, g_np, g_nd = (np.random.default_rng(int(s)) for s in seeds)
    H = sample_channel(model, g_h)
    Xp = build_pilots(model.K, T_p, pilot_power) if T_p > 0 else np.zeros((model.K, 0), complex)
    idx = g_x.choice(cons.size, size=(T_d, model.K), p=cons.priors).T
    Xd = cons.points[idx]
    sd = math.sqrt(N0)
    Np = complex_normal(g_np, (T_p, model.M)).T
    Nd = complex_normal(g_nd, (T_d, model.M)).T
    Rp = H @ Xp + sd * Np
    Rd = H @ Xd + sd * Nd
    return FrameRealization(H, Xp, Xd, np.ascontiguousarray(idx), Rp, Rd, float(N0))
