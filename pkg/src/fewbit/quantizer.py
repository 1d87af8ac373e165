"""Uniform b-bit scalar quantizer applied separately to real and imaginary parts."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidBits, InvalidStep
from .kernels import ComplexInterval, pack_complex

MAX_BITS = 12

# Step of the minimum-MSE uniform quantizer for a unit-variance real Gaussian.
_OPTIMAL_STEP = {1: 1.596, 2: 0.996, 3: 0.586, 4: 0.335, 5: 0.188}


@dataclass(frozen=True)
class QuantizerSpec:
    bits: int
    step: float
    thresholds: np.ndarray

    @property
    def levels(self) -> int:
        return 1 << self.bits


@dataclass(frozen=True)
class QuantizedBlock:
    """Quantizer outputs with the bounds of the bin each sample fell into.

    ``lo`` and ``up`` are complex arrays whose real and imaginary parts hold
    the per-dimension bounds (possibly infinite).
    """

    values: np.ndarray
    lo: np.ndarray
    up: np.ndarray

    @property
    def shape(self):
        return self.values.shape

    def column(self, t: int) -> "QuantizedBlock":
        return QuantizedBlock(self.values[:, t], self.lo[:, t], self.up[:, t])

    def interval(self, idx) -> ComplexInterval:
        lo, up = self.lo[idx], self.up[idx]
        return ComplexInterval(lo.real, up.real, lo.imag, up.imag)


def _check_bits(bits) -> int:
    if isinstance(bits, bool) or int(bits) != bits or not 1 <= bits <= MAX_BITS:
        raise InvalidBits(f"bits must be an integer in [1, {MAX_BITS}], got {bits!r}")
    return int(bits)


def build_quantizer(bits: int, step: float) -> QuantizerSpec:
    bits = _check_bits(bits)
    if not (step > 0.0 and math.isfinite(step)):
        raise InvalidStep(f"step must be positive and finite, got {step!r}")
    half = 1 << (bits - 1)
    k = np.arange(1, 2 * half)
    thresholds = (k - half) * float(step)
    return QuantizerSpec(bits, float(step), thresholds)


def _quantize_real(x, spec: QuantizerSpec):
    t = spec.thresholds
    # searchsorted 'left' gives the k with d_{k-1} < x <= d_k (right-closed bins)
    idx = np.searchsorted(t, x, side="left")
    half = 1 << (spec.bits - 1)
    value = (idx + 0.5 - half) * spec.step
    ext = np.concatenate(([-np.inf], t, [np.inf]))
    return value, ext[idx], ext[idx + 1]


def quantize(r, spec: QuantizerSpec) -> QuantizedBlock:
    r = np.asarray(r, dtype=complex)
    vr, lr, ur = _quantize_real(r.real, spec)
    vi, li, ui = _quantize_real(r.imag, spec)
    return QuantizedBlock(pack_complex(vr, vi), pack_complex(lr, li), pack_complex(ur, ui))


def optimal_step_factor(bits: int) -> float:
    bits = _check_bits(bits)
    if bits in _OPTIMAL_STEP:
        return _OPTIMAL_STEP[bits]
    return _OPTIMAL_STEP[5] / 2.0 ** (bits - 5)


def calibrate_step_size(rx_power: float, bits: int) -> float:
    """Step for a Gaussian input whose complex samples have power ``rx_power``."""
    if not (rx_power > 0.0 and math.isfinite(rx_power)):
        raise ValueError("rx_power must be positive and finite")
    return optimal_step_factor(bits) * math.sqrt(rx_power / 2.0)
