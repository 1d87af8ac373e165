import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fewbit import build_quantizer, calibrate_step_size, quantize
from fewbit.errors import InvalidBits, InvalidStep


@pytest.mark.parametrize("bits, step, expected", [
    (2, 1.0, [-1.0, 0.0, 1.0]),
    (1, 2.0, [0.0]),
    (3, 0.5, [-1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5]),
])
def test_thresholds(bits, step, expected):
    q = build_quantizer(bits, step)
    np.testing.assert_array_equal(q.thresholds, expected)


def test_thresholds_formula_exact_for_all_widths():
    for b in range(1, 13):
        q = build_quantizer(b, 0.3)
        k = np.arange(1, 2**b)
        assert np.array_equal(q.thresholds, (k - 2 ** (b - 1)) * 0.3)
        assert np.all(np.diff(q.thresholds) > 0)


@pytest.mark.parametrize("bits", [0, 13, -1, 2.5, True])
def test_bad_bits(bits):
    with pytest.raises(InvalidBits):
        build_quantizer(bits, 1.0)


@pytest.mark.parametrize("step", [0.0, -1.0, math.inf, math.nan])
def test_bad_step(step):
    with pytest.raises(InvalidStep):
        build_quantizer(2, step)


def test_interior_bin():
    out = quantize(np.array([0.3 + 0.3j]), build_quantizer(2, 1.0))
    assert out.values[0] == 0.5 + 0.5j
    assert out.lo[0] == 0 + 0j
    assert out.up[0] == 1 + 1j


def test_outer_bins():
    out = quantize(np.array([5 - 5j]), build_quantizer(1, 2.0))
    assert out.values[0] == 1 - 1j
    assert out.lo[0].real == 0.0 and out.lo[0].imag == -math.inf
    assert out.up[0].real == math.inf and out.up[0].imag == 0.0


def test_threshold_is_right_closed():
    out = quantize(np.array([0.0 + 1.0j]), build_quantizer(2, 1.0))
    assert out.values[0].real == -0.5
    assert (out.lo[0].real, out.up[0].real) == (-1.0, 0.0)
    assert (out.lo[0].imag, out.up[0].imag) == (0.0, 1.0)


def test_top_bin_value():
    q = build_quantizer(3, 0.25)
    out = quantize(np.array([100.0 + 100.0j]), q)
    assert out.values[0].real == (2**3 - 1) * 0.25 / 2
    assert out.up[0].real == math.inf


@pytest.mark.parametrize("power, bits, step", [(2.0, 1, 1.596), (2.0, 3, 0.586), (8.0, 1, 3.192)])
def test_calibrated_step(power, bits, step):
    assert calibrate_step_size(power, bits) == pytest.approx(step, rel=1e-12)


def test_step_table_extension():
    assert calibrate_step_size(2.0, 7) == pytest.approx(0.188 / 4)
    with pytest.raises(InvalidBits):
        calibrate_step_size(2.0, 13)


def test_step_table_matches_mse_minimisation():
    # one-dimensional sweep of the quantizer MSE for a unit normal input
    from scipy import integrate, optimize, stats

    def mse(step, bits):
        q = build_quantizer(bits, step)
        edges = np.concatenate(([-np.inf], q.thresholds, [np.inf]))
        total = 0.0
        for k in range(edges.size - 1):
            c = (k + 0.5 - 2 ** (bits - 1)) * step
            total += integrate.quad(lambda x: (x - c) ** 2 * stats.norm.pdf(x),
                                    edges[k], edges[k + 1])[0]
        return total

    for bits, ref in [(1, 1.596), (2, 0.996), (3, 0.586)]:
        best = optimize.minimize_scalar(mse, bounds=(0.05, 3.0), args=(bits,),
                                        method="bounded", options={"xatol": 1e-6}).x
        assert best == pytest.approx(ref, abs=2e-3)


finite = st.floats(-50, 50, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(re=finite, im=finite, bits=st.integers(1, 12), step=st.floats(0.01, 5.0))
def test_value_inside_bin_and_requantizes(re, im, bits, step):
    q = build_quantizer(bits, step)
    out = quantize(np.array([complex(re, im)]), q)
    v, lo, up = out.values[0], out.lo[0], out.up[0]
    for x, a, b in ((v.real, lo.real, up.real), (v.imag, lo.imag, up.imag)):
        assert a < x <= b or (b == math.inf and x > a)
    again = quantize(out.values, q)
    assert again.lo[0] == lo and again.up[0] == up
    assert again.values[0] == v
    # bounds are thresholds or infinite
    for bound in (lo.real, lo.imag, up.real, up.imag):
        assert math.isinf(bound) or bound in q.thresholds


@settings(max_examples=100, deadline=None)
@given(a=finite, b=finite, bits=st.integers(1, 6))
def test_monotone(a, b, bits):
    q = build_quantizer(bits, 0.7)
    lo, hi = sorted((a, b))
    out = quantize(np.array([lo, hi], dtype=complex), q)
    assert out.values[0].real <= out.values[1].real


@pytest.mark.xfail(strict=True, reason="the b>5 step rule fixes the clipping level at "
                   "16*0.188 = 3 standard deviations, so overload alone costs about 2%")
def test_transparent_at_twelve_bits(rng):
    r = (rng.standard_normal(20000) + 1j * rng.standard_normal(20000)) / math.sqrt(2)
    q = build_quantizer(12, calibrate_step_size(1.0, 12))
    err = np.linalg.norm(quantize(r, q).values - r) / np.linalg.norm(r)
    assert err < 1e-2


def test_twelve_bit_error_is_clipping_dominated(rng):
    r = (rng.standard_normal(20000) + 1j * rng.standard_normal(20000)) / math.sqrt(2)
    q = build_quantizer(12, calibrate_step_size(1.0, 12))
    y = quantize(r, q).values
    inside = (np.abs(r.real) < q.thresholds[-1]) & (np.abs(r.imag) < q.thresholds[-1])
    # granular error is far below 1e-2; what remains is overload
    assert np.linalg.norm((y - r)[inside]) / np.linalg.norm(r[inside]) < 1e-3
