"""Acceptance criteria 1-12 at their full instance and frame counts.

Each test prints one ``PASS``/``FAIL`` line as it finishes, and the whole
block is repeated in the terminal summary.  Tolerances are pinned below and
must not be relaxed to make a criterion pass.
"""

import math

import numpy as np
import pytest

from fewbit import (ChannelPrior, JedOptions, build_quantizer, calibrate_step_size,
                    channel_posterior_mf, conv_qvb_jed, laplacian_model, lmmse_qvb_detect,
                    lmmse_qvb_jed, mf_qvb_detect, mf_qvb_jed, parse_config, qam, qpsk, quantize,
                    run_jed, run_sweep, sample_frame, snr_to_noise_var)
from fewbit import jed as jed_mod
from fewbit import verify as V

from .conftest import ACCEPTANCE, cn

# pinned tolerances and counts
MOMENT_INSTANCES = 10_000
MOMENT_TOL = 1e-6
QUADFORM_INSTANCES = 100
QUADFORM_TOL = 0.01
ELBO_INSTANCES = 100
ELBO_TOL = 1e-9
MAP_FRAMES = 1000
TREND_FRAMES = 2000
SHORTCUT_TOL = 1e-10
DIAGONAL_TOL = 1e-12
STRUCTURE_INSTANCES = 100

assert (V.MOMENT_TOL, V.QUADFORM_TOL, V.ELBO_TOL) == (MOMENT_TOL, QUADFORM_TOL, ELBO_TOL)


def _report(request, number, title, checks):
    ok = all(c.passed for c in checks)
    detail = "; ".join(c.line() for c in checks)
    line = f"{'PASS' if ok else 'FAIL'} criterion {number:2d} ({title}): {detail}"
    ACCEPTANCE[number] = line
    tr = request.config.pluginmanager.getplugin("terminalreporter")
    if tr is not None:
        tr.write_line("")
        tr.write_line(line)
    return ok


def test_criterion_01_moment_quadrature(request):
    checks = V.suite_moments(count=MOMENT_INSTANCES)
    assert _report(request, 1, "moment kernels vs quadrature", checks)


def test_criterion_02_quadratic_form_monte_carlo(request):
    checks = V.suite_quadform(count=QUADFORM_INSTANCES)
    assert _report(request, 2, "expected quadratic form vs Monte Carlo", checks)


def test_criterion_03_elbo_monotone(request):
    checks = V.suite_elbo(count=ELBO_INSTANCES)
    assert _report(request, 3, "ELBO monotone under exact-normal MF-QVB", checks)


def test_criterion_04_map_dominance(request):
    checks, _ = V.map_dominance(frames=MAP_FRAMES)
    # the agreement rate is a detector example, not part of this criterion
    checks = [c for c in checks if c.name != "mf-agrees-with-map@10dB"]
    assert _report(request, 4, "exhaustive MAP dominates", checks)


@pytest.mark.slow
def test_criterion_05_conv_degradation(request):
    checks, _ = V.check_conv_degradation(trials=TREND_FRAMES, workers=1)
    assert _report(request, 5, "conv-QVB degraded at 30 dB", checks)


@pytest.mark.slow
def test_criterion_06_lmmse_advantage(request):
    checks, _ = V.check_lmmse_advantage(trials=TREND_FRAMES, workers=1)
    assert _report(request, 6, "LMMSE-QVB beats MF-QVB on correlated channels", checks)


@pytest.mark.slow
def test_criterion_07_jed_ordering(request):
    checks, _ = V.check_jed_ordering(trials=TREND_FRAMES, workers=1)
    assert _report(request, 7, "JED ordering at 30 dB", checks)


@pytest.mark.slow
def test_criterion_08_resolution(request):
    checks, _ = V.check_bits_trend(trials=TREND_FRAMES, workers=1)
    assert _report(request, 8, "SER vs ADC resolution", checks)


@pytest.mark.slow
def test_criterion_09_frame_length(request):
    checks, _ = V.check_td_trend(trials=TREND_FRAMES, workers=1)
    assert _report(request, 9, "SER vs data length", checks)


def _jed_problem(seed, K=16, M=64, Tp=32, Td=100, snr_db=10.0, bits=3):
    model = laplacian_model(M, K, np.random.default_rng(seed).uniform(-1.0, 1.0, K),
                            10 * math.pi / 180)
    N0 = snr_to_noise_var(snr_db, K)
    f = sample_frame(model, qpsk(), Tp, Td, N0, np.random.default_rng(seed))
    q = build_quantizer(bits, calibrate_step_size(K + N0, bits))
    return f, quantize(f.Rp, q), quantize(f.Rd, q), model.covariances(), N0


def test_criterion_10_psk_second_moment(request):
    bad = []
    updates = 0
    for seed in range(3):
        f, Yp, Yd, Cs, N0 = _jed_problem(seed)
        for alg in ("mf-qvb-jed", "lmmse-qvb-jed", "conv-qvb-jed"):
            for lite in (True, False):
                def cb(stage, st, alg=alg):
                    nonlocal updates
                    updates += 1
                    if not np.all(st.Xd_x2 == 1.0):
                        bad.append((seed, alg, stage))
                opts = JedOptions(algorithm=alg, lite=lite)
                if alg == "mf-qvb-jed":
                    res = mf_qvb_jed(Yp, Yd, f.Xp, Cs, qpsk(), opts, callback=cb)
                elif alg == "lmmse-qvb-jed":
                    res = lmmse_qvb_jed(Yp, Yd, f.Xp, Cs, qpsk(), opts, callback=cb)
                else:
                    res = conv_qvb_jed(Yp, Yd, f.Xp, Cs, qpsk(), N0, opts, callback=cb)
                if not np.all(res.soft.second_moment == 1.0):
                    bad.append((seed, alg, "result"))
    check = V.Check("psk", "second-moment-exactly-one", not bad,
                    f"{updates} stored updates over 18 full QPSK JED runs, "
                    f"{len(bad)} with a value other than 1", bad[0][0] if bad else None)
    assert _report(request, 10, "PSK second moment", [check])


def _direct_channel_mean(i, gp, gd, Xp, Rp, Xm, X2, Rd, Hm, C):
    M, K = Hm.shape
    gi = gp * np.sum(np.abs(Xp[i]) ** 2) + np.sum(gd * X2[i])
    b = np.zeros(M, complex)
    for t in range(Xp.shape[1]):
        b += gp * np.conj(Xp[i, t]) * (Rp[:, t] - sum(Hm[:, j] * Xp[j, t]
                                                      for j in range(K) if j != i))
    for t in range(Xm.shape[1]):
        b += gd[t] * np.conj(Xm[i, t]) * (Rd[:, t] - sum(Hm[:, j] * Xm[j, t]
                                                         for j in range(K) if j != i))
    return np.linalg.solve(gi * np.eye(M) + np.linalg.inv(C), b)


def _forbid(*args, **kwargs):
    raise AssertionError("inversion on the diagonal path")


def test_criterion_11_structural_equivalences(request, monkeypatch):
    checks = []
    # isotropic LMMSE reproduces MF exactly, for detection and for JED
    mismatched = []
    for seed in range(STRUCTURE_INSTANCES):
        rng = np.random.default_rng(seed)
        K, M, T = int(rng.integers(1, 5)), int(rng.integers(2, 9)), int(rng.integers(1, 4))
        cons = qpsk() if seed % 2 else qam(16)
        N0 = snr_to_noise_var(rng.uniform(0, 30), K)
        H = cn(rng, (M, K))
        R = H @ cons.points[rng.integers(0, cons.size, (K, T))] + math.sqrt(N0) * cn(rng, (M, T))
        bits = int(rng.integers(1, 5))
        Y = quantize(R, build_quantizer(bits, calibrate_step_size(K + N0, bits)))
        a, b = mf_qvb_detect(Y, H, cons), lmmse_qvb_detect(Y, H, cons, isotropic=True)
        if not (np.array_equal(a.soft.probs, b.soft.probs)
                and np.array_equal(a.final_state.r_mean, b.final_state.r_mean)):
            mismatched.append(seed)
    for seed in range(10):
        f, Yp, Yd, Cs, _ = _jed_problem(seed, K=4, M=8, Tp=8, Td=20, snr_db=20.0)
        a = mf_qvb_jed(Yp, Yd, f.Xp, Cs, qpsk())
        b = lmmse_qvb_jed(Yp, Yd, f.Xp, Cs, qpsk(), isotropic=True)
        if not (np.array_equal(a.H_hat, b.H_hat) and np.array_equal(a.soft.probs, b.soft.probs)):
            mismatched.append(("jed", seed))
    checks.append(V.Check("structure", "isotropic-lmmse-is-mf", not mismatched,
                          f"{STRUCTURE_INSTANCES} detection and 10 JED instances, "
                          f"{len(mismatched)} not bit-identical", None))

    # residual shortcut against the full double sum
    worst = 0.0
    cons = qam(16)
    for seed in range(STRUCTURE_INSTANCES):
        rng = np.random.default_rng(1000 + seed)
        K, M = int(rng.integers(1, 6)), int(rng.integers(1, 9))
        Tp, Td = int(rng.integers(1, 9)), int(rng.integers(1, 12))
        Xp = cn(rng, (K, Tp))
        probs = rng.dirichlet(np.ones(cons.size), size=(K, Td))
        Xm, X2 = probs @ cons.points, probs @ np.abs(cons.points) ** 2
        Hm, Rp, Rd = cn(rng, (M, K)), cn(rng, (M, Tp)), cn(rng, (M, Td))
        A = cn(rng, (M, M))
        C = A @ A.conj().T / M + 0.3 * np.eye(M)
        d = np.sqrt(np.real(np.diag(C)))
        C = C / d[:, None] / d[None, :]
        gp, gd = rng.uniform(0.1, 20), rng.uniform(0.1, 20, Td)
        i = int(rng.integers(K))
        mean, _ = channel_posterior_mf(gp, gd, Xp, Xm, X2 - np.abs(Xm) ** 2, X2,
                                       Rp - Hm @ Xp, Rd - Hm @ Xm, C, Hm, i)
        ref = _direct_channel_mean(i, gp, gd, Xp, Rp, Xm, X2, Rd, Hm, C)
        worst = max(worst, np.max(np.abs(mean - ref)) / np.max(np.abs(ref)))
    checks.append(V.Check("structure", "residual-shortcut", worst <= SHORTCUT_TOL,
                          f"{STRUCTURE_INSTANCES} instances, worst relative gap {worst:.2e} "
                          f"(tolerance {SHORTCUT_TOL:g})", None))

    # diagonal priors: same result as the general path, with no inversion
    f, Yp, Yd, _, N0 = _jed_problem(7, K=4, M=16, Tp=8, Td=30, snr_db=15.0)
    rng = np.random.default_rng(7)
    Cs = [np.diag(rng.uniform(0.5, 1.5, 16)) for _ in range(4)]
    algs = ("mf-qvb-jed", "conv-qvb-jed")
    ref = {a: run_jed(Yp, Yd, f.Xp, [ChannelPrior(C, force_general=True) for C in Cs], qpsk(),
                      N0, JedOptions(algorithm=a)) for a in algs}
    for name in ("inv", "solve", "eigh", "eig", "cholesky", "pinv", "lstsq"):
        monkeypatch.setattr(np.linalg, name, _forbid)
    for name in ("inv", "solve", "eigh", "cholesky", "solve_triangular", "cho_factor", "lu"):
        monkeypatch.setattr(jed_mod.linalg, name, _forbid)
    monkeypatch.setattr(jed_mod.lapack, "zpotrf", _forbid)
    gap = 0.0
    for a in algs:
        got = run_jed(Yp, Yd, f.Xp, Cs, qpsk(), N0, JedOptions(algorithm=a))
        gap = max(gap, np.max(np.abs(got.H_hat - ref[a].H_hat)))
        for i in range(4):
            gap = max(gap, np.max(np.abs(got.final_state.h_cov(i) - ref[a].final_state.h_cov(i))))
    monkeypatch.undo()
    checks.append(V.Check("structure", "diagonal-prior-inversion-free", gap <= DIAGONAL_TOL,
                          f"no inversion called; largest gap to the general path {gap:.2e} "
                          f"(tolerance {DIAGONAL_TOL:g})", None))
    assert _report(request, 11, "structural equivalences", checks)


def test_criterion_12_determinism(request):
    cfg = parse_config(dict(K=4, M=8, bits=[1, 3], snr_db=[0, 20], t_d=[2, 5], trials=12,
                            channel={"kind": "laplacian"}, constellation="16qam", seed=123,
                            algorithms=["mf-qvb", "lmmse-qvb", "conv-qvb", "mf-qvb-jed",
                                        "lmmse-qvb-jed", "conv-qvb-jed"]))
    runs = {w: run_sweep(cfg, workers=w).to_csv() for w in (1, 2, 4)}
    again = run_sweep(cfg, workers=1).to_csv()
    same = len(set(runs.values())) == 1 and again == runs[1]
    check = V.Check("determinism", "csv-byte-identical", same,
                    f"{len(runs[1].splitlines()) - 1} rows, workers 1/2/4 plus a rerun: "
                    f"{'identical' if same else 'different'} bytes", cfg.seed)
    assert _report(request, 12, "byte-identical CSV", [check])
