"""Property suites behind ``fewbit verify``.

Each suite returns a list of :class:`Check` results.  Randomized suites draw
every instance from its own seed, and a failing check reports that seed so
the instance can be replayed with ``--replay``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .config import parse_config
from .detect import Algorithm, DetectorOptions, detect, elbo, mf_qvb_detect
from .kernels import (CdfMode, ComplexInterval, expected_quadratic_form, qam, qpsk,
                      truncated_complex_moments)
from .oracle import monte_carlo_quadratic_form, quadrature_moments
from .quantizer import build_quantizer, calibrate_step_size, quantize
from .sim import (GridPoint, TrialContext, map_oracle_detect, run_sweep, snr_to_noise_var,
                  stable_seed)

MOMENT_TOL = 1e-6
QUADFORM_TOL = 0.01
ELBO_TOL = 1e-9
Z95 = 1.6448536269514722  # one-sided 95% normal quantile


@dataclass(frozen=True)
class Check:
    suite: str
    name: str
    passed: bool
    detail: str
    seed: int | None = None

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        s = f"{tag} {self.suite}/{self.name}: {self.detail}"
        if not self.passed and self.seed is not None:
            s += f" (replay seed {self.seed})"
        return s


def _instance_seeds(suite: str, base: int, count: int):
    return [stable_seed(suite, base, i) for i in range(count)]


# ---------------------------------------------------------------- moments

def moment_instance(seed: int):
    """Random ``(mu, gamma, interval)`` drawn from quantizer bins.

    The location is placed inside, near or far outside the bin (up to 40
    standard deviations), so deep tails are covered.
    """
    rng = np.random.default_rng(seed)
    bits = int(rng.integers(1, 6))
    q = build_quantizer(bits, calibrate_step_size(10 ** rng.uniform(-1, 2), bits))
    edges = np.concatenate(([-np.inf], q.thresholds, [np.inf]))
    gamma = 10 ** rng.uniform(-3, 4)
    sd = 1.0 / math.sqrt(2.0 * gamma)
    bounds = []
    mu = []
    for _ in range(2):
        k = int(rng.integers(0, edges.size - 1))
        lo, up = edges[k], edges[k + 1]
        finite = [e for e in (lo, up) if math.isfinite(e)]
        anchor = finite[int(rng.integers(0, len(finite)))]
        reach = 3.0 if rng.random() < 0.6 else 40.0
        mu.append(anchor + rng.uniform(-reach, reach) * sd)
        bounds.append((lo, up))
    iv = ComplexInterval(bounds[0][0], bounds[0][1], bounds[1][0], bounds[1][1])
    return complex(mu[0], mu[1]), gamma, iv


def moment_errors(seed: int, mode: CdfMode):
    mu, gamma, iv = moment_instance(seed)
    got = truncated_complex_moments(mu, gamma, iv, mode)
    logistic = mode is CdfMode.LOGISTIC
    mr, vr = quadrature_moments(mu.real, gamma, iv.lo_re, iv.up_re, logistic)
    mi, vi = quadrature_moments(mu.imag, gamma, iv.lo_im, iv.up_im, logistic)
    ref_mean = complex(mr, mi)
    ref_var = vr + vi
    mean_err = abs(got.mean - ref_mean) / max(abs(ref_mean), math.sqrt(ref_var))
    var_err = abs(got.var - ref_var) / ref_var
    return mean_err, var_err


def suite_moments(count: int = 10_000, base_seed: int = 0, replay: int | None = None):
    checks = []
    for mode in (CdfMode.EXACT_NORMAL, CdfMode.LOGISTIC):
        seeds = [replay] if replay is not None else _instance_seeds("moments", base_seed, count)
        worst = (0.0, None)
        bad = []
        for s in seeds:
            err = max(moment_errors(s, mode))
            if err > worst[0]:
                worst = (err, s)
            if not err <= MOMENT_TOL:
                bad.append(s)
        detail = (f"{len(seeds)} instances, worst relative error {worst[0]:.2e} "
                  f"(tolerance {MOMENT_TOL:g}), {len(bad)} failures")
        checks.append(Check("moments", f"quadrature-{mode.value}", not bad, detail,
                            bad[0] if bad else None))
    return checks


# ---------------------------------------------------------------- expected quadratic form

def _random_psd(rng, n, scale=1.0):
    G = (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) / math.sqrt(2 * n)
    return scale * (G @ G.conj().T)


def _cn(rng, shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)


def quadform_instance(seed: int):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(1, 5))
    n = int(rng.integers(1, 5))
    inst = dict(
        y_mean=_cn(rng, m), y_cov=_random_psd(rng, m, rng.uniform(0.1, 2)),
        A_mean=_cn(rng, (m, n)), A_cols_cov=[_random_psd(rng, m, rng.uniform(0.1, 2))
                                             for _ in range(n)],
        x_mean=_cn(rng, n), x_cov=_random_psd(rng, n, rng.uniform(0.1, 2)),
        B=_random_psd(rng, m) + 0.1 * np.eye(m))
    return inst, rng


def quadform_error(seed: int, samples: int = 1_000_000) -> float:
    inst, rng = quadform_instance(seed)
    exact = expected_quadratic_form(**inst)
    mc = monte_carlo_quadratic_form(rng, samples=samples, **inst)
    return abs(exact - mc) / abs(mc)


def suite_quadform(count: int = 100, base_seed: int = 0, replay: int | None = None,
                   samples: int = 1_000_000):
    seeds = [replay] if replay is not None else _instance_seeds("theorem1", base_seed, count)
    errs = [(quadform_error(s, samples), s) for s in seeds]
    bad = [s for e, s in errs if not e <= QUADFORM_TOL]
    worst = max(errs)
    detail = (f"{len(seeds)} instances vs {samples} Monte Carlo samples, worst relative gap "
              f"{worst[0]:.2e} (tolerance {QUADFORM_TOL:g}), {len(bad)} failures")
    return [Check("theorem1", "monte-carlo", not bad, detail, bad[0] if bad else None)]


# ---------------------------------------------------------------- ELBO

def elbo_trace(seed: int, max_iters: int = 20):
    """ELBO after every update of an exact-normal MF run on a small random instance.

    The trace starts after the first quantized-signal update: before it the
    signal factors are point masses, which sit outside the Gaussian family.
    """
    rng = np.random.default_rng(seed)
    K = int(rng.integers(1, 5))
    M = int(rng.integers(1, 5))
    T = int(rng.integers(1, 4))
    cons = qpsk() if rng.random() < 0.5 else qam(16)
    bits = int(rng.integers(1, 4))
    N0 = snr_to_noise_var(rng.uniform(-5, 30), K)
    H = _cn(rng, (M, K))
    X = cons.points[rng.integers(0, cons.size, size=(K, T))]
    R = H @ X + math.sqrt(N0) * _cn(rng, (M, T))
    Y = quantize(R, build_quantizer(bits, calibrate_step_size(K + N0, bits)))
    trace = []

    def record(stage, st):
        if trace or stage == "r":
            trace.append((stage, elbo(st, Y, H, cons)))

    opts = DetectorOptions(max_iters=max_iters, cdf_mode=CdfMode.EXACT_NORMAL)
    mf_qvb_detect(Y, H, cons, opts=opts, callback=record)
    return trace


def suite_elbo(count: int = 100, base_seed: int = 0, replay: int | None = None):
    seeds = [replay] if replay is not None else _instance_seeds("elbo", base_seed, count)
    worst = (math.inf, None, None)
    bad = []
    steps = 0
    for s in seeds:
        tr = elbo_trace(s)
        for (_, prev), (stage, cur) in zip(tr, tr[1:]):
            steps += 1
            d = cur - prev
            if d < worst[0]:
                worst = (d, s, stage)
            if not d >= -ELBO_TOL:
                bad.append(s)
    stage = worst[2][0] if isinstance(worst[2], tuple) else worst[2]
    detail = (f"{len(seeds)} instances, {steps} updates, smallest change {worst[0]:.2e} "
              f"at a {stage!s} update (tolerance -{ELBO_TOL:g}), {len(set(bad))} failing")
    return [Check("elbo", "monotone", not bad, detail, bad[0] if bad else None)]


# ---------------------------------------------------------------- MAP oracle

def _paired_not_worse(a_err, b_err):
    """One-sided paired test that ``a`` is not significantly worse than ``b``."""
    d = np.asarray(a_err, float) - np.asarray(b_err, float)
    n = d.size
    se = d.std(ddof=1) / math.sqrt(n) if n > 1 else 0.0
    return d.mean() <= Z95 * se, d.mean(), se


def map_dominance(frames: int = 1000, base_seed: int = 0):
    """Exhaustive MAP against every VB detector on small paired frames."""
    algs = ("mf-qvb", "lmmse-qvb", "conv-qvb")
    cfg = parse_config(dict(K=2, M=4, bits=[1], constellation="qpsk", snr_db=[0, 10],
                            t_d=[1], algorithms=["map-oracle", *algs], trials=frames,
                            seed=base_seed))
    cons = qpsk()
    errs = {(a, s): [] for a in ("map-oracle",) + algs for s in cfg.snr_db}
    agree = []
    for t in range(frames):
        ctx = TrialContext(cfg, t)
        for snr in cfg.snr_db:
            N0 = snr_to_noise_var(snr, cfg.K)
            f = ctx.frame(N0, 1, False)
            Y = quantize(f.Rd, build_quantizer(1, calibrate_step_size(cfg.K + N0, 1)))
            m = map_oracle_detect(Y.column(0), f.H, cons, N0)
            errs[("map-oracle", snr)].append(int(np.sum(m != f.Xd_idx[:, 0])))
            for a in algs:
                res = detect(Y, f.H, cons, N0, DetectorOptions(algorithm=Algorithm(a)))
                errs[(a, snr)].append(int(np.sum(res.hard_idx[:, 0] != f.Xd_idx[:, 0])))
                if a == "mf-qvb" and snr == 10.0:
                    agree.append(bool(np.array_equal(res.hard_idx[:, 0], m)))
    checks = []
    sym = frames * cfg.K
    for snr in cfg.snr_db:
        ser_map = sum(errs[("map-oracle", snr)]) / sym
        for a in algs:
            ok, diff, se = _paired_not_worse(errs[("map-oracle", snr)], errs[(a, snr)])
            ser_a = sum(errs[(a, snr)]) / sym
            checks.append(Check("oracle", f"map-le-{a}@{snr:g}dB", bool(ok),
                                f"MAP SER {ser_map:.4f} vs {ser_a:.4f}, paired mean "
                                f"difference {diff / cfg.K:+.4f} per symbol "
                                f"(one-sided 95% bound {Z95 * se / cfg.K:.4f})", base_seed))
    ser_map = sum(errs[("map-oracle", 10.0)]) / sym
    ser_mf = sum(errs[("mf-qvb", 10.0)]) / sym
    checks.append(Check("oracle", "mf-near-map@10dB", ser_mf <= 1.5 * ser_map + 0.01,
                        f"MF-QVB SER {ser_mf:.4f} <= 1.5 x {ser_map:.4f} + 0.01", base_seed))
    rate = sum(agree) / len(agree)
    checks.append(Check("oracle", "mf-agrees-with-map@10dB", rate >= 0.9,
                        f"identical decisions on {rate:.1%} of {len(agree)} frames (need 90%)",
                        base_seed))
    return checks, errs


def map_noiseless(frames: int = 100, base_seed: int = 0):
    rng = np.random.default_rng(stable_seed("map-noiseless", base_seed))
    cons = qpsk()
    K, M, N0 = 2, 4, 1e-8
    q = build_quantizer(12, calibrate_step_size(K + N0, 12))
    hits = 0
    for _ in range(frames):
        H = _cn(rng, (M, K))
        idx = rng.integers(0, cons.size, size=K)
        r = H @ cons.points[idx] + math.sqrt(N0) * _cn(rng, M)
        hits += np.array_equal(map_oracle_detect(quantize(r, q), H, cons, N0), idx)
    return Check("oracle", "noiseless-limit", hits == frames,
                 f"MAP recovers the sent vector on {hits}/{frames} frames", base_seed)


def map_sign_decision(base_seed: int = 0):
    rng = np.random.default_rng(stable_seed("map-sign", base_seed))
    cons = qpsk()
    q = build_quantizer(1, 1.0)
    ok = True
    for _ in range(50):
        h = np.array([[rng.uniform(0.2, 3.0)]], dtype=complex)
        N0 = 10 ** rng.uniform(-2, 1)
        y = complex(rng.standard_normal(), rng.standard_normal())
        obs = quantize(np.array([y]), q)
        k = map_oracle_detect(obs, h, cons, N0)[0]
        p = cons.points[k]
        ok &= (np.sign(p.real) == np.sign(y.real)) and (np.sign(p.imag) == np.sign(y.imag))
    return Check("oracle", "single-antenna-sign-rule", bool(ok),
                 "K=M=1, one bit: MAP picks the quadrant of the observation", base_seed)


def suite_oracle(frames: int = 1000, base_seed: int = 0, replay: int | None = None):
    seed = base_seed if replay is None else replay
    checks, _ = map_dominance(frames, seed)
    checks.append(map_noiseless(100, seed))
    checks.append(map_sign_decision(seed))
    return checks


# ---------------------------------------------------------------- trends

def per_frame_ser(table, point: GridPoint) -> np.ndarray:
    recs = sorted((r for r in table.records if r.point == point and not r.failed),
                  key=lambda r: r.trial)
    return np.array([r.errors / r.symbols for r in recs])


def _paired_se(x, y) -> float:
    d = np.asarray(x) - np.asarray(y)
    return float(d.std(ddof=1) / math.sqrt(d.size)) if d.size > 1 else 0.0


def _sweep(data: dict, trials: int, seed: int, workers: int | None, progress=None):
    cfg = parse_config(dict(data, trials=trials, seed=seed))
    return cfg, run_sweep(cfg, workers=workers, progress=progress)


CONV_DEGRADATION = dict(K=16, M=32, bits=[3], constellation="qpsk", snr_db=[30], t_d=[10],
                        algorithms=["mf-qvb", "conv-qvb"])
LMMSE_ADVANTAGE = dict(K=16, M=64, bits=[3], constellation="16qam", snr_db=[25], t_d=[10],
                       channel={"kind": "laplacian", "spread_deg": 10.0},
                       algorithms=["mf-qvb", "lmmse-qvb"])
JED_ORDERING = dict(K=16, M=64, t_p=32, t_d=[100], bits=[3], constellation="16qam",
                    snr_db=[30], channel={"kind": "laplacian", "spread_deg": 10.0},
                    algorithms=["mf-qvb-jed", "lmmse-qvb-jed", "conv-qvb-jed"])
BITS_TREND = dict(K=16, M=64, t_p=32, t_d=[100], bits=[1, 2, 3, 4, 6], constellation="16qam",
                  snr_db=[10], channel={"kind": "laplacian", "spread_deg": 10.0},
                  algorithms=["mf-qvb-jed"])
TD_TREND = dict(K=16, M=64, t_p=32, t_d=[20, 50, 100], bits=[3], constellation="16qam",
                snr_db=[20], channel={"kind": "laplacian", "spread_deg": 10.0},
                algorithms=["mf-qvb-jed"])


def check_conv_degradation(trials=2000, seed=0, workers=None, progress=None):
    cfg, tab = _sweep(CONV_DEGRADATION, trials, seed, workers, progress)
    mf, conv = tab.row("mf-qvb"), tab.row("conv-qvb")
    ok = conv.ser >= 3.0 * mf.ser
    return [Check("trends", "conv-degraded@30dB", ok,
                  f"conv-QVB SER {conv.ser:.3e} >= 3 x MF-QVB SER {mf.ser:.3e} "
                  f"({trials} frames x {cfg.t_d[0]} slots)", seed)], tab


def check_lmmse_advantage(trials=2000, seed=0, workers=None, progress=None):
    cfg, tab = _sweep(LMMSE_ADVANTAGE, trials, seed, workers, progress)
    mf, lm = tab.row("mf-qvb"), tab.row("lmmse-qvb")
    a = per_frame_ser(tab, GridPoint("mf-qvb", 25.0, 3, cfg.t_d[0]))
    b = per_frame_ser(tab, GridPoint("lmmse-qvb", 25.0, 3, cfg.t_d[0]))
    se = _paired_se(a, b)
    gap = float(np.mean(a - b))
    ok = gap > Z95 * se
    return [Check("trends", "lmmse-beats-mf@25dB-corr", bool(ok),
                  f"LMMSE-QVB SER {lm.ser:.3e} < MF-QVB SER {mf.ser:.3e}; paired gap "
                  f"{gap:.3e} > {Z95:.3f} x SE {se:.3e}", seed)], tab


def check_jed_ordering(trials=2000, seed=0, workers=None, progress=None):
    cfg, tab = _sweep(JED_ORDERING, trials, seed, workers, progress)
    mf, lm, cv = (tab.row(a) for a in JED_ORDERING["algorithms"])
    return [
        Check("trends", "lmmse-jed-halves-mf-jed@30dB", lm.ser <= 0.5 * mf.ser,
              f"LMMSE-QVB-JED SER {lm.ser:.3e} <= 0.5 x MF-QVB-JED SER {mf.ser:.3e}", seed),
        Check("trends", "proposed-jed-beat-conv@30dB", max(mf.ser, lm.ser) <= cv.ser,
              f"MF {mf.ser:.3e} and LMMSE {lm.ser:.3e} <= conv-QVB-JED {cv.ser:.3e}", seed),
    ], tab


def check_bits_trend(trials=2000, seed=0, workers=None, progress=None,
                     algorithms=("mf-qvb-jed",)):
    data = dict(BITS_TREND, algorithms=list(algorithms))
    cfg, tab = _sweep(data, trials, seed, workers, progress)
    checks = []
    for alg in algorithms:
        ser = {b: tab.row(alg, bits=b).ser for b in cfg.bits}
        mono = all(ser[b2] <= ser[b1] for b1, b2 in zip([1, 2, 3], [2, 3, 4]))
        seq = ", ".join(f"b={b}: {ser[b]:.3e}" for b in (1, 2, 3, 4))
        checks.append(Check("trends", f"{alg}-bits-monotone@10dB", mono, seq, seed))
        rel = (ser[4] - ser[6]) / ser[4] if ser[4] > 0 else 0.0
        checks.append(Check("trends", f"{alg}-saturates-at-4-bits@10dB", rel < 0.1,
                            f"b=4 {ser[4]:.3e} -> b=6 {ser[6]:.3e}, relative gain {rel:.1%} "
                            f"(< 10%)", seed))
    return checks, tab


def check_td_trend(trials=2000, seed=0, workers=None, progress=None,
                   algorithms=("mf-qvb-jed",)):
    data = dict(TD_TREND, algorithms=list(algorithms))
    cfg, tab = _sweep(data, trials, seed, workers, progress)
    snr = float(cfg.snr_db[0])
    checks = []
    for alg in algorithms:
        fr = {t: per_frame_ser(tab, GridPoint(alg, snr, 3, t)) for t in cfg.t_d}
        ser = {t: tab.row(alg, t_d=t).ser for t in cfg.t_d}
        inversions = []
        for t1, t2 in zip(cfg.t_d, cfg.t_d[1:]):
            if ser[t2] > ser[t1]:
                inversions.append((t1, t2, ser[t2] - ser[t1], _paired_se(fr[t2], fr[t1])))
        ok = len(inversions) <= 1 and all(d <= 2.0 * se for *_, d, se in inversions)
        seq = ", ".join(f"T_d={t}: {ser[t]:.3e}" for t in cfg.t_d)
        if inversions:
            seq += "; inversions " + ", ".join(f"{a}->{b} by {d:.2e} (2 SE {2 * se:.2e})"
                                               for a, b, d, se in inversions)
        checks.append(Check("trends", f"{alg}-td-monotone@{snr:g}dB", ok, seq, seed))
    return checks, tab


def suite_trends(trials: int = 2000, base_seed: int = 0, replay: int | None = None,
                 workers: int | None = None):
    seed = base_seed if replay is None else replay
    checks = []
    for fn in (check_conv_degradation, check_lmmse_advantage, check_jed_ordering,
               check_bits_trend, check_td_trend):
        checks.extend(fn(trials, seed, workers)[0])
    return checks


SUITES: dict[str, Callable] = {
    "moments": suite_moments,
    "theorem1": suite_quadform,
    "elbo": suite_elbo,
    "oracle": suite_oracle,
    "trends": suite_trends,
}
