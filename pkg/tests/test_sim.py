import math

import numpy as np
import pytest

from fewbit import (GridPoint, build_quantizer, calibrate_step_size, iid_model, map_oracle_detect,
                    parse_config, qam, qpsk, quantize, run_sweep, run_trial, sample_frame,
                    snr_to_noise_var)
from fewbit import sim
from fewbit.errors import InvalidLength, NonFiniteResult, TooLarge
from fewbit.quantizer import QuantizedBlock
from fewbit.verify import per_frame_ser

from .conftest import cn


@pytest.mark.parametrize("snr_db, K, N0", [(10, 16, 1.6), (0, 1, 1.0), (20, 4, 0.04)])
def test_snr_to_noise_var(snr_db, K, N0):
    assert snr_to_noise_var(snr_db, K) == pytest.approx(N0, rel=1e-15)


def test_snr_to_noise_var_rejects_no_users():
    with pytest.raises(InvalidLength):
        snr_to_noise_var(10, 0)


# ---------------------------------------------------------------- MAP oracle

def test_map_oracle_noiseless_limit():
    rng = np.random.default_rng(70)
    cons = qpsk()
    hits = 0
    for _ in range(100):
        K, M = 3, 4
        H = cn(rng, (M, K))
        idx = rng.integers(0, 4, size=K)
        r = H @ cons.points[idx] + 1e-4 * cn(rng, M)
        y = quantize(r, build_quantizer(12, calibrate_step_size(K, 12)))
        hits += np.array_equal(map_oracle_detect(y, H, cons, 1e-8), idx)
    assert hits == 100


def test_map_oracle_sign_decision():
    cons = qpsk()
    q = build_quantizer(1, 1.0)
    for re in (-0.3, 0.4):
        for im in (-2.0, 0.1):
            y = quantize(np.array([re + 1j * im]), q)
            got = cons.points[map_oracle_detect(y, np.ones((1, 1)), cons, 0.5)[0]]
            assert np.sign(got.real) == np.sign(re) and np.sign(got.imag) == np.sign(im)


def test_map_oracle_ties_to_smallest_index():
    cons = qpsk()
    # a bin covering everything carries no information: all hypotheses tie
    y = QuantizedBlock(np.zeros(2, complex), np.full(2, complex(-np.inf, -np.inf)),
                       np.full(2, complex(np.inf, np.inf)))
    np.testing.assert_array_equal(map_oracle_detect(y, np.ones((2, 2)), cons, 1.0), [0, 0])


def test_map_oracle_matches_brute_force_likelihood():
    from scipy.stats import norm
    rng = np.random.default_rng(71)
    cons = qpsk()
    K, M, N0 = 2, 3, 0.4
    H = cn(rng, (M, K))
    y = quantize(H @ cons.points[[1, 2]] + math.sqrt(N0) * cn(rng, M), build_quantizer(2, 0.8))
    best, arg = -np.inf, None
    for a in range(4):
        for b in range(4):
            s = H @ cons.points[[a, b]]
            ll = 0.0
            for part in (np.real, np.imag):
                sd = math.sqrt(N0 / 2)
                ll += np.sum(np.log(norm.cdf((part(y.up) - part(s)) / sd)
                                    - norm.cdf((part(y.lo) - part(s)) / sd)))
            if ll > best + 1e-12:
                best, arg = ll, [a, b]
    np.testing.assert_array_equal(map_oracle_detect(y, H, cons, N0), arg)


def test_map_oracle_size_limit():
    y = quantize(np.zeros(4, complex), build_quantizer(1, 1.0))
    with pytest.raises(TooLarge):
        map_oracle_detect(y, np.ones((4, 5)), qam(16), 1.0)


# ---------------------------------------------------------------- trials

def _cfg(**kw):
    base = dict(K=2, M=4, bits=[2], snr_db=[5.0], t_d=[6], trials=4,
                algorithms=["mf-qvb", "mf-qvb-jed"])
    base.update(kw)
    return parse_config(base)


def test_run_trial_is_deterministic():
    cfg = _cfg()
    for p in sim.grid(cfg):
        a, b = run_trial(cfg, p, 3), run_trial(cfg, p, 3)
        assert a == b
        assert a.seed == b.seed and a.errors == b.errors and a.nmse == b.nmse


def test_trial_schema():
    cfg = _cfg()
    csir = run_trial(cfg, GridPoint("mf-qvb", 5.0, 2, 6), 0)
    jed = run_trial(cfg, GridPoint("mf-qvb-jed", 5.0, 2, 6), 0)
    assert csir.nmse is None and csir.symbols == 12
    assert jed.nmse is not None and jed.nmse >= 0 and jed.symbols == 12
    assert not csir.failed and not jed.failed


def test_known_channel_near_noiseless():
    cfg = parse_config(dict(K=2, M=16, bits=[12], snr_db=[40.0], t_d=[50], trials=20,
                            algorithms=["mf-qvb", "lmmse-qvb", "conv-qvb", "map-oracle"]))
    tab = run_sweep(cfg, workers=1)
    for r in tab.rows:
        assert r.errors == 0, r.algorithm


def test_frames_are_shared_across_algorithms_and_snr():
    cfg = _cfg(snr_db=[0.0, 20.0], algorithms=["mf-qvb", "conv-qvb"])
    seeds = {run_trial(cfg, p, 2).seed for p in sim.grid(cfg)}
    assert len(seeds) == 1
    other = _cfg(snr_db=[0.0, 20.0], algorithms=["mf-qvb"], seed=1)
    assert run_trial(other, sim.grid(other)[0], 2).seed != seeds.pop()


def test_failures_are_recorded_not_dropped(monkeypatch):
    cfg = _cfg(algorithms=["mf-qvb"], trials=10)
    real = sim.detect

    def flaky(obs, H, cons, N0, opts):
        if abs(H[0, 0].real) > 0.5:
            raise NonFiniteResult("injected")
        return real(obs, H, cons, N0, opts)

    monkeypatch.setattr(sim, "detect", flaky)
    tab = run_sweep(cfg, workers=1)
    failed = [r for r in tab.records if r.failed]
    assert 0 < len(failed) < 10
    assert all("injected" in r.error for r in failed)
    row = tab.rows[0]
    assert row.trials == 10
    assert row.fail_rate == pytest.approx(len(failed) / 10)
    assert row.symbols == 12 * (10 - len(failed))
    assert tab.fail_rate == row.fail_rate


def test_aggregation_formulas():
    cfg = _cfg(trials=6)
    tab = run_sweep(cfg, workers=1)
    for row in tab.rows:
        recs = [r for r in tab.records if r.point.algorithm == row.algorithm]
        assert row.errors == sum(r.errors for r in recs)
        assert row.symbols == sum(r.symbols for r in recs)
        assert row.ser == row.errors / row.symbols
        assert 0 <= row.ser <= 1
        if row.algorithm.endswith("jed"):
            assert row.nmse == pytest.approx(np.mean([r.nmse for r in recs]), rel=1e-15)
        else:
            assert row.nmse is None


def test_worker_count_from_environment(monkeypatch):
    monkeypatch.setenv("FEWBIT_THREADS", "3")
    assert sim.worker_count() == 3
    for bad in ("0", "x", "-2"):
        monkeypatch.setenv("FEWBIT_THREADS", bad)
        with pytest.raises(ValueError):
            sim.worker_count()
    monkeypatch.delenv("FEWBIT_THREADS")
    assert sim.worker_count() >= 1


def test_csv_identical_across_worker_counts():
    cfg = _cfg(trials=6, bits=[1, 3], algorithms=["mf-qvb", "lmmse-qvb-jed"])
    one = run_sweep(cfg, workers=1)
    three = run_sweep(cfg, workers=3)
    assert one.to_csv() == three.to_csv()
    assert one.records == three.records


def test_csv_layout():
    cfg = _cfg(trials=2)
    text = run_sweep(cfg, workers=1).to_csv()
    lines = text.splitlines()
    assert lines[0] == ("algorithm,channel,snr_db,bits,t_p,t_d,trials,symbols,errors,ser,nmse,"
                        "fail_rate,mean_iters,wall_ms")
    assert len(lines) == 3
    assert all(line.endswith(",") for line in lines[1:])  # wall_ms left empty


def test_curve_blocks():
    cfg = _cfg(trials=1, bits=[1, 2], snr_db=[0.0, 10.0], algorithms=["mf-qvb"])
    text = run_sweep(cfg, workers=1).curve("mf-qvb")
    blocks = text.strip().split("\n\n")
    assert len(blocks) == 2
    for b in blocks:
        head, *rows = b.splitlines()
        assert head.startswith("# mf-qvb bits=")
        assert [float(r.split()[0]) for r in rows] == [0.0, 10.0]


def test_standard_error_halves_with_four_times_the_frames():
    cfg = parse_config(dict(K=4, M=8, bits=[1], snr_db=[5.0], t_d=[5], trials=400,
                            algorithms=["mf-qvb"], seed=5))
    tab = run_sweep(cfg, workers=1)
    fr = per_frame_ser(tab, GridPoint("mf-qvb", 5.0, 1, 5))
    rng = np.random.default_rng(72)

    def boot_se(x):
        means = [rng.choice(x, size=x.size).mean() for _ in range(2000)]
        return np.std(means)

    ratio = boot_se(fr) / boot_se(fr[:100])
    assert ratio == pytest.approx(0.5, abs=0.12)


def test_frame_generation_matches_direct_sampling():
    cfg = _cfg()
    ctx = sim.TrialContext(cfg, 1)
    N0 = snr_to_noise_var(5.0, 2)
    f = ctx.frame(N0, 6, True)
    g = sample_frame(iid_model(4, 2), qpsk(), cfg.t_p, 6, N0,
                     np.random.default_rng([sim.frame_seed(cfg, 1), 0]))
    np.testing.assert_array_equal(f.Rd, g.Rd)
    np.testing.assert_array_equal(f.Rp, g.Rp)
