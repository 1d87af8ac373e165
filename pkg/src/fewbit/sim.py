"""Seeded Monte Carlo harness: frames, quantization, detection, aggregation.

Every frame is a pure function of the experiment's frame-defining fields,
the base seed and the trial index.  Algorithm, SNR, bit width and data
length are deliberately left out of the frame seed, so all of them are
compared on the same channel, symbol and noise draws (the noise is a fixed
unit-variance draw scaled by ``sqrt(N0)``, and shorter data blocks are
prefixes of longer ones).
"""

from __future__ import annotations

import hashlib
import itertools
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelModel, iid_model, laplacian_covariance, sample_frame
from .config import CSIR_ALGORITHMS, ExperimentConfig
from .detect import Algorithm, DetectorOptions, detect
from .errors import FewbitError, InvalidLength, TooLarge
from .jed import ChannelPrior, JedAlgorithm, JedOptions, run_jed
from .kernels import Constellation, constellation_by_name, log_normal_mass
from .quantizer import QuantizedBlock, build_quantizer, calibrate_step_size, quantize

MAP_LIMIT = 65536
FAIL_LIMIT = 0.01


def snr_to_noise_var(snr_db: float, K: int) -> float:
    """Noise variance for ``SNR = K / N0``."""
    if K < 1:
        raise InvalidLength("K must be at least 1")
    return K / 10.0 ** (snr_db / 10.0)


# ---------------------------------------------------------------- exhaustive MAP

def map_oracle_detect(obs: QuantizedBlock, H, cons: Constellation, N0: float) -> np.ndarray:
    """Exact MAP decision for one quantized column by enumerating ``S^K``.

    Returns constellation indices.  Ties resolve to the lexicographically
    smallest index vector.
    """
    H = np.asarray(H, dtype=complex)
    M, K = H.shape
    n = cons.size ** K
    if n > MAP_LIMIT:
        raise TooLarge(f"{cons.size}^{K} = {n} hypotheses exceeds {MAP_LIMIT}")
    lo = np.asarray(obs.lo).reshape(M)
    up = np.asarray(obs.up).reshape(M)
    # first user varies slowest, so argmax ties fall on the smallest tuple
    cand = np.array(list(itertools.product(range(cons.size), repeat=K)), dtype=np.intp)
    S = H @ cons.points[cand].T  # (M, n)
    scale = math.sqrt(2.0 / N0)
    score = np.sum(cons.log_priors[cand], axis=1)
    for part in (np.real, np.imag):
        a = scale * (part(lo)[:, None] - part(S))
        b = scale * (part(up)[:, None] - part(S))
        score = score + np.sum(log_normal_mass(a, b).reshape(a.shape), axis=0)
    return cand[int(np.argmax(score))]


# ---------------------------------------------------------------- trials

@dataclass(frozen=True)
class GridPoint:
    algorithm: str
    snr_db: float
    bits: int
    t_d: int


@dataclass(frozen=True)
class TrialRecord:
    point: GridPoint
    trial: int
    seed: int
    symbols: int
    errors: int
    nmse: float | None
    iters: int
    failed: bool = False
    error: str | None = None
    wall_ms: float = field(default=0.0, compare=False)


def grid(cfg: ExperimentConfig) -> list[GridPoint]:
    return [GridPoint(a, float(s), b, t)
            for a in cfg.algorithms for b in cfg.bits for t in cfg.t_d for s in cfg.snr_db]


def stable_seed(*parts) -> int:
    """64-bit seed from a blake2b digest of the parts' reprs."""
    h = hashlib.blake2b(repr(parts).encode(), digest_size=8)
    return int.from_bytes(h.digest(), "little")


def frame_seed(cfg: ExperimentConfig, trial: int) -> int:
    ch = cfg.channel
    key = (cfg.K, cfg.M, cfg.t_p, cfg.constellation.lower(), ch.kind, ch.spread_deg,
           tuple(ch.aoa_range_deg), trial)
    return (cfg.seed + stable_seed(*key)) % 2**64


def channel_for_trial(cfg: ExperimentConfig, seed: int) -> ChannelModel:
    if cfg.channel.kind == "iid":
        return iid_model(cfg.M, cfg.K)
    # angles come from their own stream so the frame draws do not depend on them
    rng = np.random.default_rng([seed, 1])
    lo, hi = np.deg2rad(cfg.channel.aoa_range_deg)
    angles = rng.uniform(lo, hi, size=cfg.K)
    spread = math.radians(cfg.channel.spread_deg)
    return ChannelModel(cfg.M, cfg.K, [laplacian_covariance(cfg.M, a, spread) for a in angles])


class TrialContext:
    """Per-trial cache of the channel model and the channel priors."""

    def __init__(self, cfg: ExperimentConfig, trial: int):
        self.cfg = cfg
        self.trial = trial
        self.seed = frame_seed(cfg, trial)
        self.cons = constellation_by_name(cfg.constellation)
        self.model = channel_for_trial(cfg, self.seed)
        self._priors = None

    @property
    def priors(self):
        if self._priors is None:
            self._priors = [ChannelPrior(C) for C in self.model.covariances()]
        return self._priors

    def frame(self, N0, t_d, pilots: bool):
        rng = np.random.default_rng([self.seed, 0])
        return sample_frame(self.model, self.cons, self.cfg.t_p if pilots else 0, t_d, N0, rng)


def _evaluate(ctx: TrialContext, point: GridPoint) -> TrialRecord:
    cfg = ctx.cfg
    cons = ctx.cons
    N0 = snr_to_noise_var(point.snr_db, cfg.K)
    jed = point.algorithm not in CSIR_ALGORITHMS
    symbols = cfg.K * point.t_d
    t0 = time.perf_counter()
    try:
        f = ctx.frame(N0, point.t_d, jed)
        step = cfg.step_size or calibrate_step_size(cfg.K + N0, point.bits)
        q = build_quantizer(point.bits, step)
        Yd = quantize(f.Rd, q)
        nmse = None
        if point.algorithm == "map-oracle":
            idx = np.stack([map_oracle_detect(Yd.column(t), f.H, cons, N0)
                            for t in range(point.t_d)], axis=1)
            iters = 1
        elif not jed:
            opts = DetectorOptions(max_iters=cfg.max_iters, cdf_mode=cfg.cdf_mode,
                                   algorithm=Algorithm(point.algorithm))
            res = detect(Yd, f.H, cons, N0, opts)
            idx, iters = res.hard_idx, res.iters_run
        else:
            opts = JedOptions(algorithm=JedAlgorithm(point.algorithm), lite=cfg.lite,
                              max_iters=cfg.max_iters, cdf_mode=cfg.cdf_mode)
            res = run_jed(quantize(f.Rp, q), Yd, f.Xp, ctx.priors, cons, N0, opts)
            idx, iters = res.Xd_idx, res.iters_run
            nmse = float(np.sum(np.abs(f.H - res.H_hat) ** 2) / np.sum(np.abs(f.H) ** 2))
        errors = int(np.count_nonzero(idx != f.Xd_idx))
    except (FewbitError, FloatingPointError, np.linalg.LinAlgError) as exc:
        ms = (time.perf_counter() - t0) * 1e3
        return TrialRecord(point, ctx.trial, ctx.seed, symbols, 0, None, 0, True,
                           f"{type(exc).__name__}: {exc}", ms)
    ms = (time.perf_counter() - t0) * 1e3
    return TrialRecord(point, ctx.trial, ctx.seed, symbols, errors, nmse, int(iters), wall_ms=ms)


def run_trial(cfg: ExperimentConfig, point: GridPoint, trial: int) -> TrialRecord:
    """One frame of one grid point.  Deterministic in ``(cfg, point, trial)``."""
    return _evaluate(TrialContext(cfg, trial), point)


def _run_trial_all(cfg: ExperimentConfig, points: list, trial: int) -> list:
    ctx = TrialContext(cfg, trial)
    return [_evaluate(ctx, p) for p in points]


# ---------------------------------------------------------------- aggregation

@dataclass(frozen=True)
class MetricsRow:
    algorithm: str
    channel: str
    snr_db: float
    bits: int
    t_p: int
    t_d: int
    trials: int
    symbols: int
    errors: int
    ser: float
    nmse: float | None
    fail_rate: float
    mean_iters: float
    wall_ms: float = field(compare=False)

    @property
    def ser_stderr(self) -> float:
        if self.symbols == 0:
            return math.nan
        return math.sqrt(self.ser * (1.0 - self.ser) / self.symbols)


COLUMNS = ("algorithm", "channel", "snr_db", "bits", "t_p", "t_d", "trials", "symbols",
           "errors", "ser", "nmse", "fail_rate", "mean_iters", "wall_ms")


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return f"{x:.9g}"
    return str(x)


@dataclass
class MetricsTable:
    """Aggregated results, one row per grid point, in grid order."""

    rows: list
    records: list = field(repr=False, default_factory=list)

    def row(self, algorithm, snr_db=None, bits=None, t_d=None) -> MetricsRow:
        hits = [r for r in self.rows if r.algorithm == algorithm
                and (snr_db is None or r.snr_db == snr_db)
                and (bits is None or r.bits == bits)
                and (t_d is None or r.t_d == t_d)]
        if len(hits) != 1:
            raise KeyError(f"{len(hits)} rows match {algorithm}, {snr_db}, {bits}, {t_d}")
        return hits[0]

    @property
    def fail_rate(self) -> float:
        n = len(self.records)
        return sum(r.failed for r in self.records) / n if n else 0.0

    def to_csv(self, wall_time: bool = False) -> str:
        """CSV text.  ``wall_ms`` is left empty unless ``wall_time`` is set,
        so that reruns stay byte-identical."""
        lines = [",".join(COLUMNS)]
        for r in self.rows:
            vals = [getattr(r, c) for c in COLUMNS]
            if not wall_time:
                vals[-1] = None
            lines.append(",".join(_fmt(v) for v in vals))
        return "\n".join(lines) + "\n"

    def curve(self, algorithm: str) -> str:
        """Two columns, ``snr_db ser``, for one algorithm.

        Each ``(bits, t_d)`` series is its own block, headed by a comment and
        separated by a blank line (gnuplot's ``index`` convention).
        """
        blocks: dict = {}
        for r in self.rows:
            if r.algorithm == algorithm:
                blocks.setdefault((r.bits, r.t_d), []).append(r)
        out = []
        for (bits, t_d), rows in blocks.items():
            if out:
                out.append("")
            out.append(f"# {algorithm} bits={bits} t_d={t_d}: snr_db ser")
            out.extend(f"{r.snr_db:.9g} {r.ser:.9g}" for r in rows)
        return "\n".join(out) + "\n"


def aggregate(cfg: ExperimentConfig, records: list) -> MetricsTable:
    by_point: dict = {}
    for r in records:
        by_point.setdefault(r.point, []).append(r)
    rows = []
    for p in grid(cfg):
        recs = sorted(by_point.get(p, []), key=lambda r: r.trial)
        ok = [r for r in recs if not r.failed]
        symbols = sum(r.symbols for r in ok)
        errors = sum(r.errors for r in ok)
        nm = [r.nmse for r in ok if r.nmse is not None]
        rows.append(MetricsRow(
            algorithm=p.algorithm, channel=cfg.channel.label, snr_db=p.snr_db, bits=p.bits,
            t_p=cfg.t_p, t_d=p.t_d, trials=len(recs), symbols=symbols, errors=errors,
            ser=errors / symbols if symbols else math.nan,
            nmse=math.fsum(nm) / len(nm) if nm else None,
            fail_rate=(len(recs) - len(ok)) / len(recs) if recs else 0.0,
            mean_iters=math.fsum(r.iters for r in ok) / len(ok) if ok else math.nan,
            wall_ms=math.fsum(r.wall_ms for r in recs)))
    pos = {p: i for i, p in enumerate(grid(cfg))}
    ordered = sorted(records, key=lambda r: (r.trial, pos[r.point]))
    return MetricsTable(rows, ordered)


def worker_count() -> int:
    env = os.environ.get("FEWBIT_THREADS", "").strip()
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ValueError(f"FEWBIT_THREADS must be a positive integer, got {env!r}") from None
        if n < 1:
            raise ValueError(f"FEWBIT_THREADS must be a positive integer, got {env!r}")
        return n
    return os.cpu_count() or 1


def run_sweep(cfg: ExperimentConfig, workers: int | None = None, progress=None) -> MetricsTable:
    """Run every grid point for ``cfg.trials`` frames and aggregate.

    Work is split by trial; each work item evaluates all grid points on its
    frame.  The result does not depend on ``workers`` or completion order.
    """
    workers = workers or worker_count()
    points = grid(cfg)
    records = []
    if workers == 1:
        for t in range(cfg.trials):
            records.extend(_run_trial_all(cfg, points, t))
            if progress:
                progress(t + 1, cfg.trials)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futs = [pool.submit(_run_trial_all, cfg, points, t) for t in range(cfg.trials)]
            for done, fut in enumerate(futs, 1):
                records.extend(fut.result())
                if progress:
                    progress(done, cfg.trials)
    return aggregate(cfg, records)
