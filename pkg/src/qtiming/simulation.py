"""Seeded Monte Carlo photon-counting experiments.

Random streams
--------------
Every draw comes from numpy's ``Philox`` bit generator (Philox4x64-10, a
counter-based generator) keyed by the 128-bit integer
``seed + (stream << 64)`` with the counter starting at zero. The stream of
repetition ``r`` at truth point ``i`` is ``((i + 1) << 32) | r``; stream 0
is reserved for the calibration data of the calibrated-GLS estimator.
Results are therefore independent of execution order and worker count.
"""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .estimation import (
    DEFAULT_BOUNDS,
    DEFAULT_CAL_COUNTS,
    Estimate,
    bias_variance_report,
    default_calibration_grid,
    estimate_row,
    ESTIMATE_FIELDS,
    fit_response_model,
    invert_gls,
    ml_estimate,
    simulate_calibration,
)
from .information import crlb, direct_fisher, povm_fisher, qfi_matrix
from .measurement import N_CHANNELS, PARAM_NAMES, ChannelProbabilities, ExactForward, ResponseModel
from .pulse_modes import PulseParams, PulseShape

RNG_ALGORITHM = "numpy.random.Philox (Philox4x64-10), key = seed + (stream << 64)"
CALIBRATION_STREAM = 0
DEFAULT_SEED = 20190606
DEFAULT_PHOTONS = 69000
DEFAULT_REPETITIONS = 100
DEFAULT_QS = (0.125, 0.25, 0.5)
#: Ten separations in [0, 2] sigma, denser where direct detection fails.
DEFAULT_TAUS = (0.0, 0.1, 0.2, 0.3, 0.5, 0.75, 1.0, 1.25, 1.5, 2.0)

COUNTING_MODES = ("multinomial", "sequential")
ESTIMATORS = ("ml", "gls", "gls-calibrated")
MIXING_MODES = ("direct", "post-processed")

SUMMARY_FIELDS = ("tau0_true", "tau_true", "q_true", "param", "mean", "bias", "variance",
                  "crlb_direct", "crlb_povm", "crlb_quantum", "n_flagged")
TRACK_FIELDS = ("tau0_true", "tau_true", "q_true", "param", "true_value", "mean", "std",
                "std_error", "direct_std", "quantum_std", "n_flagged")


class InsufficientCountsError(ValueError):
    """A record holds fewer counts than the mixture needs to draw from it."""


def rng_stream(seed: int, stream: int) -> np.random.Generator:
    """Independent generator for ``(seed, stream)``; see the module notes."""
    if not 0 <= seed < 2 ** 64 or not 0 <= stream < 2 ** 64:
        raise ValueError("seed and stream must be unsigned 64-bit integers")
    return np.random.Generator(np.random.Philox(key=seed + (stream << 64)))


def repetition_stream(truth_index: int, rep: int) -> int:
    return ((truth_index + 1) << 32) | rep


def _outcome_probabilities(probs) -> np.ndarray:
    if isinstance(probs, ChannelProbabilities):
        p = probs.as_array()
    else:
        p = np.asarray(probs, dtype=float)
        if p.shape == (N_CHANNELS,):
            p = np.append(p, 1.0 - p.sum())
    if p.shape != (N_CHANNELS + 1,):
        raise ValueError("expected four channel probabilities (plus optional sink)")
    if np.any(p < -1e-12) or abs(p.sum() - 1.0) > 1e-9:
        raise ValueError(f"invalid outcome probabilities {p}")
    return np.clip(p, 0.0, 1.0)


def sample_counts(probs, n: int, rng: np.random.Generator, counting: str = "multinomial",
                  efficiency: float = 1.0) -> np.ndarray:
    """Photon counts for one run: four channel counts and the sink count.

    ``multinomial``: one draw of ``n`` photons over the five outcomes.
    ``sequential``: each channel is measured with ``n // 4`` photons
    (independent binomials); everything not counted in a channel, including
    the ``n - 4 (n // 4)`` leftover photons, is booked to the sink.
    ``efficiency`` scales every channel probability; lost photons go to the
    sink.
    """
    if n < 0 or int(n) != n:
        raise ValueError("photon number must be a non-negative integer")
    n = int(n)
    if not 0.0 < efficiency <= 1.0:
        raise ValueError("efficiency must lie in (0, 1]")
    p = _outcome_probabilities(probs)
    ch = np.clip(efficiency * p[:N_CHANNELS], 0.0, 1.0)
    if counting == "multinomial":
        full = np.append(ch, max(0.0, 1.0 - ch.sum()))
        return rng.multinomial(n, full / full.sum()).astype(np.int64)
    if counting == "sequential":
        m = n // N_CHANNELS
        clicks = rng.binomial(m, ch).astype(np.int64)
        return np.append(clicks, n - clicks.sum())
    raise ValueError(f"unknown counting mode {counting!r}")


def mix_incoherently(counts_a, counts_b, q: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """Post-processed incoherent mixture of two pure-shift records.

    Draws ``round(q n)`` photons without replacement from record A and the
    remaining ``n - round(q n)`` from record B (multivariate hypergeometric
    thinning), outcome by outcome including the sink.
    """
    if not 0.0 <= q <= 1.0:
        raise ValueError("q must lie in [0, 1]")
    a = np.asarray(counts_a, dtype=np.int64)
    b = np.asarray(counts_b, dtype=np.int64)
    n_a = int(round(q * n))
    n_b = int(n) - n_a
    if a.sum() < n_a or b.sum() < n_b:
        raise InsufficientCountsError(
            f"records hold {a.sum()} and {b.sum()} counts, need {n_a} and {n_b}")
    out = np.zeros_like(a)
    if n_a:
        out += rng.multivariate_hypergeometric(a, n_a)
    if n_b:
        out += rng.multivariate_hypergeometric(b, n_b)
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    """A Monte Carlo sweep.

    ``estimator`` is ``ml`` (constrained maximum likelihood), ``gls``
    (GLS inversion of the exact forward model, multinomial only) or
    ``gls-calibrated`` (GLS inversion of a response polynomial fitted to
    simulated calibration data). ``mixing='post-processed'`` records the two
    pure-shift configurations separately (``n`` photons each) and mixes them
    with :func:`mix_incoherently`.
    """

    truth_grid: tuple[PulseParams, ...]
    photons_per_run: int = DEFAULT_PHOTONS
    repetitions: int = DEFAULT_REPETITIONS
    seed: int = DEFAULT_SEED
    counting_mode: str = "multinomial"
    detection_efficiency: float = 1.0
    estimator: str = "ml"
    mixing: str = "direct"
    bounds: tuple = DEFAULT_BOUNDS
    calibration_counts: float = DEFAULT_CAL_COUNTS

    def __post_init__(self):
        object.__setattr__(self, "truth_grid", tuple(self.truth_grid))
        object.__setattr__(self, "bounds", tuple(tuple(float(v) for v in b) for b in self.bounds))
        if self.repetitions < 2:
            raise ValueError("need at least two repetitions")
        if self.photons_per_run < 1:
            raise ValueError("need at least one photon per run")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if self.counting_mode not in COUNTING_MODES:
            raise ValueError(f"counting_mode must be one of {COUNTING_MODES}")
        if not 0.0 < self.detection_efficiency <= 1.0:
            raise ValueError("detection_efficiency must lie in (0, 1]")
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"estimator must be one of {ESTIMATORS}")
        if self.mixing not in MIXING_MODES:
            raise ValueError(f"mixing must be one of {MIXING_MODES}")
        if self.estimator != "ml" and self.counting_mode != "multinomial":
            raise ValueError("GLS estimators need multinomial counting")
        if len(self.truth_grid) >= 2 ** 31 or self.repetitions >= 2 ** 32:
            raise ValueError("grid or repetition count too large for the stream layout")

    def to_json(self) -> dict:
        sigmas = {p.sigma for p in self.truth_grid}
        if len(sigmas) > 1:
            raise ValueError("all truth points must share one pulse width")
        d = {k: v for k, v in asdict(self).items() if k != "truth_grid"}
        d["bounds"] = [list(b) for b in self.bounds]
        d["sigma"] = sigmas.pop() if sigmas else 1.0
        d["truth_grid"] = [[p.tau0, p.tau, p.q] for p in self.truth_grid]
        return d

    @classmethod
    def from_json(cls, doc: dict) -> "ExperimentConfig":
        doc = dict(doc)
        shape = PulseShape(float(doc.pop("sigma", 1.0)))
        grid = tuple(PulseParams(float(a), float(b), float(c), shape) for a, b, c in doc.pop("truth_grid"))
        return cls(truth_grid=grid, **doc)


def default_truth_grid(qs=DEFAULT_QS, taus=DEFAULT_TAUS, tau0: float = 0.0,
                       shape: PulseShape = PulseShape()) -> tuple[PulseParams, ...]:
    """Truth points ordered by ``q`` then ``tau``."""
    return tuple(PulseParams(tau0, float(t), float(q), shape) for q in qs for t in taus)


def default_config(**overrides) -> ExperimentConfig:
    return ExperimentConfig(truth_grid=default_truth_grid(), **overrides)


@dataclass(frozen=True)
class RunResult:
    truth: PulseParams
    counts: np.ndarray
    estimate: Estimate
    truth_index: int = 0
    repetition: int = 0


@dataclass(frozen=True)
class SummaryRow:
    truth: PulseParams
    param: str
    mean: float
    bias: float
    variance: float
    crlb_direct: float
    crlb_povm: float
    crlb_quantum: float
    n_flagged: int
    std_error_mean: float = float("nan")
    std_error_variance: float = float("nan")

    def as_dict(self) -> dict:
        return {"tau0_true": self.truth.tau0, "tau_true": self.truth.tau, "q_true": self.truth.q,
                "param": self.param, "mean": self.mean, "bias": self.bias, "variance": self.variance,
                "crlb_direct": self.crlb_direct, "crlb_povm": self.crlb_povm,
                "crlb_quantum": self.crlb_quantum, "n_flagged": self.n_flagged}


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    runs: list[RunResult] = field(default_factory=list)
    summary: list[SummaryRow] = field(default_factory=list)

    def row(self, truth_index: int, param: str) -> SummaryRow:
        return self.summary[3 * truth_index + PARAM_NAMES.index(param)]


def truth_bounds(p: PulseParams, n: int, counting: str = "multinomial", efficiency: float = 1.0,
                 nuisance: str = "joint", flags: list | None = None) -> dict:
    """CRLB diagonals at ``p`` for the three strategies.

    The direct and quantum bounds use ``efficiency * n`` detected photons; the
    POVM bound includes the efficiency through its outcome probabilities.
    Matrix flags are appended to ``flags`` as ``"<kind>:<flag>"``.
    """
    n_det = efficiency * n
    out = {}
    for kind, f in (("direct", direct_fisher(p, n_det)),
                    ("povm", povm_fisher(p, n_photons=n, counting=counting, efficiency=efficiency)),
                    ("quantum", qfi_matrix(p, n_photons=n_det))):
        if kind == "direct" and p.tau == 0.0:
            # intensity detection has no information on tau at zero separation
            out[kind] = {name: math.inf for name in PARAM_NAMES}
            if flags is not None:
                flags.append("direct:zero_separation")
            continue
        if flags is not None:
            flags.extend(f"{kind}:{fl}" for fl in f.flags)
        if nuisance == "joint":
            c = crlb(f, nuisance="joint")
            out[kind] = {name: c.variance(name) for name in PARAM_NAMES}
        else:
            out[kind] = {name: crlb(f, [name], nuisance="fixed").variance(name) for name in PARAM_NAMES}
    return out


def _calibrated_model(cfg: ExperimentConfig) -> ResponseModel:
    forward = ExactForward(efficiency=cfg.detection_efficiency)
    cal = simulate_calibration(default_calibration_grid(), cfg.calibration_counts,
                               rng_stream(cfg.seed, CALIBRATION_STREAM), forward)
    return fit_response_model(cal).model


def _estimate(cfg: ExperimentConfig, forward, model, counts, shape) -> Estimate:
    n = cfg.photons_per_run
    if cfg.estimator == "ml":
        return ml_estimate(forward, counts, cfg.counting_mode, trials=n // N_CHANNELS,
                           bounds=cfg.bounds, shape=shape)
    freqs = np.asarray(counts, dtype=float) / n
    target = forward if cfg.estimator == "gls" else model
    bounds = cfg.bounds if cfg.estimator == "gls" else None
    return invert_gls(target, freqs, n, bounds=bounds, shape=shape)


def _run_truth_point(args) -> tuple[list[RunResult], list[SummaryRow]]:
    cfg, index, model = args
    truth = cfg.truth_grid[index]
    theta = truth.dimensionless()
    forward = ExactForward(efficiency=cfg.detection_efficiency)
    ideal = ExactForward()
    n = cfg.photons_per_run
    runs = []
    for rep in range(cfg.repetitions):
        rng = rng_stream(cfg.seed, repetition_stream(index, rep))
        if cfg.mixing == "direct":
            counts = sample_counts(ideal.probabilities(theta), n, rng, cfg.counting_mode,
                                   cfg.detection_efficiency)
        else:
            pure_a = ideal.probabilities((theta[0], theta[1], 1.0))
            pure_b = ideal.probabilities((theta[0], theta[1], 0.0))
            rec_a = sample_counts(pure_a, n, rng, cfg.counting_mode, cfg.detection_efficiency)
            rec_b = sample_counts(pure_b, n, rng, cfg.counting_mode, cfg.detection_efficiency)
            if cfg.counting_mode == "multinomial":
                counts = mix_incoherently(rec_a, rec_b, truth.q, n, rng)
            else:
                # mix each channel's binomial record separately, clicks vs misses
                m = n // N_CHANNELS
                counts = np.zeros(N_CHANNELS + 1, dtype=np.int64)
                for j in range(N_CHANNELS):
                    pair_a = np.array([rec_a[j], m - rec_a[j]])
                    pair_b = np.array([rec_b[j], m - rec_b[j]])
                    counts[j] = mix_incoherently(pair_a, pair_b, truth.q, m, rng)[0]
                counts[N_CHANNELS] = n - counts[:N_CHANNELS].sum()
        est = _estimate(cfg, forward, model, counts, truth.shape)
        runs.append(RunResult(truth, counts, est, index, rep))

    report = bias_variance_report([r.estimate for r in runs], truth)
    bounds = truth_bounds(truth, n, cfg.counting_mode, cfg.detection_efficiency)
    n_flagged = sum(r.estimate.flagged for r in runs)
    rows = [SummaryRow(truth, name, s.mean, s.bias, s.variance, bounds["direct"][name],
                       bounds["povm"][name], bounds["quantum"][name], n_flagged, s.se_mean, s.se_variance)
            for name, s in report.items()]
    return runs, rows


def run_experiment(cfg: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    """Run every truth point of ``cfg``; ``threads > 1`` uses worker processes.

    Flagged estimates stay in the sample and are counted in ``n_flagged``.
    """
    model = _calibrated_model(cfg) if cfg.estimator == "gls-calibrated" else None
    jobs = [(cfg, i, model) for i in range(len(cfg.truth_grid))]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(_run_truth_point, jobs))
    else:
        parts = [_run_truth_point(j) for j in jobs]
    result = ExperimentResult(cfg)
    for runs, rows in parts:
        result.runs.extend(runs)
        result.summary.extend(rows)
    return result


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return repr(float(v))


def _write_rows(path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def write_summary(path, result: ExperimentResult) -> None:
    _write_rows(path, SUMMARY_FIELDS, ([row.as_dict()[k] for k in SUMMARY_FIELDS] for row in result.summary))


def write_tracks(path, result: ExperimentResult) -> None:
    """Estimate tracks: truth against sample mean and spread per parameter."""
    def rows():
        for row in result.summary:
            t = row.truth
            true_value = {"tau0": t.tau0, "tau": t.tau, "q": t.q}[row.param]
            yield (t.tau0, t.tau, t.q, row.param, true_value, row.mean, math.sqrt(row.variance),
                   row.std_error_mean, math.sqrt(row.crlb_direct), math.sqrt(row.crlb_quantum), row.n_flagged)
    _write_rows(path, TRACK_FIELDS, rows())


def write_runs(path, result: ExperimentResult) -> None:
    header = ["truth_index", "repetition", "tau0_true", "tau_true", "q_true", "n0", "n1", "n2", "n3",
              "n_sink"] + ESTIMATE_FIELDS
    def rows():
        for r in result.runs:
            yield ([r.truth_index, r.repetition, r.truth.tau0, r.truth.tau, r.truth.q]
                   + [int(c) for c in r.counts] + estimate_row(r.estimate))
    _write_rows(path, header, rows())


def write_sidecar(path, cfg: ExperimentConfig) -> None:
    doc = {"config": cfg.to_json(), "seed": cfg.seed, "rng": RNG_ALGORITHM}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
