"""Monte Carlo campaigns: estimation MSE against the CRLB, and BER.

Random streams
--------------
Every draw is derived from the master seed with :class:`numpy.random.SeedSequence`
spawn keys, so any frame can be replayed on its own:

* ``(0,)``                      training pair (shared by all frames)
* ``(1, frame)``                channel gains, offsets and data symbols
* ``(2, frame, snr_index)``     relay and terminal noise
* ``(3, frame, snr_index)``     DE population seed

Channel and offset draws do not depend on the SNR point, so curves across
SNR use common random numbers.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .crlb import FimInputs, assemble_fim
from .errors import ConfigError, TwrnError
from .estimators import (
    DeConfig,
    EstimationResult,
    GridSpec,
    OmegaBuilder,
    count_complexity,
    de_estimate,
    ml_grid_search,
    ml_two_stage_search,
)
from .receiver import benchmark_detect, cancel_self_interference, count_bit_errors, mmse_detect
from .signal_model import (
    CombinedParams,
    NoiseModel,
    combine_params,
    draw_hop_params,
    generate_data,
    generate_training,
    simulate_round,
)

log = logging.getLogger(__name__)

KINDS = ("mse", "ber", "crlb-only", "complexity")
ESTIMATORS = ("de", "ml")
PARAMS = ("alpha1", "alpha2", "tau1", "tau2", "nu2")
CSV_COLUMNS = (
    ("snr_db",)
    + tuple(f"mse_{p}" for p in PARAMS)
    + tuple(f"crlb_{p}" for p in PARAMS)
    + ("ber_est", "ber_benchmark", "evals")
)


@dataclass
class ExperimentConfig:
    kind: str = "mse"
    snr_db: list = field(default_factory=lambda: [float(s) for s in range(0, 50, 5)])
    frames: int = 600
    L_t: int = 80
    L_d: int = 400
    Q: int = 2
    rolloff: float = 0.3
    span: float = 6
    sigma_h2: float = 1.0
    estimator: str = "de"
    ml_mode: str = "two-stage"
    grid: GridSpec = field(default_factory=GridSpec)
    coarse_grid: GridSpec = field(default_factory=lambda: GridSpec(tau_step=0.05, nu_step=5e-3))
    de: DeConfig = field(default_factory=DeConfig)
    seed: int = 0
    out: str = "results"
    noiseless: bool = False
    keep_trials: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"experiment kind must be one of {KINDS}, got {self.kind!r}")
        if self.estimator not in ESTIMATORS:
            raise ConfigError(f"estimator must be one of {ESTIMATORS}, got {self.estimator!r}")
        if self.ml_mode not in ("two-stage", "full"):
            raise ConfigError(f"ml_mode must be 'two-stage' or 'full', got {self.ml_mode!r}")
        if self.frames < 1 or self.workers < 1:
            raise ConfigError("frames and workers must be positive")
        if self.L_t < 2 or self.L_d < 1 or self.Q < 2:
            raise ConfigError("need L_t >= 2, L_d >= 1 and Q >= 2")
        if not 0 < self.rolloff <= 1 or self.span < 1:
            raise ConfigError("rolloff must lie in (0, 1] and span must be >= 1")
        if not self.snr_db:
            raise ConfigError("snr_db list is empty")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        self.snr_db = [float(s) for s in self.snr_db]

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        try:
            for key in ("grid", "coarse_grid"):
                if key in data:
                    g = dict(data[key])
                    for b in ("tau1_bounds", "tau2_bounds", "nu_bounds"):
                        if b in g:
                            g[b] = tuple(g[b])
                    data[key] = GridSpec(**g)
            if "de" in data:
                data["de"] = DeConfig(**data["de"])
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        text = Path(path).read_text()
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @property
    def geometry(self) -> dict:
        return {"Q": self.Q, "rolloff": self.rolloff, "span": self.span}


@dataclass
class TrialRecord:
    frame: int
    snr_db: float
    truth: CombinedParams
    estimate: EstimationResult | None
    sq_errors: dict
    crlb: dict
    bit_errors_est: int = 0
    bit_errors_benchmark: int = 0
    bits: int = 0
    seed_keys: tuple = ()

    @property
    def evals(self) -> int:
        return 0 if self.estimate is None else self.estimate.evals


@dataclass
class CampaignSummary:
    rows: list
    trials: list = field(default_factory=list)
    complexity: dict | None = None


def _stream(seed: int, *key: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed, spawn_key=key)


def training_pair(config: ExperimentConfig):
    return generate_training(config.L_t, _stream(config.seed, 0), **config.geometry)


def _estimate(config: ExperimentConfig, y, builder: OmegaBuilder, de_seed: int) -> EstimationResult:
    if config.estimator == "de":
        return de_estimate(y, builder, dataclasses.replace(config.de, seed=de_seed))
    if config.ml_mode == "full":
        return ml_grid_search(y, builder, config.grid)
    return ml_two_stage_search(y, builder, config.coarse_grid, config.grid)


def _squared_errors(est: EstimationResult, truth: CombinedParams) -> dict:
    return {
        "alpha1": abs(est.alpha_1 - truth.alpha_1) ** 2,
        "alpha2": abs(est.alpha_2 - truth.alpha_2) ** 2,
        "tau1": (est.tau_1 - truth.tau_1) ** 2,
        "tau2": (est.tau_2 - truth.tau_2) ** 2,
        "nu2": (est.nu_2 - truth.nu_2) ** 2,
    }


def run_frame(config: ExperimentConfig, training, frame: int, snr_index: int) -> TrialRecord:
    """One frame at one SNR point; the whole record is a function of the seeds."""
    snr_db = config.snr_db[snr_index]
    geo = config.geometry
    t1, t2 = training
    draw = np.random.default_rng(_stream(config.seed, 1, frame))
    hop = draw_hop_params(draw, config.sigma_h2)
    d1, bits1 = generate_data(config.L_d, draw)
    d2, bits2 = generate_data(config.L_d, draw)
    noise = NoiseModel.from_snr_db(snr_db, config.sigma_h2)
    truth = combine_params(hop, noise)
    noise_rng = None if config.noiseless else np.random.default_rng(_stream(config.seed, 2, frame, snr_index))
    de_seed = int(_stream(config.seed, 3, frame, snr_index).generate_state(1)[0])
    keys = ((1, frame), (2, frame, snr_index), (3, frame, snr_index))

    bounds = assemble_fim(FimInputs(truth, t1, t2, noise.sigma_u2, **geo)).as_dict()
    crlb = {p: bounds[k] for p, k in zip(PARAMS, ("alpha_1", "alpha_2", "tau_1", "tau_2", "nu_2"))}
    if config.kind == "crlb-only":
        return TrialRecord(frame, snr_db, truth, None, {}, crlb, seed_keys=keys)

    y_tp = simulate_round(t1, t2, hop, noise, noise_rng, **geo)
    est = _estimate(config, y_tp, OmegaBuilder(t1, t2, **geo), de_seed)
    record = TrialRecord(frame, snr_db, truth, est, _squared_errors(est, truth), crlb, seed_keys=keys)
    if config.kind != "ber":
        return record

    y_dtp = simulate_round(d1, d2, hop, noise, noise_rng, **geo)
    z_hat = cancel_self_interference(y_dtp, d1, est.alpha_1, est.tau_1, **geo)
    detected = mmse_detect(z_hat, est.alpha_2, est.tau_2, est.nu_2, noise.sigma_u2, **geo)
    reference = benchmark_detect(z_hat, truth, noise.sigma_u2, **geo)
    record.bit_errors_est, record.bits = count_bit_errors(detected.hard_bits, bits2)
    record.bit_errors_benchmark, _ = count_bit_errors(reference.hard_bits, bits2)
    return record


def _run_frame_checked(args) -> TrialRecord:
    config, training, frame, snr_index = args
    try:
        return run_frame(config, training, frame, snr_index)
    except TwrnError as exc:
        raise type(exc)(f"frame {frame} at {config.snr_db[snr_index]:g} dB: {exc}") from exc


def _run_trials(config: ExperimentConfig) -> list:
    training = training_pair(config)
    jobs = [(config, training, f, s) for s in range(len(config.snr_db)) for f in range(config.frames)]
    if config.workers == 1:
        return [_run_frame_checked(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=config.workers) as pool:
        return list(pool.map(_run_frame_checked, jobs, chunksize=max(1, len(jobs) // (4 * config.workers))))


def summarize(config: ExperimentConfig, trials: list) -> list:
    """Per-SNR averages; the order of ``trials`` does not matter."""
    rows = []
    nan = float("nan")
    for snr in config.snr_db:
        group = sorted((t for t in trials if t.snr_db == snr), key=lambda t: t.frame)
        row = {"snr_db": snr}
        for p in PARAMS:
            errs = [t.sq_errors[p] for t in group if t.sq_errors]
            row[f"mse_{p}"] = float(np.mean(errs)) if errs else nan
        for p in PARAMS:
            row[f"crlb_{p}"] = float(np.mean([t.crlb[p] for t in group]))
        bits = sum(t.bits for t in group)
        row["ber_est"] = sum(t.bit_errors_est for t in group) / bits if bits else nan
        row["ber_benchmark"] = sum(t.bit_errors_benchmark for t in group) / bits if bits else nan
        row["evals"] = sum(t.evals for t in group)
        rows.append(row)
    return rows


def _campaign(config: ExperimentConfig, kind: str) -> CampaignSummary:
    if config.kind != kind:
        raise ConfigError(f"config kind is {config.kind!r}, expected {kind!r}")
    trials = _run_trials(config)
    return CampaignSummary(summarize(config, trials), trials if config.keep_trials else [])


def run_mse_campaign(config: ExperimentConfig) -> CampaignSummary:
    return _campaign(config, "mse")


def run_ber_campaign(config: ExperimentConfig) -> CampaignSummary:
    return _campaign(config, "ber")


def run_crlb_campaign(config: ExperimentConfig) -> CampaignSummary:
    return _campaign(config, "crlb-only")


def run_complexity_report(config: ExperimentConfig) -> CampaignSummary:
    """Operation counts at the configured resolutions; nothing is simulated."""
    report = count_complexity(config.grid, config.de, config.L_t, config.Q)
    return CampaignSummary(rows=[], complexity=dataclasses.asdict(report))


def run_campaign(config: ExperimentConfig) -> CampaignSummary:
    runners = {
        "mse": run_mse_campaign,
        "ber": run_ber_campaign,
        "crlb-only": run_crlb_campaign,
        "complexity": run_complexity_report,
    }
    return runners[config.kind](config)


def snr_at_ber(snr_db, ber, target: float = 1e-2) -> float:
    """SNR where a BER curve first drops to ``target`` (log-linear interpolation).

    Returns ``inf`` if the curve never reaches the target.
    """
    snr_db = np.asarray(snr_db, dtype=float)
    ber = np.asarray(ber, dtype=float)
    if ber[0] <= target:
        return float(snr_db[0])
    for k in range(1, len(ber)):
        if ber[k] <= target:
            lo, hi = ber[k - 1], max(ber[k], 1e-300)
            frac = (math.log10(lo) - math.log10(target)) / (math.log10(lo) - math.log10(hi))
            return float(snr_db[k - 1] + frac * (snr_db[k] - snr_db[k - 1]))
    return float("inf")


# --------------------------------------------------------------------------
# Output
# --------------------------------------------------------------------------

def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def emit_csv(summary: CampaignSummary, path) -> Path:
    path = Path(path)
    if summary.complexity is not None:
        c = summary.complexity
        header = ("method", "evaluations", "flops_per_evaluation", "operations", "ml_to_de_ratio")
        body = [
            ("ml", c["ml_evaluations"], c["flops_per_evaluation"], c["ml_operations"], c["ratio"]),
            ("de", c["de_evaluations"], c["flops_per_evaluation"], c["de_operations"], c["ratio"]),
        ]
        lines = [header] + [(m,) + tuple(_fmt(v) for v in rest) for m, *rest in body]
    else:
        lines = [CSV_COLUMNS] + [tuple(_fmt(row[c]) for c in CSV_COLUMNS) for row in summary.rows]
    with open(path, "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(lines)
    return path


def read_results_csv(path) -> tuple[list, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array([[float(v) for v in r] for r in rows[1:]], dtype=float)


def emit_trials(trials: list, path) -> Path:
    path = Path(path)
    header = ["frame", "snr_db"]
    header += [f"true_{k}" for k in ("alpha1_re", "alpha1_im", "alpha2_re", "alpha2_im", "tau1", "tau2", "nu2")]
    header += [f"est_{k}" for k in ("alpha1_re", "alpha1_im", "alpha2_re", "alpha2_im", "tau1", "tau2", "nu2")]
    header += [f"se_{p}" for p in PARAMS] + [f"crlb_{p}" for p in PARAMS]
    header += ["bit_errors_est", "bit_errors_benchmark", "bits", "evals", "converged"]
    nan = float("nan")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for t in sorted(trials, key=lambda t: (t.snr_db, t.frame)):
            p, e = t.truth, t.estimate
            truth = [p.alpha_1.real, p.alpha_1.imag, p.alpha_2.real, p.alpha_2.imag, p.tau_1, p.tau_2, p.nu_2]
            if e is None:
                est = [nan] * 7
            else:
                est = [e.alpha_1.real, e.alpha_1.imag, e.alpha_2.real, e.alpha_2.imag, e.tau_1, e.tau_2, e.nu_2]
            se = [t.sq_errors.get(k, nan) for k in PARAMS]
            crlb = [t.crlb[k] for k in PARAMS]
            tail = [t.bit_errors_est, t.bit_errors_benchmark, t.bits, t.evals, int(bool(e and e.converged))]
            writer.writerow([t.frame, _fmt(t.snr_db)] + [_fmt(v) for v in truth + est + se + crlb] + tail)
    return path


def emit_metadata(config: ExperimentConfig, path) -> Path:
    path = Path(path)
    meta = {
        "library": "twrn_sync",
        "version": __version__,
        "seed": config.seed,
        "seed_scheme": {
            "training": [0],
            "frame_draws": [1, "frame"],
            "noise": [2, "frame", "snr_index"],
            "de": [3, "frame", "snr_index"],
        },
        "config": config.to_dict(),
    }
    path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path


def config_from_metadata(path) -> ExperimentConfig:
    return ExperimentConfig.from_dict(json.loads(Path(path).read_text())["config"])


def write_outputs(config: ExperimentConfig, summary: CampaignSummary, out_dir=None) -> dict:
    out = Path(out_dir if out_dir is not None else config.out)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "results": emit_csv(summary, out / "results.csv"),
        "metadata": emit_metadata(config, out / "metadata.json"),
    }
    if config.keep_trials and summary.trials:
        paths["trials"] = emit_trials(summary.trials, out / "trials.csv")
    log.info("wrote %s", ", ".join(str(p) for p in paths.values()))
    return paths
