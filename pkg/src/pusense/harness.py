"""End-to-end pipeline and parameter sweeps.

traffic -> snapshots -> compression + BPDN (or full-rate energy detection)
-> decision series -> period reconstruction -> MMoM fit -> KS / RMSE.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, seeding
from .estimator import CORRECTION_SETS, VARIANTS, estimate_channel
from .metrics import EvalReport, group_mean_ks, ks_distance, rmse_duty_cycles
from .sensing import (MeasurementOperator, RecoverySettings, binarize,
                      build_measurement_operator, calibrate_threshold,
                      default_penalty, energy_threshold, recover_bpdn)
from .synth import AMPLITUDE_LAWS, CONSTANT_MODULUS, NoiseModel, synthesize_block
from .traffic import (BUSY, DEFAULT_GROUPS, IDLE, STATE_NAMES, SpectrumPlan,
                      build_channel_plan, generate_trace, sample_occupancy)

log = logging.getLogger(__name__)

WORKERS_ENV = "PUSENSE_WORKERS"
AXES = {"ratio": "compression_ratio", "ts": "sensing_period", "duration": "sensing_duration"}
THRESHOLD_MODES = ("noise-relative", "calibrated", "fixed")
OPERATORS = ("gaussian", "dft")   # "dft" makes the composite operator the identity (M = N)
COMPRESSIVE, NYQUIST = "compressive", "nyquist"


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    master_seed: int = 2024
    n_channels: int = 128
    groups: list = field(default_factory=lambda: [list(g) for g in DEFAULT_GROUPS])
    target_mean_dc: float = 0.1
    snr_db: float = 30.0
    signal_power: float = 1.0
    amplitude_law: str = CONSTANT_MODULUS
    sensing_duration: float = 7200.0
    sensing_period: float = 0.5
    compression_ratio: float = 0.6
    # recovery
    penalty: float | None = None          # None -> universal threshold * penalty_scale
    penalty_scale: float = 1.0
    max_iterations: int = 500
    convergence_tol: float = 1e-6
    momentum: bool = True
    redraw_operator: bool = False
    operator: str = "gaussian"
    # detection
    threshold_mode: str = "noise-relative"
    threshold_db: float = 20.0            # noise-relative: tau = max(sigma^2 * g, P / g), g = 10^(dB/10)
    p_fa: float = 0.01                    # calibrated mode
    threshold: float | None = None        # fixed mode
    calibration_snapshots: int = 2000
    # estimation
    variant: str = "ES3"
    corrections: str = "standard"
    mu_source: str = "config"
    majority_filter: bool = False
    ks_excluded_groups: list = field(default_factory=lambda: [0.01, 0.9])
    # sweep
    sweep_axis: str | None = None
    sweep_values: list = field(default_factory=list)
    replicates: int = 5
    chunk_size: int = 2048
    output: str = "results"

    def validate(self) -> "ExperimentConfig":
        if not 0 < self.compression_ratio <= 1:
            raise ConfigError("compression_ratio must lie in (0, 1]")
        if not self.sensing_period > 0:
            raise ConfigError("sensing_period must be positive")
        if not self.sensing_duration > 0:
            raise ConfigError("sensing_duration must be positive")
        if self.sensing_duration < 100 * self.sensing_period:
            log.warning("sensing duration %.4g s is shorter than 100 sensing periods; "
                        "estimates will be low-confidence", self.sensing_duration)
        if self.amplitude_law not in AMPLITUDE_LAWS:
            raise ConfigError(f"amplitude_law must be one of {AMPLITUDE_LAWS}")
        if self.operator not in OPERATORS:
            raise ConfigError(f"operator must be one of {OPERATORS}")
        if self.operator == "dft" and self.n_measurements != self.n_channels:
            raise ConfigError("the dft operator needs compression_ratio = 1")
        if self.threshold_mode not in THRESHOLD_MODES:
            raise ConfigError(f"threshold_mode must be one of {THRESHOLD_MODES}")
        if self.threshold_mode == "fixed" and not (self.threshold and self.threshold > 0):
            raise ConfigError("fixed threshold mode needs threshold > 0")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}")
        if self.corrections not in CORRECTION_SETS:
            raise ConfigError(f"corrections must be one of {sorted(CORRECTION_SETS)}")
        if self.mu_source not in ("config", "min"):
            raise ConfigError("mu_source must be 'config' or 'min'")
        if self.sweep_axis is not None:
            if self.sweep_axis not in AXES:
                raise ConfigError(f"sweep_axis must be one of {sorted(AXES)}")
            if not self.sweep_values:
                raise ConfigError("sweep_values must be non-empty")
            for v in self.sweep_values:
                dataclasses.replace(self, sweep_axis=None,
                                    **{AXES[self.sweep_axis]: v}).validate()
        if self.replicates < 1 or self.chunk_size < 1:
            raise ConfigError("replicates and chunk_size must be >= 1")
        return self

    @property
    def n_samples(self) -> int:
        return int(math.floor(self.sensing_duration / self.sensing_period + 1e-9))

    @property
    def n_measurements(self) -> int:
        return max(1, min(self.n_channels, int(round(self.compression_ratio * self.n_channels))))

    @property
    def noise(self) -> NoiseModel:
        return NoiseModel.from_snr(self.snr_db, self.signal_power)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                return cls.from_dict(json.load(fh))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc


def build_plan(config: ExperimentConfig) -> SpectrumPlan:
    return build_channel_plan(config.n_channels, config.groups, config.target_mean_dc)


def recovery_settings(config: ExperimentConfig) -> RecoverySettings:
    noise = config.noise
    # noiseless runs still need a penalty that sparsifies within max_iterations
    floor = 1e-6 * noise.signal_power
    pen = config.penalty or default_penalty(max(noise.noise_variance, floor),
                                            config.n_channels, config.penalty_scale)
    return RecoverySettings(penalty=pen, max_iterations=config.max_iterations,
                            convergence_tol=config.convergence_tol,
                            threshold=detection_threshold(config), momentum=config.momentum)


def detection_threshold(config: ExperimentConfig, op: MeasurementOperator | None = None,
                        settings: RecoverySettings | None = None,
                        replicate: int = 0) -> float:
    """Decision threshold on ``|X|^2``.

    ``op`` selects the compressive path in calibrated mode; without it the
    analytic full-rate threshold is returned.
    """
    noise = config.noise
    if config.threshold_mode == "fixed":
        return float(config.threshold)
    if config.threshold_mode == "noise-relative":
        # threshold_db above the noise, but never closer than that to the signal
        gap = 10.0 ** (config.threshold_db / 10.0)
        return max(noise.noise_variance * gap, noise.signal_power / gap)
    if op is None:
        return energy_threshold(noise.noise_variance, config.p_fa)
    return calibrate_threshold(op, settings, noise, config.p_fa,
                               n_snapshots=config.calibration_snapshots,
                               master_seed=config.master_seed, replicate=replicate)


def occupancy_matrix(config: ExperimentConfig, plan: SpectrumPlan, replicate: int) -> np.ndarray:
    v = config.n_samples
    occ = np.empty((plan.n_channels, v), dtype=np.int8)
    for p in plan.profiles:
        rng = seeding.stream(config.master_seed, seeding.TRAFFIC, replicate, p.channel_id)
        trace = generate_trace(p, config.sensing_duration, rng)
        occ[p.channel_id] = sample_occupancy(trace, config.sensing_period, v)
    return occ


def _solve_chunk(task):
    config, op, settings, tau, occ, t0, paths, replicate = task
    noise = config.noise
    X = synthesize_block(occ, noise, config.master_seed, range(t0, t0 + occ.shape[1]),
                         replicate=replicate, law=config.amplitude_law)
    out = {}
    if NYQUIST in paths:
        out[NYQUIST] = binarize(X, tau[NYQUIST])
    if COMPRESSIVE in paths:
        if config.redraw_operator and config.operator == "gaussian":
            cols = []
            for j in range(X.shape[1]):
                op_t = _redrawn_operator(config, replicate, t0 + j)
                res = recover_bpdn(op_t, op_t.composite @ X[:, j], settings)
                cols.append(res.X)
            X_hat = np.stack(cols, axis=1)
        else:
            X_hat = recover_bpdn(op, op.composite @ X, settings).X
        out[COMPRESSIVE] = binarize(X_hat, tau[COMPRESSIVE])
    return out


def _redrawn_operator(config, replicate, time_index):
    n, m = config.n_channels, config.n_measurements
    g = seeding.stream(config.master_seed, seeding.OPERATOR, replicate, n,
                       time_index + 1).standard_normal((m, n))
    return MeasurementOperator.from_matrix(g / math.sqrt(m), seed=config.master_seed)


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer") from None


def simulate_decisions(config: ExperimentConfig, replicate: int,
                       paths=(COMPRESSIVE,), plan: SpectrumPlan | None = None,
                       workers: int | None = None) -> dict:
    """Decision matrices (``N x V``) for each detector path on shared realizations."""
    plan = plan or build_plan(config)
    occ = occupancy_matrix(config, plan, replicate)
    settings = recovery_settings(config)
    op = None
    tau = {}
    if COMPRESSIVE in paths:
        if config.operator == "dft":
            op = MeasurementOperator.identity_composite(config.n_channels)
        else:
            op = build_measurement_operator(config.n_measurements, config.n_channels,
                                            config.master_seed, replicate)
        tau[COMPRESSIVE] = detection_threshold(config, op, settings, replicate)
    if NYQUIST in paths:
        tau[NYQUIST] = detection_threshold(config)
    settings = dataclasses.replace(settings, threshold=tau.get(COMPRESSIVE, settings.threshold))
    v, cs = occ.shape[1], config.chunk_size
    tasks = [(config, op, settings, tau, occ[:, s:s + cs], s, tuple(paths), replicate)
             for s in range(0, v, cs)]
    workers = workers or worker_count()
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_solve_chunk, tasks))
    else:
        results = [_solve_chunk(t) for t in tasks]
    return {p: np.concatenate([r[p] for r in results], axis=1) for p in paths}, occ, tau


def evaluate(config: ExperimentConfig, plan: SpectrumPlan, decisions: np.ndarray,
             replicate: int = 0) -> EvalReport:
    corrections = CORRECTION_SETS[config.corrections]
    point = (config.compression_ratio, config.sensing_period, config.sensing_duration)
    report = EvalReport(point, seed=config.master_seed, replicate=replicate)
    skip_groups = {float(g) for g in config.ks_excluded_groups}
    group_of = {p.channel_id: p.psi_group for p in plan.profiles}
    excluded = set()
    psi_true, psi_hat = [], []
    for p in plan.profiles:
        est = estimate_channel(decisions[p.channel_id], config.sensing_period,
                               {BUSY: p.busy.location, IDLE: p.idle.location},
                               channel_id=p.channel_id, variant=config.variant,
                               corrections=corrections, mu_source=config.mu_source,
                               use_majority_filter=config.majority_filter)
        psi_true.append(p.duty_cycle)
        psi_hat.append(est.duty.psi_hat)
        for s in (BUSY, IDLE):
            sf = est.fits[s]
            name = STATE_NAMES[s]
            d = math.nan
            status = "ok"
            if sf.fit is None:
                status = "excluded:" + sf.reason
            else:
                d = ks_distance(p.params(s), sf.fit)
                if p.psi_group in skip_groups:
                    status = "excluded:extreme-duty-cycle"
                elif sf.fit.low_confidence:
                    status = "low-confidence"
            if status.startswith("excluded"):
                excluded.add((p.channel_id, name))
                report.excluded_channels.append((p.channel_id, name, status[9:]))
            report.per_channel_ks.append((p.channel_id, name, d))
            f = sf.fit
            report.channel_rows.append({
                "channel_id": p.channel_id, "psi_group": p.psi_group, "state": name,
                "variant": config.variant,
                "alpha_hat": f.shape if f else math.nan,
                "lambda_hat": f.scale if f else math.nan,
                "mu_hat": f.location if f else math.nan,
                "mean": f.corrected_mean if f else math.nan,
                "var": f.corrected_variance if f else math.nan,
                "n_periods": sf.n_periods, "psi_true": p.duty_cycle,
                "psi_hat": est.duty.psi_hat, "duty_flag": est.duty.flag,
                "ks": d, "status": status})
    report.group_mean_ks = group_mean_ks(report.per_channel_ks, group_of, excluded)
    combined = group_mean_ks([(c, "combined", d) for c, s, d in report.per_channel_ks
                              if (c, s) not in excluded], group_of)
    report.group_mean_ks.update(combined)
    report.duty_rmse = rmse_duty_cycles(psi_true, psi_hat)
    groups = sorted(set(group_of.values()))
    pt, ph = np.array(psi_true), np.array(psi_hat)
    g_arr = np.array([group_of[c] for c in range(len(pt))])
    report.group_duty_rmse = {g: rmse_duty_cycles(pt[g_arr == g], ph[g_arr == g])
                              for g in groups}
    return report


def run_point(config: ExperimentConfig, replicate: int = 0,
              workers: int | None = None) -> EvalReport:
    """One sweep point through the compressive pipeline."""
    config.validate()
    plan = build_plan(config)
    dec, _, _ = simulate_decisions(config, replicate, (COMPRESSIVE,), plan, workers)
    return evaluate(config, plan, dec[COMPRESSIVE], replicate)


def run_baseline_pair(config: ExperimentConfig, replicate: int = 0,
                      workers: int | None = None) -> tuple[EvalReport, EvalReport]:
    """Compressive and full-rate reports on identical traffic and noise."""
    config.validate()
    plan = build_plan(config)
    dec, _, _ = simulate_decisions(config, replicate, (COMPRESSIVE, NYQUIST), plan, workers)
    return (evaluate(config, plan, dec[COMPRESSIVE], replicate),
            evaluate(config, plan, dec[NYQUIST], replicate))


# ---------------------------------------------------------------- CSV output

def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    if isinstance(x, (np.floating,)):
        return repr(float(x))
    return str(x)


CHANNEL_COLUMNS = ["compression_ratio", "T_s", "duration_s", "seed", "replicate",
                   "channel_id", "psi_group", "state", "variant", "alpha_hat",
                   "lambda_hat", "mu_hat", "mean", "var", "n_periods", "psi_true",
                   "psi_hat", "duty_flag", "ks", "status"]
SUMMARY_COLUMNS = ["compression_ratio", "T_s", "duration_s", "psi_group", "state",
                   "mean_ks", "duty_rmse", "n_excluded", "seed"]


def channel_csv(report: EvalReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CHANNEL_COLUMNS)
    r, ts, dur = report.sweep_point
    for row in report.channel_rows:
        w.writerow([_fmt(x) for x in (float(r), float(ts), float(dur), report.seed,
                                      report.replicate)]
                   + [_fmt(row[c]) for c in CHANNEL_COLUMNS[5:]])
    return buf.getvalue()


def summary_rows(report: EvalReport) -> list[list]:
    r, ts, dur = report.sweep_point
    n_exc = len(report.excluded_channels)
    rows = []
    for (g, state), m in sorted(report.group_mean_ks.items()):
        rows.append([float(r), float(ts), float(dur), float(g), state, float(m),
                     float(report.duty_rmse), n_exc, report.seed])
    # duty-cycle RMSE over every channel, independent of KS grouping
    rows.append([float(r), float(ts), float(dur), "all", "all", math.nan,
                 float(report.duty_rmse), n_exc, report.seed])
    return rows


def summary_csv(report: EvalReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for row in summary_rows(report):
        w.writerow([_fmt(x) for x in row])
    return buf.getvalue()


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


def write_manifest(config: ExperimentConfig, out_dir: Path, started: float, **extra) -> None:
    manifest = {
        "software_version": __version__,
        "config": config.to_dict(),
        "plan": build_plan(config).to_dict(),
        "operator_seed": {"master_seed": config.master_seed,
                          "stream": [seeding.OPERATOR, "replicate", config.n_channels]},
        "wall_clock": {"started": time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(started)),
                       "elapsed_s": round(time.time() - started, 3)},
        **extra,
    }
    _write(out_dir / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------- sweeps

def point_label(axis: str, value, replicate: int) -> str:
    return f"{axis}={float(value)!r}_rep{replicate}"


def _read_summary(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


SWEEP_COLUMNS = ["axis", "value", "compression_ratio", "T_s", "duration_s", "psi_group",
                 "state", "mean_ks", "mean_ks_std", "duty_rmse", "duty_rmse_std",
                 "n_excluded_mean", "n_replicates"]


def _mean(xs) -> float:
    return float(np.mean(xs))


def _std(xs) -> float:
    # NaN entries (e.g. the KS column of the all-channel row) propagate
    return float(np.std(xs, ddof=1)) if len(xs) > 1 else 0.0


def aggregate_sweep(out_dir: Path, axis: str) -> str:
    """Mean and standard deviation across replicates of every point summary file."""
    groups: dict = {}
    for path in sorted((out_dir / "points").glob(f"{axis}=*_rep*.summary.csv")):
        value = float(path.name.split("=", 1)[1].split("_rep")[0])
        for row in _read_summary(path):
            key = (value, row["compression_ratio"], row["T_s"], row["duration_s"],
                   row["psi_group"], row["state"])
            groups.setdefault(key, []).append(row)

    def _key(k):
        g = k[4]
        return (k[0], math.inf if g == "all" else float(g), k[5])

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for key in sorted(groups, key=_key):
        rows = groups[key]
        ks = [float(r["mean_ks"]) for r in rows]
        rm = [float(r["duty_rmse"]) for r in rows]
        ne = [float(r["n_excluded"]) for r in rows]
        w.writerow([_fmt(x) for x in (axis, key[0], *key[1:4], key[4], key[5],
                                      _mean(ks), _std(ks), _mean(rm), _std(rm),
                                      _mean(ne), len(rows))])
    return buf.getvalue()


def run_sweep(config: ExperimentConfig, workers: int | None = None) -> Path:
    """Run every (axis value, replicate) point; reuse point files already on disk."""
    config.validate()
    if config.sweep_axis is None:
        raise ConfigError("sweep needs sweep_axis and sweep_values")
    started = time.time()
    out_dir = Path(config.output)
    axis = config.sweep_axis
    for value in config.sweep_values:
        point_cfg = dataclasses.replace(config, sweep_axis=None, sweep_values=[],
                                        **{AXES[axis]: value})
        for rep in range(config.replicates):
            label = point_label(axis, value, rep)
            chan_path = out_dir / "points" / f"{label}.csv"
            sum_path = out_dir / "points" / f"{label}.summary.csv"
            if chan_path.exists() and sum_path.exists():
                log.info("reusing %s", label)
                continue
            log.info("running %s", label)
            report = run_point(point_cfg, rep, workers)
            _write(chan_path, channel_csv(report))
            _write(sum_path, summary_csv(report))
    summary = out_dir / f"sweep_{axis}.csv"
    _write(summary, aggregate_sweep(out_dir, axis))
    write_manifest(config, out_dir, started, sweep_summary=summary.name)
    return summary


def read_sweep(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


COMPARISON_COLUMNS = ["replicate", "psi_group", "state", "mean_ks_compressive",
                      "mean_ks_nyquist", "ks_diff", "rmse_compressive", "rmse_nyquist",
                      "rmse_diff"]
PAIRED_COLUMNS = ["replicate", "channel_id", "psi_group", "state", "ks_compressive",
                  "ks_nyquist", "psi_true", "psi_hat_compressive", "psi_hat_nyquist"]


def comparison_rows(cs: EvalReport, ny: EvalReport) -> tuple[list, list]:
    rows = []
    for key in sorted(set(cs.group_mean_ks) | set(ny.group_mean_ks)):
        g, state = key
        kc, kn = cs.group_mean_ks.get(key, math.nan), ny.group_mean_ks.get(key, math.nan)
        rc, rn = cs.group_duty_rmse[g], ny.group_duty_rmse[g]
        rows.append([cs.replicate, float(g), state, kc, kn, kc - kn, rc, rn, rc - rn])
    rows.append([cs.replicate, "all", "all", math.nan, math.nan, math.nan,
                 cs.duty_rmse, ny.duty_rmse, cs.duty_rmse - ny.duty_rmse])
    paired = []
    for a, b in zip(cs.channel_rows, ny.channel_rows):
        paired.append([cs.replicate, a["channel_id"], a["psi_group"], a["state"], a["ks"],
                       b["ks"], a["psi_true"], a["psi_hat"], b["psi_hat"]])
    return rows, paired


def run_baseline_comparison(config: ExperimentConfig, workers: int | None = None) -> Path:
    """Compressive path at the configured ratio against full-rate detection."""
    config.validate()
    started = time.time()
    out_dir = Path(config.output)
    rows, paired = [], []
    for rep in range(config.replicates):
        cs, ny = run_baseline_pair(config, rep, workers)
        r, p = comparison_rows(cs, ny)
        rows += r
        paired += p
    for name, cols, data in (("comparison.csv", COMPARISON_COLUMNS, rows),
                             ("comparison_channels.csv", PAIRED_COLUMNS, paired)):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for row in data:
            w.writerow([_fmt(x) for x in row])
        _write(out_dir / name, buf.getvalue())
    write_manifest(config, out_dir, started, comparison="comparison.csv")
    return out_dir / "comparison.csv"
