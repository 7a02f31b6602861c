"""Idle/busy period reconstruction from binary decisions and GP fitting by the
modified method of moments."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .traffic import BUSY, IDLE, STATE_NAMES

log = logging.getLogger(__name__)

ES1, ES2, ES3 = "ES1", "ES2", "ES3"
VARIANTS = (ES1, ES2, ES3)

# Mean corrections in units of the sensing period.
STANDARD_CORRECTIONS: Mapping[str, float] = {ES1: 2.0, ES2: -2.0, ES3: 0.0}
# Constants that remove the reconstruction bias measured under uniform phase.
UNBIASED_CORRECTIONS: Mapping[str, float] = {ES1: 1.0, ES2: -1.0, ES3: 0.0}
CORRECTION_SETS = {"standard": STANDARD_CORRECTIONS, "unbiased": UNBIASED_CORRECTIONS}

LOW_CONFIDENCE_PERIODS = 10


class EstimationError(ValueError):
    """A channel's decisions do not support a fit."""


def _state_code(state) -> int:
    if isinstance(state, str):
        return {"idle": IDLE, "busy": BUSY}[state]
    return int(state)


@dataclass(frozen=True)
class ReconstructedPeriods:
    channel_id: int
    state: int
    variant: str
    values: np.ndarray = field(repr=False)
    sensing_period: float

    def __len__(self) -> int:
        return len(self.values)


def runs(decisions) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Maximal runs of equal decisions as ``(start, length, value)`` arrays."""
    d = np.asarray(decisions, dtype=np.int8)
    if d.size == 0:
        empty = np.zeros(0, dtype=int)
        return empty, empty, empty
    change = np.flatnonzero(d[1:] != d[:-1]) + 1
    starts = np.concatenate(([0], change))
    lengths = np.diff(np.concatenate((starts, [d.size])))
    return starts, lengths, d[starts].astype(int)


def interior_run_lengths(decisions, state) -> np.ndarray:
    """Lengths of runs of ``state`` that touch neither end of the series."""
    starts, lengths, values = runs(decisions)
    n = len(np.asarray(decisions))
    ok = (values == _state_code(state)) & (starts > 0) & (starts + lengths < n)
    return lengths[ok]


def majority_filter(decisions) -> np.ndarray:
    """3-tap majority vote; end samples are kept as is."""
    d = np.asarray(decisions, dtype=np.int8)
    if d.size < 3:
        return d.copy()
    out = d.copy()
    out[1:-1] = ((d[:-2] + d[1:-1] + d[2:]) >= 2).astype(np.int8)
    return out


def reconstruct_periods(decisions, sensing_period: float, state, variant: str = ES3,
                        channel_id: int = 0) -> ReconstructedPeriods:
    """Period length estimates from the interior runs of ``state``.

    A run of ``K`` equal decisions is bracketed by the last opposite sample
    before it and the first after it, giving ``(K-1) Ts`` (ES1), ``(K+1) Ts``
    (ES2) or their average ``K Ts`` (ES3).
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    if len(np.asarray(decisions)) < 3:
        raise ValueError("decision series must have at least 3 samples")
    k = interior_run_lengths(decisions, state).astype(float)
    offset = {ES1: -1.0, ES2: 1.0, ES3: 0.0}[variant]
    return ReconstructedPeriods(channel_id, _state_code(state), variant,
                                (k + offset) * sensing_period, sensing_period)


class RunningMoments:
    """Welford's streaming mean and unbiased variance."""

    def __init__(self):
        self.n = 0
        self.mean = 0.0
        self._m2 = 0.0

    def push(self, value: float) -> None:
        self.n += 1
        delta = value - self.mean
        self.mean += delta / self.n
        self._m2 += delta * (value - self.mean)

    def extend(self, values) -> None:
        for v in values:
            self.push(float(v))

    @property
    def variance(self) -> float:
        if self.n < 2:
            raise EstimationError(f"variance needs at least 2 periods, have {self.n}")
        return self._m2 / (self.n - 1)


def moments(periods) -> tuple[float, float]:
    values = periods.values if isinstance(periods, ReconstructedPeriods) else periods
    acc = RunningMoments()
    acc.extend(values)
    return acc.mean, acc.variance


def correct_moments(mean: float, variance: float, sensing_period: float, variant: str,
                    corrections: Mapping[str, float] = STANDARD_CORRECTIONS) -> tuple[float, float]:
    if variance < 0:
        raise ValueError("variance must be non-negative")
    m = mean + corrections[variant] * sensing_period
    v = max(variance - sensing_period**2 / 6.0, 0.0)
    return m, v


def estimate_min_period(location: float, sensing_period: float) -> float:
    """Location quantized down to the sensing grid."""
    k = math.floor(location / sensing_period + 1e-9)
    if k == 0:
        log.debug("sensing period %g exceeds the minimum period %g; estimate is 0",
                  sensing_period, location)
    return k * sensing_period


@dataclass(frozen=True)
class EstimatedGp:
    shape: float
    scale: float
    location: float
    corrected_mean: float
    corrected_variance: float
    n_periods: int

    @property
    def low_confidence(self) -> bool:
        return self.n_periods < LOW_CONFIDENCE_PERIODS


def fit_gp_mom(corrected_mean: float, corrected_variance: float, location: float,
               n_periods: int = 0) -> EstimatedGp:
    excess = corrected_mean - location
    if not excess > 0:
        raise EstimationError(f"mean {corrected_mean:.6g} does not exceed "
                              f"location {location:.6g}")
    if not corrected_variance > 0:
        raise EstimationError("corrected variance is not positive")
    r = excess**2 / corrected_variance
    return EstimatedGp(0.5 * (1.0 - r), 0.5 * (1.0 + r) * excess, location,
                       corrected_mean, corrected_variance, n_periods)


@dataclass(frozen=True)
class DutyCycleEstimate:
    channel_id: int
    psi_hat: float
    mean_busy: float
    mean_idle: float
    flag: str = ""


def estimate_duty_cycle(idle: ReconstructedPeriods, busy: ReconstructedPeriods,
                        corrections: Mapping[str, float] = STANDARD_CORRECTIONS,
                        decisions=None) -> DutyCycleEstimate:
    """Busy share of the corrected mean period lengths.

    Without periods of both states the channel is flagged and, when the raw
    decisions are given, the busy fraction of the samples is used instead.
    """
    cid = busy.channel_id
    if len(idle) == 0 or len(busy) == 0:
        if decisions is None:
            raise EstimationError("both period sets must be non-empty")
        d = np.asarray(decisions)
        frac = float(d.mean()) if d.size else 0.0
        if frac == 0.0:
            flag = "always-idle"
        elif frac == 1.0:
            flag = "always-busy"
        else:
            flag = "insufficient-periods"
        return DutyCycleEstimate(cid, frac, math.nan, math.nan, flag)
    ts = busy.sensing_period
    mb = float(np.mean(busy.values)) + corrections[busy.variant] * ts
    mi = float(np.mean(idle.values)) + corrections[idle.variant] * ts
    total = mb + mi
    psi = mb / total if total > 0 else 0.0
    return DutyCycleEstimate(cid, min(max(psi, 0.0), 1.0), mb, mi)


@dataclass
class StateFit:
    state: int
    n_periods: int
    fit: EstimatedGp | None = None
    reason: str = ""


@dataclass
class ChannelEstimate:
    channel_id: int
    fits: dict[int, StateFit]
    duty: DutyCycleEstimate


def estimate_channel(decisions, sensing_period: float, locations: Mapping[int, float],
                     *, channel_id: int = 0, variant: str = ES3,
                     corrections: Mapping[str, float] = STANDARD_CORRECTIONS,
                     mu_source: str = "config", use_majority_filter: bool = False
                     ) -> ChannelEstimate:
    """Full per-channel estimate: periods, MMoM fits for both states, duty cycle.

    ``locations`` maps state to the known minimum period used when
    ``mu_source == "config"``; with ``"min"`` the smallest reconstructed period
    is used instead.
    """
    d = np.asarray(decisions, dtype=np.int8)
    if use_majority_filter:
        d = majority_filter(d)
    per = {s: reconstruct_periods(d, sensing_period, s, variant, channel_id)
           for s in (IDLE, BUSY)}
    fits = {}
    for s, p in per.items():
        sf = StateFit(s, len(p))
        try:
            mean, var = moments(p)
            cm, cv = correct_moments(mean, var, sensing_period, variant, corrections)
            if mu_source == "min":
                mu_hat = estimate_min_period(float(p.values.min()), sensing_period)
            else:
                mu_hat = estimate_min_period(locations[s], sensing_period)
            sf.fit = fit_gp_mom(cm, cv, mu_hat, len(p))
        except EstimationError as exc:
            sf.reason = str(exc)
            log.debug("channel %d %s: %s", channel_id, STATE_NAMES[s], exc)
        fits[s] = sf
    duty = estimate_duty_cycle(per[IDLE], per[BUSY], corrections, decisions=d)
    return ChannelEstimate(channel_id, fits, duty)
