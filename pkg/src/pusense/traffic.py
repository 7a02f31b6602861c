"""Primary-user traffic: GP holding times, channel plans and on/off traces."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

IDLE = 0
BUSY = 1
STATE_NAMES = {IDLE: "idle", BUSY: "busy"}

# Below this |shape| the exponential limit of the GP law is used.
SMALL_SHAPE = 1e-8


class PlanError(ValueError):
    """Raised when a channel plan cannot satisfy its constraints."""


@dataclass(frozen=True)
class GpParams:
    """Generalized Pareto holding-time law (location, scale, shape)."""

    location: float
    scale: float
    shape: float

    def __post_init__(self):
        if not self.location > 0:
            raise ValueError(f"location must be > 0, got {self.location}")
        if not self.scale > 0:
            raise ValueError(f"scale must be > 0, got {self.scale}")
        if not self.shape < 0.5:
            raise ValueError(f"shape must be < 1/2, got {self.shape}")

    @property
    def upper(self) -> float:
        """Upper end of the support (``inf`` unless shape < 0)."""
        if self.shape < 0:
            return self.location - self.scale / self.shape
        return math.inf

    def to_dict(self) -> dict:
        return {"location": self.location, "scale": self.scale, "shape": self.shape}


def sample_gp(params: GpParams, u):
    """Inverse-CDF transform of uniform variate(s) ``u`` in [0, 1).

    Accepts scalars or arrays; returns the same shape.
    """
    u = np.asarray(u, dtype=float)
    mu, lam, a = params.location, params.scale, params.shape
    log_tail = np.log1p(-u)  # ln(1-u), exact near u=0
    if abs(a) < SMALL_SHAPE:
        t = mu - lam * log_tail
    else:
        # (1-u)^(-a) - 1 == expm1(-a ln(1-u)); avoids cancellation for small a
        t = mu + (lam / a) * np.expm1(-a * log_tail)
    return t if t.ndim else float(t)


def gp_moments(params: GpParams) -> tuple[float, float]:
    mu, lam, a = params.location, params.scale, params.shape
    mean = mu + lam / (1.0 - a)
    var = lam**2 / ((1.0 - a) ** 2 * (1.0 - 2.0 * a))
    return mean, var


def gp_mean(params: GpParams) -> float:
    return params.location + params.scale / (1.0 - params.shape)


def duty_cycle_of(busy: GpParams, idle: GpParams) -> float:
    """Long-run busy fraction of an alternating renewal process."""
    eb, ei = gp_mean(busy), gp_mean(idle)
    return eb / (eb + ei)


def solve_scale_for_dc(psi: float, location: float, shape: float,
                       cycle_mean: float) -> tuple[GpParams, GpParams]:
    """Pick busy/idle scales so that a cycle of mean ``cycle_mean`` has duty ``psi``."""
    if not 0.0 < psi < 1.0:
        raise PlanError(f"duty cycle must lie in (0, 1), got {psi}")
    mean_busy = psi * cycle_mean
    mean_idle = (1.0 - psi) * cycle_mean
    for name, m in (("busy", mean_busy), ("idle", mean_idle)):
        if m <= location:
            raise PlanError(
                f"{name} mean {m:.6g} s does not exceed location {location} s "
                f"(psi={psi}, cycle_mean={cycle_mean})")
    busy = GpParams(location, (mean_busy - location) * (1.0 - shape), shape)
    idle = GpParams(location, (mean_idle - location) * (1.0 - shape), shape)
    return busy, idle


# Tabled (busy, idle) parameter rows, keyed by nominal duty cycle.
TABLE_ROWS: dict[float, tuple[GpParams, GpParams]] = {
    0.29: (GpParams(0.5, 0.35, 0.0094), GpParams(0.5, 1.55, 0.0134)),
    0.5: (GpParams(0.5, 0.5, 0.010), GpParams(0.5, 0.5, 0.010)),
    0.71: (GpParams(0.5, 1.28, 0.011), GpParams(0.5, 0.22, 0.0099)),
}
# A group label matches a tabled row when within this distance (0.3 -> 0.29).
TABLE_MATCH_TOL = 0.0125

DEFAULT_GROUPS: tuple[tuple[float, int], ...] = (
    (0.01, 59), (0.05, 30), (0.1, 21), (0.3, 9), (0.5, 4), (0.7, 3), (0.9, 2))
DEFAULT_LOCATION = 0.5
DEFAULT_SHAPE = 0.01
# Mean of the minority state for non-tabled groups; equals the DC=0.5 row mean,
# so a duty cycle of 0.5 yields a cycle mean of 2.0101 s.
DEFAULT_MINORITY_MEAN = 0.5 + 0.5 / (1.0 - 0.01)


def table_row(psi_group: float):
    for dc, row in TABLE_ROWS.items():
        if abs(dc - psi_group) <= TABLE_MATCH_TOL:
            return row
    return None


@dataclass(frozen=True)
class ChannelProfile:
    channel_id: int
    psi_group: float
    busy: GpParams
    idle: GpParams

    @property
    def duty_cycle(self) -> float:
        return duty_cycle_of(self.busy, self.idle)

    def params(self, state: int) -> GpParams:
        return self.busy if state == BUSY else self.idle

    def to_dict(self) -> dict:
        return {"channel_id": self.channel_id, "psi_group": self.psi_group,
                "duty_cycle": self.duty_cycle,
                "busy": self.busy.to_dict(), "idle": self.idle.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "ChannelProfile":
        return cls(int(d["channel_id"]), float(d["psi_group"]),
                   GpParams(**d["busy"]), GpParams(**d["idle"]))


@dataclass(frozen=True)
class SpectrumPlan:
    n_channels: int
    group_duty_cycles: tuple[float, ...]
    group_counts: tuple[int, ...]
    profiles: tuple[ChannelProfile, ...] = field(repr=False)
    target_mean: float = 0.1

    @property
    def mean_duty_cycle(self) -> float:
        return float(np.mean([p.duty_cycle for p in self.profiles]))

    def to_dict(self) -> dict:
        return {"n_channels": self.n_channels,
                "target_mean": self.target_mean,
                "mean_duty_cycle": self.mean_duty_cycle,
                "groups": [[g, c] for g, c in zip(self.group_duty_cycles, self.group_counts)],
                "profiles": [p.to_dict() for p in self.profiles]}

    @classmethod
    def from_dict(cls, d: dict) -> "SpectrumPlan":
        groups = d["groups"]
        return cls(int(d["n_channels"]),
                   tuple(float(g) for g, _ in groups),
                   tuple(int(c) for _, c in groups),
                   tuple(ChannelProfile.from_dict(p) for p in d["profiles"]),
                   float(d.get("target_mean", 0.1)))


def build_channel_plan(n_channels: int, groups: Iterable[Sequence[float]],
                       target_mean: float, *, location: float = DEFAULT_LOCATION,
                       shape: float = DEFAULT_SHAPE,
                       minority_mean: float = DEFAULT_MINORITY_MEAN,
                       tolerance: float = 0.005) -> SpectrumPlan:
    """Assign every channel the GP profile of its duty-cycle group.

    Groups near a tabled duty cycle reuse that row verbatim.  Other groups get
    scales from :func:`solve_scale_for_dc` with a cycle mean chosen so the
    shorter of the two states has mean ``minority_mean``.
    """
    groups = [(float(g), int(c)) for g, c in groups]
    if sum(c for _, c in groups) != n_channels:
        raise PlanError(f"group counts sum to {sum(c for _, c in groups)}, "
                        f"expected {n_channels}")
    profiles = []
    for psi, count in groups:
        row = table_row(psi)
        if row is None:
            cycle_mean = minority_mean / min(psi, 1.0 - psi)
            row = solve_scale_for_dc(psi, location, shape, cycle_mean)
        for _ in range(count):
            profiles.append(ChannelProfile(len(profiles), psi, *row))
    plan = SpectrumPlan(n_channels, tuple(g for g, _ in groups),
                        tuple(c for _, c in groups), tuple(profiles), target_mean)
    achieved = plan.mean_duty_cycle
    if abs(achieved - target_mean) > tolerance:
        raise PlanError(f"mean duty cycle {achieved:.4f} misses target "
                        f"{target_mean} by more than {tolerance}")
    return plan


@dataclass(frozen=True)
class ActivityTrace:
    """Alternating idle/busy periods; the last one may overhang ``total_span``."""

    channel_id: int
    start_state: int
    durations: np.ndarray = field(repr=False)
    total_span: float

    @property
    def states(self) -> np.ndarray:
        k = np.arange(len(self.durations))
        return ((self.start_state + k) % 2).astype(np.int8)

    @property
    def periods(self) -> list[tuple[str, float]]:
        return [(STATE_NAMES[int(s)], float(d))
                for s, d in zip(self.states, self.durations)]

    @classmethod
    def from_periods(cls, channel_id: int, periods: Sequence[tuple[str, float]],
                     total_span: float | None = None) -> "ActivityTrace":
        codes = {"idle": IDLE, "busy": BUSY}
        states = [codes[s] if isinstance(s, str) else int(s) for s, _ in periods]
        if any(a == b for a, b in zip(states, states[1:])):
            raise ValueError("states must alternate")
        durations = np.array([d for _, d in periods], dtype=float)
        span = float(durations.sum()) if total_span is None else total_span
        return cls(channel_id, states[0], durations, span)

    def write_csv(self, fh) -> None:
        w = csv.writer(fh)
        for s, d in zip(self.states, self.durations):
            w.writerow([self.channel_id, STATE_NAMES[int(s)], repr(float(d))])


# Uniforms are drawn in fixed blocks so a longer span extends, rather than
# reshuffles, the periods of a shorter one.
_DRAW_BLOCK = 1024


def generate_trace(profile: ChannelProfile, span: float,
                   rng: np.random.Generator) -> ActivityTrace:
    """Draw alternating GP periods until their total reaches ``span``."""
    if not span > 0:
        raise ValueError("span must be positive")
    start = BUSY if rng.random() < profile.duty_cycle else IDLE
    chunks = []
    total = 0.0
    n = 0
    while total < span:
        u = rng.random(_DRAW_BLOCK)
        states = (start + n + np.arange(_DRAW_BLOCK)) % 2
        d = np.where(states == BUSY, sample_gp(profile.busy, u), sample_gp(profile.idle, u))
        csum = total + np.cumsum(d)
        hit = np.searchsorted(csum, span, side="left")
        if hit < _DRAW_BLOCK:
            chunks.append(d[:hit + 1])
            break
        chunks.append(d)
        total = float(csum[-1])
        n += _DRAW_BLOCK
    return ActivityTrace(profile.channel_id, start, np.concatenate(chunks), float(span))


def sample_occupancy(trace: ActivityTrace, sensing_period: float, n_samples: int) -> np.ndarray:
    """State of the trace at times ``v * sensing_period`` for ``v < n_samples``.

    Periods are left-closed: a period starting at ``t`` owns ``t``.
    """
    ends = np.cumsum(trace.durations)
    if n_samples * sensing_period > ends[-1] * (1 + 1e-12):
        raise ValueError(f"{n_samples} samples at {sensing_period} s exceed the "
                         f"trace length {ends[-1]:.6g} s")
    t = np.arange(n_samples) * sensing_period
    idx = np.searchsorted(ends, t, side="right")
    return ((trace.start_state + idx) % 2).astype(np.int8)
