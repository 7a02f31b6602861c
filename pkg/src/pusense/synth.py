"""Frequency-domain snapshot synthesis: occupied bins carry a random complex
amplitude, every bin carries circular complex Gaussian noise."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import seeding

GAUSSIAN = "gaussian"
CONSTANT_MODULUS = "constant-modulus"
AMPLITUDE_LAWS = (GAUSSIAN, CONSTANT_MODULUS)


@dataclass(frozen=True)
class NoiseModel:
    signal_power: float = 1.0
    noise_variance: float = 1e-3

    def __post_init__(self):
        if self.signal_power <= 0 or self.noise_variance < 0:
            raise ValueError("signal_power must be > 0 and noise_variance >= 0")

    @classmethod
    def from_snr(cls, snr_db: float, signal_power: float = 1.0) -> "NoiseModel":
        if math.isinf(snr_db) and snr_db > 0:
            return cls(signal_power, 0.0)
        return cls(signal_power, signal_power * 10.0 ** (-snr_db / 10.0))

    @property
    def snr_db(self) -> float:
        if self.noise_variance == 0:
            return math.inf
        return 10.0 * math.log10(self.signal_power / self.noise_variance)


@dataclass(frozen=True)
class SnapshotSpectrum:
    time_index: int
    X: np.ndarray = field(repr=False)
    occupied: np.ndarray = field(repr=False)


def _draw(rng: np.random.Generator, n: int, noise: NoiseModel, law: str,
          gains: np.ndarray | None):
    g = rng.standard_normal((4, n))
    amp = g[0] + 1j * g[1]
    if law == CONSTANT_MODULUS:
        mag = np.abs(amp)
        amp = np.divide(amp, mag, out=np.ones_like(amp), where=mag > 0)
        amp *= math.sqrt(noise.signal_power)
    elif law == GAUSSIAN:
        amp *= math.sqrt(noise.signal_power / 2.0)
    else:
        raise ValueError(f"unknown amplitude law {law!r}")
    if gains is not None:
        amp *= np.sqrt(gains)
    w = (g[2] + 1j * g[3]) * math.sqrt(noise.noise_variance / 2.0)
    return amp, w


def synthesize_snapshot(occupancy, noise: NoiseModel, rng: np.random.Generator, *,
                        time_index: int = 0, law: str = GAUSSIAN,
                        gains: np.ndarray | None = None) -> SnapshotSpectrum:
    """Build ``X = a * occupied + W`` for one sensing instant.

    ``gains`` optionally scales the signal power per channel.
    """
    occ = np.asarray(occupancy, dtype=np.int8)
    amp, w = _draw(rng, occ.size, noise, law, gains)
    return SnapshotSpectrum(time_index, amp * occ + w, occ)


def synthesize_block(occupancy: np.ndarray, noise: NoiseModel, master_seed: int,
                     time_indices, *, replicate: int = 0, law: str = GAUSSIAN,
                     gains: np.ndarray | None = None) -> np.ndarray:
    """Synthesize snapshots for columns of an ``N x V`` occupancy matrix.

    Column ``j`` uses the stream keyed by ``time_indices[j]``, so any split of
    the time axis into blocks gives the same spectra.  Returns ``N x V`` complex.
    """
    occ = np.asarray(occupancy, dtype=np.int8)
    n, v = occ.shape
    out = np.empty((n, v), dtype=complex)
    for j, t in enumerate(time_indices):
        rng = seeding.stream(master_seed, seeding.SYNTH, replicate, int(t))
        amp, w = _draw(rng, n, noise, law, gains)
        out[:, j] = amp * occ[:, j] + w
    return out


def to_time_domain(X) -> np.ndarray:
    """Unitary inverse DFT along the first axis."""
    return np.fft.ifft(np.asarray(X, dtype=complex), axis=0, norm="ortho")


def to_frequency_domain(x) -> np.ndarray:
    return np.fft.fft(np.asarray(x, dtype=complex), axis=0, norm="ortho")


def write_snapshot_csv(snap: SnapshotSpectrum, fh) -> None:
    w = csv.writer(fh)
    for k, z in enumerate(snap.X):
        w.writerow([snap.time_index, k, repr(float(z.real)), repr(float(z.imag))])
