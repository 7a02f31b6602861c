"""Compressive measurement, BPDN recovery and occupancy detection.

Penalty convention
------------------
The solver minimizes, per snapshot,

    penalty * ||X||_1 + 1/2 * ||y - A X||_2^2,      A = Phi @ F^-1

``penalty`` is therefore a soft-threshold scale in spectrum units.  The
equivalent weight on the quadratic term of the ``||X||_1 + w * ||y - A X||^2``
form is ``w = 1 / (2 * penalty)``; :func:`bpdn_objective` reports that form.
Both forms share minimizers and the same ordering of iterates.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import seeding
from .synth import NoiseModel, to_time_domain

log = logging.getLogger(__name__)


def required_measurements(max_active: int, n: int, c: float) -> int:
    """``ceil(c * L * ln(N / L))`` clamped to ``[L + 1, N]``."""
    if not 0 < max_active < n:
        raise ValueError("need 0 < max_active < n")
    m = math.ceil(c * max_active * math.log(n / max_active))
    return int(min(max(m, max_active + 1), n))


def inverse_dft_matrix(n: int) -> np.ndarray:
    return to_time_domain(np.eye(n))


@dataclass(frozen=True)
class MeasurementOperator:
    phi: np.ndarray = field(repr=False)
    composite: np.ndarray = field(repr=False)   # Phi @ F^-1
    lipschitz: float
    seed: int | None = None

    @property
    def m(self) -> int:
        return self.phi.shape[0]

    @property
    def n(self) -> int:
        return self.phi.shape[1]

    @property
    def compression_ratio(self) -> float:
        return self.m / self.n

    @classmethod
    def from_matrix(cls, phi, seed: int | None = None) -> "MeasurementOperator":
        phi = np.asarray(phi)
        m, n = phi.shape
        if not 0 < m <= n:
            raise ValueError(f"need 0 < M <= N, got M={m}, N={n}")
        a = phi @ inverse_dft_matrix(n)
        return cls(phi, a, lipschitz_constant(a), seed)

    @classmethod
    def identity_composite(cls, n: int) -> "MeasurementOperator":
        """``Phi = F`` (unitary DFT); the composite operator is the identity."""
        phi = np.fft.fft(np.eye(n), axis=0, norm="ortho")
        return cls(phi, np.eye(n, dtype=complex), 1.0, None)


def lipschitz_constant(a: np.ndarray) -> float:
    """Largest eigenvalue of ``A^H A`` (the gradient Lipschitz constant)."""
    return float(np.linalg.norm(a, 2)) ** 2


def build_measurement_operator(m: int, n: int, master_seed: int,
                               replicate: int = 0) -> MeasurementOperator:
    """Gaussian operator with i.i.d. N(0, 1/M) entries.

    Rows are the first ``m`` rows of one ``N x N`` standard-normal draw per
    ``(master_seed, replicate)``, so operators of different sizes are nested.
    """
    if not 0 < m <= n:
        raise ValueError(f"need 0 < M <= N, got M={m}, N={n}")
    g = seeding.stream(master_seed, seeding.OPERATOR, replicate, n).standard_normal((n, n))
    return MeasurementOperator.from_matrix(g[:m] / math.sqrt(m), seed=master_seed)


def compress(op: MeasurementOperator, x) -> np.ndarray:
    """``y = Phi x`` for a time-domain vector (or ``N x V`` block)."""
    x = np.asarray(x)
    if x.shape[0] != op.n:
        raise ValueError(f"expected leading dimension {op.n}, got {x.shape[0]}")
    return op.phi @ x


@dataclass(frozen=True)
class RecoverySettings:
    penalty: float
    max_iterations: int = 500
    convergence_tol: float = 1e-6
    threshold: float = 1e-3
    momentum: bool = True

    def __post_init__(self):
        if not self.penalty > 0:
            raise ValueError("penalty must be > 0")
        if not self.threshold > 0:
            raise ValueError("threshold must be > 0")

    @property
    def quadratic_weight(self) -> float:
        return 1.0 / (2.0 * self.penalty)


def default_penalty(noise_variance: float, n: int, scale: float = 1.0) -> float:
    """Universal threshold ``sigma * sqrt(2 ln N)``, times ``scale``."""
    sigma = math.sqrt(max(noise_variance, 1e-12))
    return scale * sigma * math.sqrt(2.0 * math.log(n))


@dataclass
class BpdnResult:
    X: np.ndarray
    objective: np.ndarray      # final per-snapshot objective (quadratic-weight form)
    iterations: np.ndarray     # iterations used per snapshot
    converged: np.ndarray
    history: list | None = None

    @property
    def all_converged(self) -> bool:
        return bool(np.all(self.converged))


def _soft(z: np.ndarray, thr: float) -> np.ndarray:
    mag = np.abs(z)
    with np.errstate(divide="ignore", invalid="ignore"):
        shrink = np.maximum(1.0 - thr / mag, 0.0)
    shrink[mag == 0] = 0.0
    return z * shrink


def _objective(X, AX, Y, penalty):
    # rows are snapshots
    r = AX - Y
    return penalty * np.abs(X).sum(axis=1) + 0.5 * (r.real**2 + r.imag**2).sum(axis=1)


def bpdn_objective(op: MeasurementOperator, y, X, settings: RecoverySettings) -> np.ndarray:
    """``||X||_1 + w ||y - A X||^2`` per column, ``w = settings.quadratic_weight``."""
    X = np.asarray(X).reshape(op.n, -1)
    y = np.asarray(y).reshape(op.m, -1)
    r = y - op.composite @ X
    return np.abs(X).sum(axis=0) + settings.quadratic_weight * (np.abs(r) ** 2).sum(axis=0)


def recover_bpdn(op: MeasurementOperator, y, settings: RecoverySettings, *,
                 record_history: bool = False) -> BpdnResult:
    """Proximal-gradient BPDN over the frequency-domain unknown.

    ``y`` is ``M`` or ``M x V``; every column is solved independently.  With
    ``settings.momentum`` the monotone accelerated variant is used, otherwise
    plain iterative shrinkage.  Columns stop individually once the relative
    objective change falls below ``convergence_tol``.
    """
    y = np.asarray(y, dtype=complex)
    single = y.ndim == 1
    Y = np.ascontiguousarray(y.reshape(op.m, -1).T)      # V x M
    v = Y.shape[0]
    A = op.composite
    At = np.ascontiguousarray(A.T)                       # so that X @ At == (A X^T)^T
    Ah = np.ascontiguousarray(A.conj())                  # R @ Ah == (A^H R^T)^T
    L = op.lipschitz if op.lipschitz > 0 else 1.0
    step = 1.0 / L
    thr = settings.penalty * step
    pen = settings.penalty

    X_out = np.zeros((v, op.n), dtype=complex)
    f_out = 0.5 * (np.abs(Y) ** 2).sum(axis=1)
    iters = np.zeros(v, dtype=int)
    conv = np.zeros(v, dtype=bool)
    history = [f_out.copy()] if record_history else None

    active = np.arange(v)
    X = X_out.copy()
    AX = np.zeros((v, op.m), dtype=complex)
    Yk, AYk = X.copy(), AX.copy()
    F = f_out.copy()
    Yb = Y
    t = 1.0
    for k in range(1, settings.max_iterations + 1):
        G = (AYk - Yb) @ Ah
        Z = _soft(Yk - step * G, thr)
        AZ = Z @ At
        Fz = _objective(Z, AZ, Yb, pen)
        done = np.abs(Fz - F) <= settings.convergence_tol * np.abs(F)
        accept = Fz <= F
        Xn = np.where(accept[:, None], Z, X)
        AXn = np.where(accept[:, None], AZ, AX)
        Fn = np.where(accept, Fz, F)
        if settings.momentum:
            t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
            c1, c2 = t / t_next, (t - 1.0) / t_next
            Yk = Xn + c1 * (Z - Xn) + c2 * (Xn - X)
            AYk = AXn + c1 * (AZ - AXn) + c2 * (AXn - AX)
            t = t_next
        else:
            Yk, AYk = Xn, AXn
        X, AX, F = Xn, AXn, Fn
        if history is not None:
            h = history[-1].copy()
            h[active] = F
            history.append(h)
        iters[active] = k
        if done.any():
            idx = active[done]
            X_out[idx] = X[done]
            f_out[idx] = F[done]
            conv[idx] = True
            keep = ~done
            active = active[keep]
            if active.size == 0:
                break
            X, AX, F = X[keep], AX[keep], F[keep]
            Yk, AYk, Yb = Yk[keep], AYk[keep], Yb[keep]
    if active.size:
        X_out[active] = X
        f_out[active] = F
        log.warning("BPDN: %d of %d snapshots hit max_iterations=%d "
                    "(max final objective %.6g)", active.size, v,
                    settings.max_iterations, float(F.max()))
    # report in the quadratic-weight form: ||X||_1 + w ||r||^2 == F / penalty
    res = BpdnResult(X_out.T.copy(), f_out / pen, iters, conv,
                     [h / pen for h in history] if history is not None else None)
    if single:
        res.X = res.X[:, 0]
    return res


def binarize(X_hat, threshold: float) -> np.ndarray:
    if not threshold > 0:
        raise ValueError("threshold must be > 0")
    X_hat = np.asarray(X_hat)
    return ((X_hat.real**2 + X_hat.imag**2) > threshold).astype(np.int8)


def nyquist_baseline_detect(X, threshold: float) -> np.ndarray:
    """Per-bin energy detection on the full-rate spectrum."""
    return binarize(X, threshold)


def energy_threshold(noise_variance: float, p_fa: float) -> float:
    """Threshold on ``|W|^2 ~ sigma^2 Exp(1)`` giving false-alarm rate ``p_fa``."""
    return max(noise_variance * math.log(1.0 / p_fa), np.finfo(float).tiny)


def _noise_only(noise: NoiseModel, n: int, count: int, rng: np.random.Generator):
    s = math.sqrt(noise.noise_variance / 2.0)
    return (rng.standard_normal((n, count)) + 1j * rng.standard_normal((n, count))) * s


def calibrate_threshold(op: MeasurementOperator, settings: RecoverySettings,
                        noise: NoiseModel, p_fa: float, *, n_snapshots: int = 2000,
                        master_seed: int = 0, replicate: int = 0) -> float:
    """Monte-Carlo threshold on ``|X_hat|^2`` from noise-only recoveries.

    When fewer than ``p_fa`` of the recovered bins are non-zero the threshold
    falls back to the smallest positive float (any non-zero bin is a detection).
    """
    rng = seeding.stream(master_seed, seeding.CALIBRATION, replicate, op.m)
    W = _noise_only(noise, op.n, n_snapshots, rng)
    y = op.composite @ W
    res = recover_bpdn(op, y, settings)
    power = np.abs(res.X) ** 2
    tau = float(np.quantile(power, 1.0 - p_fa, method="higher"))
    return max(tau, np.finfo(float).tiny)


@dataclass(frozen=True)
class DecisionSeries:
    channel_id: int
    sensing_period: float
    decisions: np.ndarray = field(repr=False)


def write_decisions_csv(series: list[DecisionSeries], fh) -> None:
    w = csv.writer(fh)
    w.writerow(["channel_id", "time_index", "decision"])
    for s in series:
        for t, d in enumerate(s.decisions):
            w.writerow([s.channel_id, t, int(d)])
