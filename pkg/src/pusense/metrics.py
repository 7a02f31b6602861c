"""GP CDFs, KS distance between parametric laws, duty-cycle RMSE and the
per-point evaluation report."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .traffic import SMALL_SHAPE

GRID_POINTS = 10_000
UPPER_QUANTILE = 0.9999
REFINE_TOL = 1e-6


def _params(p) -> tuple[float, float, float]:
    return float(p.location), float(p.scale), float(p.shape)


def gp_cdf_raw(t, location: float, scale: float, shape: float):
    t = np.asarray(t, dtype=float)
    z = np.maximum(t - location, 0.0) / scale
    if abs(shape) < SMALL_SHAPE:
        out = -np.expm1(-z)
    else:
        x = np.maximum(shape * z, -1.0)
        with np.errstate(divide="ignore"):
            out = -np.expm1(np.log1p(x) * (-1.0 / shape))
        out = np.where(x <= -1.0, 1.0, out)
    out = np.clip(out, 0.0, 1.0)
    return out if out.ndim else float(out)


def gp_cdf(params, t):
    """GP CDF at ``t``; zero below the location."""
    return gp_cdf_raw(t, *_params(params))


def gp_quantile_raw(q: float, location: float, scale: float, shape: float) -> float:
    if abs(shape) < SMALL_SHAPE:
        return location - scale * math.log1p(-q)
    return location + scale / shape * math.expm1(-shape * math.log1p(-q))


def _upper_support(location, scale, shape) -> float:
    return location - scale / shape if shape < 0 else math.inf


def ks_distance(a, b, grid_points: int = GRID_POINTS) -> float:
    """Sup-norm distance between two GP CDFs.

    Both arguments need ``location``, ``scale`` and ``shape`` attributes.  The
    sup is located on a dense grid and refined by a bounded scalar search
    around the best grid cell.
    """
    pa, pb = _params(a), _params(b)
    lo = min(pa[0], pb[0])
    hi = max(gp_quantile_raw(UPPER_QUANTILE, *pa), gp_quantile_raw(UPPER_QUANTILE, *pb))
    extra = [pa[0], pb[0]]
    for p in (pa, pb):
        u = _upper_support(*p)
        if math.isfinite(u):
            extra.append(u)
    grid = np.union1d(np.linspace(lo, hi, grid_points), extra)

    def gap(t):
        return np.abs(gp_cdf_raw(t, *pa) - gp_cdf_raw(t, *pb))

    g = gap(grid)
    i = int(np.argmax(g))
    best = float(g[i])
    left, right = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
    if right > left:
        res = minimize_scalar(lambda t: -float(gap(t)), bounds=(left, right),
                              method="bounded", options={"xatol": REFINE_TOL})
        best = max(best, -float(res.fun))
    return min(max(best, 0.0), 1.0)


def rmse_duty_cycles(true, est) -> float:
    true = np.asarray(true, dtype=float)
    est = np.asarray(est, dtype=float)
    if true.shape != est.shape:
        raise ValueError(f"length mismatch: {true.shape} vs {est.shape}")
    if true.size == 0:
        raise ValueError("need at least one channel")
    return float(np.sqrt(np.mean((true - est) ** 2)))


def group_mean_ks(per_channel, group_of: dict, excluded: set = frozenset()) -> dict:
    """Mean KS per ``(psi_group, state)``; groups with no usable channel are absent.

    ``per_channel`` holds ``(channel_id, state, d_ks)`` triples and
    ``excluded`` holds ``(channel_id, state)`` pairs to skip.
    """
    acc: dict = {}
    for cid, state, d in per_channel:
        if (cid, state) in excluded or d is None or not math.isfinite(d):
            continue
        acc.setdefault((group_of[cid], state), []).append(d)
    return {k: float(np.mean(v)) for k, v in sorted(acc.items())}


@dataclass
class EvalReport:
    sweep_point: tuple[float, float, float]   # (compression_ratio, T_s, duration_s)
    per_channel_ks: list = field(default_factory=list)   # (channel_id, state, D_ks)
    group_mean_ks: dict = field(default_factory=dict)    # (psi_group, state) -> mean
    duty_rmse: float = math.nan
    group_duty_rmse: dict = field(default_factory=dict)  # psi_group -> RMSE
    excluded_channels: list = field(default_factory=list)  # (channel_id, state, reason)
    channel_rows: list = field(default_factory=list)
    seed: int = 0
    replicate: int = 0

    def ks(self, psi_group: float, state: str = "busy") -> float:
        return self.group_mean_ks.get((psi_group, state), math.nan)
