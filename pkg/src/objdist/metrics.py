"""Per-object distance evaluation metrics.

Conventions, pinned by tests:
  * ABS      = mean(|d - d*| / d*)
  * SQ       = mean((d - d*)^2 / d*)
  * RMSE     = sqrt(mean((d - d*)^2))
  * RMSE_log = sqrt(mean((ln d - ln d*)^2))       (natural log)
  * delta_tau = 100 * frac(max(d/d*, d*/d) < tau)  (strict inequality)
  * below_k   = 100 * frac(|d - d*| / d* < k/100)  (strict inequality)
  * Localization error tables bin by ground-truth distance (meters) and by
    occlusion (percent), both over half-open [lo, hi) intervals; the error
    term is |d - d*|/d* in "relative" mode or |d - d*| meters in "absolute"
    mode, and empty bins are reported as None rather than zero.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DEFAULT_TAUS = (1.25, 1.25**2, 1.25**3)
DEFAULT_KS = (5.0, 10.0, 15.0)
DEFAULT_DISTANCE_RANGES = ((0.0, 100.0),)
DEFAULT_OCCLUSION_BINS = ((30.0, 50.0), (50.0, 75.0), (75.0, 100.0))


@dataclass(frozen=True)
class EvalPair:
    """One prediction/target pair; occlusion only feeds the occlusion bins."""

    predicted_m: float
    target_m: float
    occlusion: float = 0.0

    def __post_init__(self):
        if self.target_m <= 0:
            raise ValueError(f"target_m must be positive, got {self.target_m}")


@dataclass
class MetricsReport:
    abs_rel: float
    sq_rel: float
    rmse_m: float
    rmse_log: float
    delta_by_tau: dict
    below_k: dict
    ale_by_range: dict
    aloe_by_occlusion: dict
    n_objects: int

    def to_dict(self) -> dict:
        return {
            "abs_rel": self.abs_rel,
            "sq_rel": self.sq_rel,
            "rmse_m": self.rmse_m,
            "rmse_log": self.rmse_log,
            "delta_by_tau": {str(k): v for k, v in self.delta_by_tau.items()},
            "below_k": {str(k): v for k, v in self.below_k.items()},
            "ale_by_range": self.ale_by_range,
            "aloe_by_occlusion": self.aloe_by_occlusion,
            "n_objects": self.n_objects,
        }

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)


def _arrays(pairs: list[EvalPair]) -> tuple[np.ndarray, np.ndarray]:
    if not pairs:
        raise ValueError("metrics need at least one prediction/target pair")
    d = np.array([p.predicted_m for p in pairs], dtype=np.float64)
    t = np.array([p.target_m for p in pairs], dtype=np.float64)
    return d, t


def error_metrics(pairs: list[EvalPair]) -> tuple[float, float, float, float]:
    """Return (abs_rel, sq_rel, rmse_m, rmse_log)."""
    d, t = _arrays(pairs)
    if np.any(d <= 0):
        raise ValueError("rmse_log needs positive predictions")
    abs_rel = float(np.mean(np.abs(d - t) / t))
    sq_rel = float(np.mean((d - t) ** 2 / t))
    rmse = float(np.sqrt(np.mean((d - t) ** 2)))
    rmse_log = float(np.sqrt(np.mean((np.log(d) - np.log(t)) ** 2)))
    return abs_rel, sq_rel, rmse, rmse_log


def threshold_metrics(
    pairs: list[EvalPair],
    taus: tuple[float, ...] = DEFAULT_TAUS,
    ks: tuple[float, ...] = DEFAULT_KS,
) -> tuple[dict, dict]:
    """Return ({tau: percent}, {k: percent}); both use strict inequalities."""
    d, t = _arrays(pairs)
    if np.any(d <= 0):
        raise ValueError("threshold metrics need positive predictions")
    ratio = np.maximum(d / t, t / d)
    rel_err = np.abs(d - t) / t
    delta = {tau: float(100.0 * np.mean(ratio < tau)) for tau in taus}
    below = {k: float(100.0 * np.mean(rel_err < k / 100.0)) for k in ks}
    return delta, below


def _check_bins(bins) -> None:
    ordered = sorted(bins, key=lambda b: b[0])
    for (lo, hi), (nlo, _) in zip(ordered, ordered[1:]):
        if hi > nlo:
            raise ValueError(f"overlapping bins: [{lo}, {hi}) and [{nlo}, ...)")
    for lo, hi in bins:
        if hi <= lo:
            raise ValueError(f"empty bin interval [{lo}, {hi})")


def _bin_key(lo: float, hi: float) -> str:
    return f"{lo:g}-{hi:g}"


def ale_aloe(
    pairs: list[EvalPair],
    distance_ranges=DEFAULT_DISTANCE_RANGES,
    occlusion_bins=DEFAULT_OCCLUSION_BINS,
    mode: str = "relative",
) -> tuple[dict, dict]:
    """Localization error binned by target distance and by occlusion percent."""
    if mode not in ("relative", "absolute"):
        raise ValueError(f"mode must be 'relative' or 'absolute', got {mode!r}")
    _check_bins(distance_ranges)
    _check_bins(occlusion_bins)
    d, t = _arrays(pairs)
    occ = np.array([p.occlusion for p in pairs], dtype=np.float64) * 100.0
    err = np.abs(d - t) / t if mode == "relative" else np.abs(d - t)

    ale = {}
    for lo, hi in distance_ranges:
        sel = (t >= lo) & (t < hi)
        ale[_bin_key(lo, hi)] = float(np.mean(err[sel])) if np.any(sel) else None
    aloe = {}
    for lo, hi in occlusion_bins:
        sel = (occ >= lo) & (occ < hi)
        aloe[_bin_key(lo, hi)] = float(np.mean(err[sel])) if np.any(sel) else None
    return ale, aloe


def metrics_report(
    pairs: list[EvalPair],
    taus=DEFAULT_TAUS,
    ks=DEFAULT_KS,
    distance_ranges=DEFAULT_DISTANCE_RANGES,
    occlusion_bins=DEFAULT_OCCLUSION_BINS,
    mode: str = "relative",
) -> MetricsReport:
    abs_rel, sq_rel, rmse, rmse_log = error_metrics(pairs)
    delta, below = threshold_metrics(pairs, taus, ks)
    ale, aloe = ale_aloe(pairs, distance_ranges, occlusion_bins, mode)
    return MetricsReport(
        abs_rel=abs_rel,
        sq_rel=sq_rel,
        rmse_m=rmse,
        rmse_log=rmse_log,
        delta_by_tau=delta,
        below_k=below,
        ale_by_range=ale,
        aloe_by_occlusion=aloe,
        n_objects=len(pairs),
    )


@dataclass(frozen=True)
class PairRow:
    """Per-object evaluation record for CSV export."""

    frame_id: str
    object_index: int
    target_m: float
    predicted_m: float
    sigma2: float
    occlusion: float


def write_pairs_csv(rows: list[PairRow], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame_id", "object_index", "target_m", "predicted_m", "sigma2", "occlusion"])
        for r in rows:
            writer.writerow([r.frame_id, r.object_index, r.target_m, r.predicted_m, r.sigma2, r.occlusion])
