"""Scenario averaging, LQS extraction and the doubly-underspread check."""

from __future__ import annotations

import math
import warnings
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import ConfigError, DegenerateThresholdWarning, UndefinedMeasure

__all__ = [
    "MeasureCurve",
    "LqsResult",
    "DuReport",
    "average_measure",
    "extract_lqs",
    "measure_correlation",
    "du_check",
    "symmetric_offsets",
    "odometer_distance",
    "SPEED_OF_LIGHT",
]

SPEED_OF_LIGHT = 299_792_458.0


@dataclass(frozen=True)
class MeasureCurve:
    """Scenario-averaged measure per time offset (population std)."""

    kind: str
    offsets: np.ndarray
    avg: np.ndarray
    std: np.ndarray
    count: np.ndarray
    scenario_id: str = ""

    def value_at(self, offset: int) -> float:
        idx = np.flatnonzero(self.offsets == offset)
        if idx.size == 0:
            raise KeyError(offset)
        return float(self.avg[idx[0]])


@dataclass(frozen=True)
class LqsResult:
    threshold: float
    lqs_time: float
    lqs_distance: float
    set_size: int
    censored: bool
    degenerate: bool = False


@dataclass(frozen=True)
class DuReport:
    nu_max: float
    tau_max: float
    delta_nu_max: float
    delta_tau_max: float
    dispersion_product: float
    correlation_product: float
    coherence_time: float
    coherence_freq: float
    stationarity_time: float
    stationarity_freq: float
    angular_spread_deg: float
    dispersion_ratio: float
    correlation_ratio: float
    ratio_limit: float
    verdict: bool

    def as_dict(self) -> dict:
        return {k: (bool(v) if isinstance(v, (bool, np.bool_)) else float(v))
                for k, v in self.__dict__.items()}


def symmetric_offsets(max_offset: int) -> np.ndarray:
    return np.arange(-max_offset, max_offset + 1)


def odometer_distance(speed_per_sample, time_spacing: float, duration: float) -> float:
    """Travelled distance over ``duration``, averaged over all start samples.

    Integrates the per-sample speed over a sliding window instead of
    multiplying by the scenario-mean speed; both agree for constant speed.
    """
    v = np.asarray(speed_per_sample, dtype=float)
    if v.size == 0 or duration <= 0:
        return 0.0
    n = min(int(round(duration / time_spacing)), v.size)
    if n == 0:
        return 0.0
    sums = np.convolve(v, np.ones(n), mode="valid") * time_spacing
    # Partial sample at the end of a window that is not a whole number of samples.
    return float(sums.mean() * duration / (n * time_spacing))


def average_measure(pairs: Iterable, offsets: Iterable[int], kind: str = "",
                    scenario_id: str = "") -> MeasureCurve:
    """Average measure values by offset ``m' - m`` over all supplied pairs.

    ``pairs`` yields objects with ``value``, ``m`` and ``m_prime``. Offsets
    with no pair are dropped with a warning.
    """
    wanted = [int(o) for o in offsets]
    wanted_set = set(wanted)
    groups = defaultdict(list)
    for p in pairs:
        off = int(p.m_prime) - int(p.m)
        if off in wanted_set:
            groups[off].append(float(p.value))
    kept = [o for o in sorted(wanted_set) if groups[o]]
    missing = sorted(wanted_set - set(kept))
    if missing:
        warnings.warn(f"no valid pairs for offsets {missing}; omitted", stacklevel=2)
    # Sorting each group makes the float reduction independent of input order.
    vals = [np.sort(np.asarray(groups[o])) for o in kept]
    avg = np.array([v.mean() for v in vals])
    std = np.array([v.std() for v in vals])
    count = np.array([len(v) for v in vals], dtype=int)
    return MeasureCurve(kind=str(kind), offsets=np.array(kept, dtype=int), avg=avg,
                        std=std, count=count, scenario_id=scenario_id)


def extract_lqs(curve: MeasureCurve, threshold: float, spacing: float,
                mean_speed: float = 0.0) -> LqsResult:
    """Largest run of consecutive offsets around 0 whose average exceeds ``threshold``.

    ``spacing`` is the time between consecutive track positions. The result
    is censored when the run reaches either end of the evaluated offsets,
    in which case the LQS time is only a lower bound.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ConfigError(f"threshold {threshold} outside [0, 1]")
    offsets = np.asarray(curve.offsets)
    if 0 not in offsets:
        raise ConfigError("curve does not contain the zero offset")
    above = {int(o) for o, a in zip(offsets, curve.avg) if a > threshold}
    if 0 not in above:
        warnings.warn(f"average measure at zero offset does not exceed {threshold}",
                      DegenerateThresholdWarning, stacklevel=2)
        return LqsResult(threshold, 0.0, 0.0, 0, censored=False, degenerate=True)
    lo = hi = 0
    while lo - 1 in above:
        lo -= 1
    while hi + 1 in above:
        hi += 1
    size = hi - lo + 1
    censored = lo == int(offsets.min()) or hi == int(offsets.max())
    lqs_time = size * spacing
    return LqsResult(threshold, lqs_time, lqs_time * mean_speed, size, censored)


def measure_correlation(a, b) -> float:
    """Pearson correlation coefficient of two equally long sequences."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1 or len(a) < 2:
        raise ConfigError("need two 1-D sequences of equal length >= 2")
    da, db = a - a.mean(), b - b.mean()
    na, nb = math.sqrt(np.dot(da, da)), math.sqrt(np.dot(db, db))
    if na == 0 or nb == 0:
        raise UndefinedMeasure("correlation with a constant sequence")
    return float(np.clip(np.dot(da, db) / (na * nb), -1.0, 1.0))


def du_check(v_max: float, f_c: float, tau_max: float, d_stat_min: float,
             w_max: float, ratio_limit: float = 0.1) -> DuReport:
    """Rough doubly-underspread check from geometry.

    Maximal Doppler from the terminal speed, delay correlation from the
    largest object size ``w_max`` and Doppler correlation from the minimal
    stationarity distance ``d_stat_min``. "Much smaller than" is taken as
    a ratio below ``ratio_limit``.
    """
    for name, value in (("v_max", v_max), ("f_c", f_c), ("tau_max", tau_max),
                        ("d_stat_min", d_stat_min), ("w_max", w_max),
                        ("ratio_limit", ratio_limit)):
        if not value > 0:
            raise ConfigError(f"{name} must be > 0")
    nu_max = v_max * f_c / SPEED_OF_LIGHT
    stationarity_time = d_stat_min / v_max
    delta_nu = 1.0 / stationarity_time
    stationarity_freq = SPEED_OF_LIGHT / w_max
    delta_tau = 1.0 / stationarity_freq
    dispersion = tau_max * nu_max
    correlation = delta_tau * delta_nu
    s = delta_nu / (2.0 * nu_max)
    spread = 2.0 * math.degrees(math.asin(math.sqrt(s))) if s <= 1 else float("nan")
    dispersion_ratio = dispersion
    correlation_ratio = correlation / dispersion
    verdict = correlation_ratio < ratio_limit and dispersion_ratio < ratio_limit
    return DuReport(
        nu_max=nu_max, tau_max=tau_max, delta_nu_max=delta_nu, delta_tau_max=delta_tau,
        dispersion_product=dispersion, correlation_product=correlation,
        coherence_time=1.0 / nu_max, coherence_freq=1.0 / tau_max,
        stationarity_time=stationarity_time, stationarity_freq=stationarity_freq,
        angular_spread_deg=spread, dispersion_ratio=dispersion_ratio,
        correlation_ratio=correlation_ratio, ratio_limit=ratio_limit, verdict=verdict,
    )
