"""
features.py – IC/DV peak and valley features plus charging conditions.

Feature names follow one canonical pattern, "<curve> <kind> <ordinal>":
    IC PH k / IC PL k   height / location of the k-th IC peak (left to right)
    IC VH k / IC VL k   height / location of the k-th IC valley
    IC AR k             IC area of the k-th voltage segment between valleys
    IC PA k             partial area around the k-th IC peak
    DV PH/PL/VH/VL k    the same for the DV curve
    C Rate, Temperature charging conditions
Absent extrema stay absent (NaN in tables); nothing is filled with zeros.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np
import pandas as pd
from scipy.integrate import cumulative_trapezoid, trapezoid
from scipy.signal import find_peaks

from agents.core.curves import (
    DifferentialCurve,
    QVProfile,
    SmoothingConfig,
    compute_dv_curve,
    compute_ic_curve,
    fit_curve_pair,
)
from agents.core.errors import ConfigError, DomainError, InputError

log = logging.getLogger(__name__)

CATEGORIES = (
    "IC PH", "IC PL", "IC VH", "IC VL", "IC AR", "IC PA",
    "DV PH", "DV PL", "DV VH", "DV VL",
    "C Rate", "Temperature",
)
CONDITION_CATEGORIES = ("C Rate", "Temperature")
MAX_AREA_SEGMENTS = 3


# ── Names ──────────────────────────────────────────────────────────────
@dataclass(frozen=True, order=True)
class FeatureDescriptor:
    category: str
    index: int = 0

    def __post_init__(self) -> None:
        if self.category not in CATEGORIES:
            raise InputError(f"unknown feature category {self.category!r}")
        conditional = self.category in CONDITION_CATEGORIES
        if conditional != (self.index == 0) or self.index < 0:
            raise InputError(f"bad ordinal {self.index} for {self.category!r}")

    @property
    def name(self) -> str:
        return self.category if self.index == 0 else f"{self.category} {self.index}"

    @classmethod
    def parse(cls, name: str) -> "FeatureDescriptor":
        if name in CONDITION_CATEGORIES:
            return cls(name)
        category, _, ordinal = name.rpartition(" ")
        if not ordinal.isdigit():
            raise InputError(f"not a canonical feature name: {name!r}")
        return cls(category, int(ordinal))

    def sort_key(self) -> tuple[int, int]:
        return CATEGORIES.index(self.category), self.index


def canonical_order(names: Sequence[str]) -> list[str]:
    return sorted(names, key=lambda n: FeatureDescriptor.parse(n).sort_key())


@dataclass(frozen=True)
class FeatureConfig:
    prominence_fraction: float = 0.05
    edge_fraction: float = 0.05
    partial_area_mode: Literal["cutoff", "window"] = "cutoff"
    cutoff_fraction: float = 0.5
    window_width: float = 0.060  # V

    def __post_init__(self) -> None:
        if not 0 < self.prominence_fraction < 1:
            raise ConfigError("prominence_fraction must be in (0, 1)")
        if not 0 <= self.edge_fraction < 0.5:
            raise ConfigError("edge_fraction must be in [0, 0.5)")
        if self.partial_area_mode not in ("cutoff", "window"):
            raise ConfigError(f"unknown partial_area_mode {self.partial_area_mode!r}")
        if not 0 <= self.cutoff_fraction < 1 or self.window_width <= 0:
            raise ConfigError("cutoff_fraction must be in [0, 1) and window_width positive")


# ── Extrema ────────────────────────────────────────────────────────────
@dataclass(frozen=True)
class Extremum:
    kind: Literal["peak", "valley"]
    location: float
    height: float
    prominence: float


def detect_extrema(curve: DifferentialCurve, prominence: float) -> list[Extremum]:
    """Peaks and valleys whose prominence reaches ``prominence``, in abscissa order.

    Neighbouring extrema of the same kind are merged to the more extreme one,
    so the result alternates peak/valley.
    """
    if prominence <= 0:
        raise ConfigError("prominence must be positive")
    values = curve.values
    peaks, peak_props = find_peaks(values, prominence=prominence)
    valleys, valley_props = find_peaks(-values, prominence=prominence)

    events = sorted(
        [(int(i), "peak", float(p)) for i, p in zip(peaks, peak_props["prominences"])]
        + [(int(i), "valley", float(p)) for i, p in zip(valleys, valley_props["prominences"])]
    )
    merged: list[tuple[int, str, float]] = []
    for event in events:
        if merged and merged[-1][1] == event[1]:
            prev = merged[-1][0]
            sign = 1.0 if event[1] == "peak" else -1.0
            if sign * values[event[0]] > sign * values[prev]:
                merged[-1] = event
            continue
        merged.append(event)

    return [Extremum(kind, float(curve.grid[i]), float(values[i]), prom)
            for i, kind, prom in merged]


# ── Areas ──────────────────────────────────────────────────────────────
def _cumulative(ic: DifferentialCurve) -> np.ndarray:
    ic.require_span()
    return cumulative_trapezoid(ic.values, ic.grid, initial=0.0)


def ic_peak_areas(ic: DifferentialCurve,
                  valleys: Sequence[float]) -> tuple[float | None, float | None, float | None]:
    """Charge in the voltage segments cut at the interior IC valleys.

    Zero valleys give [total, absent, absent]; one gives [left, right, absent].
    """
    cuts = sorted(float(v) for v in valleys)
    if len(cuts) > MAX_AREA_SEGMENTS - 1:
        raise InputError(f"at most {MAX_AREA_SEGMENTS - 1} valleys, got {len(cuts)}")
    lo, hi = ic.window
    if any(not lo < v < hi for v in cuts):
        raise DomainError(f"valleys {cuts} not inside curve window [{lo:.4g}, {hi:.4g}]")

    bounds = np.array([lo, *cuts, hi])
    charge = np.interp(bounds, ic.grid, _cumulative(ic))
    areas: list[float | None] = [float(a) for a in np.diff(charge)]
    return tuple(areas + [None] * (MAX_AREA_SEGMENTS - len(areas)))  # type: ignore[return-value]


@dataclass(frozen=True)
class PartialArea:
    value: float
    clipped: bool = False


def ic_partial_area(ic: DifferentialCurve, peak: Extremum,
                    mode: Literal["cutoff", "window"] = "cutoff",
                    cutoff: float | None = None, window: float = 0.060) -> PartialArea:
    """Area of one IC peak.

    ``cutoff``: integral of max(IC - h, 0) over the connected region around the
    peak where IC >= h (h defaults to half the peak height).
    ``window``: integral of IC over [loc - window/2, loc + window/2], clipped to
    the curve domain with ``clipped`` set.
    """
    grid, values = ic.grid, ic.values
    if mode == "window":
        if window <= 0:
            raise ConfigError("window must be positive")
        lo, hi = ic.window
        a, b = peak.location - window / 2, peak.location + window / 2
        clipped = a < lo or b > hi
        if clipped:
            log.warning("partial-area window [%.4f, %.4f] clipped to [%.4f, %.4f]", a, b, lo, hi)
        a, b = max(a, lo), min(b, hi)
        charge = np.interp([a, b], grid, _cumulative(ic))
        return PartialArea(float(charge[1] - charge[0]), clipped)
    if mode != "cutoff":
        raise ConfigError(f"unknown partial-area mode {mode!r}")

    h = 0.5 * peak.height if cutoff is None else cutoff
    centre = int(np.argmin(np.abs(grid - peak.location)))
    if values[centre] <= h:
        return PartialArea(0.0)

    below = np.flatnonzero(values < h)
    left_out = below[below < centre]
    right_out = below[below > centre]
    left = int(left_out[-1]) + 1 if left_out.size else 0
    right = int(right_out[0]) - 1 if right_out.size else grid.size - 1

    xs = list(grid[left:right + 1])
    ys = list(values[left:right + 1] - h)
    if left > 0:
        x0, x1, y0, y1 = grid[left - 1], grid[left], values[left - 1], values[left]
        xs.insert(0, x0 + (h - y0) / (y1 - y0) * (x1 - x0))
        ys.insert(0, 0.0)
    if right < grid.size - 1:
        x0, x1, y0, y1 = grid[right], grid[right + 1], values[right], values[right + 1]
        xs.append(x0 + (h - y0) / (y1 - y0) * (x1 - x0))
        ys.append(0.0)
    return PartialArea(float(trapezoid(ys, xs)))


# ── Vectors ────────────────────────────────────────────────────────────
@dataclass(frozen=True, eq=False)
class FeatureVector:
    values: dict[str, float]
    module_id: str
    c_rate: float
    temperature: float
    absent: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        bad = [k for k, v in self.values.items() if not np.isfinite(v)]
        if bad:
            raise InputError(f"non-finite feature values for {bad}")

    def get(self, name: str) -> float | None:
        return self.values.get(name)

    def as_row(self) -> dict[str, float | str]:
        return {"module_id": self.module_id, "c_rate": self.c_rate, **self.values}


def _extrema_features(prefix: str, extrema: Sequence[Extremum]) -> dict[str, float]:
    out: dict[str, float] = {}
    peaks = [e for e in extrema if e.kind == "peak"]
    valleys = [e for e in extrema if e.kind == "valley"]
    for k, e in enumerate(peaks, start=1):
        out[f"{prefix} PH {k}"] = e.height
        out[f"{prefix} PL {k}"] = e.location
    for k, e in enumerate(valleys, start=1):
        out[f"{prefix} VH {k}"] = e.height
        out[f"{prefix} VL {k}"] = e.location
    return out


def _curve_extrema(curve: DifferentialCurve, config: FeatureConfig) -> list[Extremum]:
    inner = curve.trim(config.edge_fraction)
    spread = float(np.ptp(inner.values))
    if spread == 0.0:
        return []
    return detect_extrema(inner, config.prominence_fraction * spread)


def assemble_feature_vector(ic: DifferentialCurve, dv: DifferentialCurve, c_rate: float,
                            temperature: float = 25.0, module_id: str = "",
                            config: FeatureConfig | None = None) -> FeatureVector:
    config = config or FeatureConfig()
    if ic.kind != "IC" or dv.kind != "DV":
        raise InputError("assemble_feature_vector needs an IC and a DV curve")

    ic_extrema = _curve_extrema(ic, config)
    dv_extrema = _curve_extrema(dv, config)
    values = _extrema_features("IC", ic_extrema)
    values.update(_extrema_features("DV", dv_extrema))

    valleys = [e.location for e in ic_extrema if e.kind == "valley"]
    if len(valleys) > MAX_AREA_SEGMENTS - 1:
        log.warning("module %s: %d IC valleys, areas use the first %d", module_id,
                    len(valleys), MAX_AREA_SEGMENTS - 1)
        valleys = valleys[:MAX_AREA_SEGMENTS - 1]
    absent = []
    for k, area in enumerate(ic_peak_areas(ic, valleys), start=1):
        if area is None:
            absent.append(f"IC AR {k}")
        else:
            values[f"IC AR {k}"] = area

    peaks = [e for e in ic_extrema if e.kind == "peak"]
    for k, peak in enumerate(peaks, start=1):
        cutoff = config.cutoff_fraction * peak.height
        values[f"IC PA {k}"] = ic_partial_area(ic, peak, config.partial_area_mode,
                                               cutoff=cutoff, window=config.window_width).value

    values["C Rate"] = float(c_rate)
    values["Temperature"] = float(temperature)
    return FeatureVector(values, module_id, float(c_rate), float(temperature), tuple(absent))


def extract_features(profile: QVProfile, smoothing: SmoothingConfig | None = None,
                     config: FeatureConfig | None = None,
                     ) -> tuple[DifferentialCurve, DifferentialCurve, FeatureVector]:
    smoothing = smoothing or SmoothingConfig()
    q_of_v, v_of_q = fit_curve_pair(profile, smoothing)
    ic = compute_ic_curve(q_of_v, points=smoothing.grid_points)
    dv = compute_dv_curve(v_of_q, points=smoothing.grid_points)
    vector = assemble_feature_vector(ic, dv, profile.c_rate, profile.temperature,
                                     profile.module_id, config)
    return ic, dv, vector


def feature_table(vectors: Sequence[FeatureVector]) -> pd.DataFrame:
    """One row per (module, C-rate), one column per canonical name, NaN where absent."""
    names = canonical_order({n for v in vectors for n in v.values})
    df = pd.DataFrame([v.as_row() for v in vectors], columns=["module_id", "c_rate", *names])
    counts = df[names].notna().sum()
    partial = counts[counts < len(df)]
    if not partial.empty:
        log.warning("features absent on part of the fleet: %s",
                    ", ".join(f"{n} ({len(df) - c} missing)" for n, c in partial.items()))
    return df
