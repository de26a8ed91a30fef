"""
simulate.py – parallel-cell module simulator under constant-current charge.

Each cell is an OCV source behind a series resistance. All cells share the
module's parallel node voltage, so at every timestep the per-cell currents
come from a 1-D root find on that voltage. The module terminal voltage adds
the interconnect drop. Fleets draw C-SoH values from a seeded sampler and
carry ground-truth labels next to each Q-V profile.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from functools import cached_property, lru_cache
from pathlib import Path
from typing import Literal, Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.interpolate import PchipInterpolator
from scipy.optimize import brentq

from agents.core.curves import QVProfile
from agents.core.errors import ChargeComplete, ConfigError, InputError, SolverError
from agents.core.metrics import LABEL_COLUMNS, SohLabels, compute_labels

log = logging.getLogger(__name__)

# ── Paths ──────────────────────────────────────────────────────────────
DATA_DIR = Path(__file__).resolve().parent / "data"
DEFAULT_OCV_TABLE = DATA_DIR / "ocv_v1.csv"

KIRCHHOFF_TOLERANCE = 1e-9  # A


# ── Cell chemistry ─────────────────────────────────────────────────────
@dataclass(frozen=True, eq=False)
class OCVModel:
    """Monotone piecewise-cubic OCV(SoC) built on a control-point table."""

    soc: tuple[float, ...]
    voltage: tuple[float, ...]
    version: str = "ocv_v1"

    def __post_init__(self) -> None:
        soc = np.asarray(self.soc, dtype=float)
        ocv = np.asarray(self.voltage, dtype=float)
        if soc.ndim != 1 or soc.shape != ocv.shape or soc.size < 2:
            raise ConfigError("OCV table needs at least two (soc, voltage) points")
        if soc[0] != 0.0 or soc[-1] != 1.0:
            raise ConfigError("OCV table must span SoC 0 to 1")
        if np.any(np.diff(soc) <= 0) or np.any(np.diff(ocv) <= 0):
            raise ConfigError(f"OCV table {self.version!r} must be strictly increasing")

    @cached_property
    def _curve(self) -> PchipInterpolator:
        return PchipInterpolator(np.asarray(self.soc), np.asarray(self.voltage))

    @property
    def voltage_range(self) -> tuple[float, float]:
        return self.voltage[0], self.voltage[-1]

    def voltage_at(self, soc) -> np.ndarray:
        return self._curve(np.clip(np.asarray(soc, dtype=float), 0.0, 1.0))

    def soc_at(self, voltage: float) -> float:
        lo, hi = self.voltage_range
        if not lo <= voltage <= hi:
            raise InputError(f"voltage {voltage} V outside OCV range [{lo}, {hi}] V")
        if voltage == lo:
            return 0.0
        if voltage == hi:
            return 1.0
        return brentq(lambda s: float(self._curve(s)) - voltage, 0.0, 1.0, xtol=1e-13)

    @classmethod
    def from_csv(cls, path: Path | str = DEFAULT_OCV_TABLE) -> "OCVModel":
        path = Path(path)
        df = pd.read_csv(path, comment="#")
        if not {"soc", "ocv_v"} <= set(df.columns):
            raise ConfigError(f"{path.name} needs columns soc, ocv_v")
        return cls(tuple(df["soc"]), tuple(df["ocv_v"]), version=path.stem)


@lru_cache(maxsize=None)
def default_ocv() -> OCVModel:
    return OCVModel.from_csv(DEFAULT_OCV_TABLE)


@dataclass(frozen=True)
class CellSpec:
    fresh_capacity: float  # Ah
    c_soh: float
    series_resistance: float  # Ohm
    ocv_model_id: str = "ocv_v1"

    def __post_init__(self) -> None:
        if self.fresh_capacity <= 0:
            raise ConfigError("fresh_capacity must be positive")
        if not 0.0 < self.c_soh <= 1.0:
            raise ConfigError(f"c_soh must lie in (0, 1], got {self.c_soh}")
        if self.series_resistance <= 0:
            raise ConfigError("series_resistance must be positive")

    @property
    def capacity(self) -> float:
        return self.fresh_capacity * self.c_soh


@dataclass(frozen=True)
class ModuleSpec:
    cells: tuple[CellSpec, ...]
    interconnect_resistance: float = 0.0
    ocv: OCVModel = field(default_factory=default_ocv, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "cells", tuple(self.cells))
        if not self.cells:
            raise ConfigError("a module needs at least one cell")
        if self.interconnect_resistance < 0:
            raise ConfigError("interconnect_resistance must be nonnegative")
        foreign = {c.ocv_model_id for c in self.cells} - {self.ocv.version}
        if foreign:
            raise ConfigError(f"cells reference OCV models {sorted(foreign)}, "
                              f"module uses {self.ocv.version!r}")

    @property
    def n_parallel(self) -> int:
        return len(self.cells)

    @property
    def nominal_capacity(self) -> float:
        return sum(c.fresh_capacity for c in self.cells)

    @property
    def capacities(self) -> np.ndarray:
        return np.array([c.capacity for c in self.cells])

    @property
    def resistances(self) -> np.ndarray:
        return np.array([c.series_resistance for c in self.cells])

    @property
    def labels(self) -> SohLabels:
        return compute_labels([c.c_soh for c in self.cells])


@dataclass(frozen=True)
class SimulationConfig:
    c_rate: float = 0.5
    v_min: float = 3.3
    v_max: float = 4.1
    timestep: float = 1.0  # s
    solver_tolerance: float = 1e-9  # V
    max_iterations: int = 100
    max_steps: int = 200_000
    temperature: float = 25.0

    def __post_init__(self) -> None:
        if self.c_rate <= 0:
            raise ConfigError("c_rate must be positive")
        if self.v_min >= self.v_max:
            raise ConfigError(f"v_min {self.v_min} must be below v_max {self.v_max}")
        if self.timestep <= 0 or self.solver_tolerance <= 0:
            raise ConfigError("timestep and solver_tolerance must be positive")
        if self.max_iterations < 1 or self.max_steps < 1:
            raise ConfigError("max_iterations and max_steps must be at least 1")


# ── Current split ──────────────────────────────────────────────────────
@dataclass(frozen=True, eq=False)
class CurrentSplit:
    currents: np.ndarray  # A, per cell
    node_voltage: float  # V, shared by every cell branch
    kirchhoff_residual: float  # A
    voltage_residual: float  # V


def solve_current_split(module: ModuleSpec, cell_socs: Sequence[float], total_current: float,
                        tolerance: float = 1e-9, max_iterations: int = 100) -> CurrentSplit:
    socs = np.asarray(cell_socs, dtype=float)
    if socs.shape != (module.n_parallel,):
        raise InputError(f"expected {module.n_parallel} SoC values, got {socs.size}")
    if total_current <= 0:
        raise InputError("total_current must be positive")
    if np.all(socs >= 1.0):
        raise ChargeComplete()
    if np.any(socs < 0.0) or np.any(socs > 1.0):
        raise InputError(f"cell SoC outside [0, 1]: {socs.tolist()}")

    ocv = module.ocv.voltage_at(socs)
    r = module.resistances
    conductance = 1.0 / r

    def imbalance(v: float) -> float:
        return float(np.sum((v - ocv) * conductance) - total_current)

    lo = float(ocv.min())
    # the root sits at most I·r_max above the highest OCV; doubling keeps it strictly inside
    hi = float(ocv.max() + 2.0 * total_current * r.max() + 1e-6)
    try:
        v, info = brentq(imbalance, lo, hi, xtol=tolerance, maxiter=max_iterations,
                         full_output=True, disp=False)
    except ValueError as exc:
        raise SolverError(f"current split bracket failed: {exc}", imbalance(hi)) from exc
    if not info.converged:
        raise SolverError(f"current split did not converge in {max_iterations} iterations",
                          imbalance(v))

    # the branch equations are linear in v, one Newton step closes Kirchhoff exactly
    v -= imbalance(v) / conductance.sum()
    currents = (v - ocv) * conductance
    kirchhoff = abs(float(currents.sum()) - total_current)
    v_residual = float(np.max(np.abs(v - (ocv + currents * r))))
    if kirchhoff > KIRCHHOFF_TOLERANCE or v_residual > tolerance:
        raise SolverError("current split violates Kirchhoff or shared-voltage constraint",
                          kirchhoff)
    return CurrentSplit(currents, float(v), kirchhoff, v_residual)


# ── CC charge ──────────────────────────────────────────────────────────
@dataclass(frozen=True, eq=False)
class ChargeRun:
    profile: QVProfile
    cell_charge: np.ndarray  # Ah delivered to each cell
    final_socs: np.ndarray
    max_kirchhoff_residual: float
    steps: int


def run_cc_charge(module: ModuleSpec, config: SimulationConfig,
                  module_id: str = "") -> ChargeRun:
    """CC charge from a relaxed module at ``v_min`` until the terminal voltage hits ``v_max``."""
    current = config.c_rate * module.nominal_capacity
    capacities = module.capacities
    socs = np.full(module.n_parallel, module.ocv.soc_at(config.v_min))
    dt_h = config.timestep / 3600.0

    def terminal(split: CurrentSplit) -> float:
        return split.node_voltage + current * module.interconnect_resistance

    split = solve_current_split(module, socs, current, config.solver_tolerance,
                                config.max_iterations)
    v_prev = terminal(split)
    if v_prev >= config.v_max:
        raise InputError(f"empty profile: terminal voltage {v_prev:.4f} V already at v_max "
                         f"{config.v_max} V for C-rate {config.c_rate}")

    q_trace, v_trace = [0.0], [v_prev]
    cell_charge = np.zeros(module.n_parallel)
    max_residual = split.kirchhoff_residual
    steps = 0
    while True:
        if steps >= config.max_steps:
            raise SolverError(f"charge did not reach v_max within {config.max_steps} steps",
                              v_prev - config.v_max)
        delta = split.currents * dt_h
        new_socs = socs + delta / capacities
        try:
            new_split = solve_current_split(module, np.minimum(new_socs, 1.0), current,
                                            config.solver_tolerance, config.max_iterations)
        except ChargeComplete:
            log.warning("module %s fully charged before reaching v_max", module_id or "?")
            cell_charge += delta
            socs = np.minimum(new_socs, 1.0)
            q_trace.append(q_trace[-1] + current * dt_h)
            v_trace.append(v_trace[-1])
            break
        steps += 1
        v_new = terminal(new_split)
        if v_new >= config.v_max:
            # close the profile exactly at v_max
            frac = (config.v_max - v_prev) / (v_new - v_prev) if v_new > v_prev else 1.0
            cell_charge += frac * delta
            socs = socs + frac * delta / capacities
            q_trace.append(q_trace[-1] + frac * current * dt_h)
            v_trace.append(config.v_max)
            break
        cell_charge += delta
        socs, split, v_prev = new_socs, new_split, v_new
        max_residual = max(max_residual, split.kirchhoff_residual)
        q_trace.append(q_trace[-1] + current * dt_h)
        v_trace.append(v_new)

    profile = QVProfile(np.array(q_trace), np.array(v_trace), c_rate=config.c_rate,
                        module_id=module_id, temperature=config.temperature)
    log.debug("charged %s at %.2fC: %.4f Ah in %d steps", module_id or "module",
              config.c_rate, profile.charged_capacity, steps)
    return ChargeRun(profile, cell_charge, socs, max_residual, steps)


def simulate_cc_charge(module: ModuleSpec, config: SimulationConfig,
                       module_id: str = "") -> QVProfile:
    return run_cc_charge(module, config, module_id).profile


# ── Fleets ─────────────────────────────────────────────────────────────
@dataclass(frozen=True)
class SamplerSpec:
    """Distribution of cell C-SoH values: ``uniform`` on [low, high] or a ``point`` mass."""

    kind: Literal["uniform", "point"] = "uniform"
    low: float = 0.75
    high: float = 1.0
    value: float = 1.0

    def __post_init__(self) -> None:
        if self.kind == "point":
            if not 0.0 < self.value <= 1.0:
                raise ConfigError(f"point sampler value {self.value} outside (0, 1]")
        elif self.kind == "uniform":
            if not 0.0 < self.low < self.high <= 1.0:
                raise ConfigError(f"uniform sampler needs 0 < low < high <= 1, "
                                  f"got [{self.low}, {self.high}]")
        else:
            raise ConfigError(f"unknown sampler kind {self.kind!r}")

    def draw(self, rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
        if self.kind == "point":
            return np.full(shape, self.value)
        return rng.uniform(self.low, self.high, size=shape)


@dataclass(frozen=True)
class FleetTemplate:
    """Module build shared by every fleet member; aged cells get a larger resistance."""

    n_parallel: int = 3
    fresh_capacity: float = 3.0  # Ah
    base_resistance: float = 0.018  # Ohm
    resistance_growth: float = 2.0
    interconnect_resistance: float = 0.001  # Ohm
    simulation: SimulationConfig = field(default_factory=SimulationConfig)

    def __post_init__(self) -> None:
        if self.n_parallel < 1:
            raise ConfigError("n_parallel must be at least 1")
        if self.resistance_growth < 0:
            raise ConfigError("resistance_growth must be nonnegative")

    def build(self, c_soh: Sequence[float], ocv: OCVModel | None = None) -> ModuleSpec:
        ocv = ocv or default_ocv()
        cells = tuple(
            CellSpec(self.fresh_capacity, float(s),
                     self.base_resistance * (1.0 + self.resistance_growth * (1.0 - s)),
                     ocv_model_id=ocv.version)
            for s in c_soh
        )
        return ModuleSpec(cells, self.interconnect_resistance, ocv)


@dataclass(frozen=True, eq=False)
class FleetRecord:
    module_id: str
    c_rate: float
    profile: QVProfile
    labels: SohLabels
    m_soh_measured: float


def _charge_task(template: FleetTemplate, module_id: str, c_soh: np.ndarray,
                 c_rate: float, reference_q: float) -> FleetRecord:
    module = template.build(c_soh)
    config = replace(template.simulation, c_rate=c_rate)
    profile = simulate_cc_charge(module, config, module_id)
    return FleetRecord(module_id, c_rate, profile, module.labels,
                       profile.charged_capacity / reference_q)


def generate_fleet(n_modules: int, c_soh_sampler: SamplerSpec, c_rates: Sequence[float],
                   seed: int, template: FleetTemplate | None = None,
                   workers: int = 1) -> list[FleetRecord]:
    """Simulate every module once per C-rate; ordering is module-major, then C-rate."""
    template = template or FleetTemplate()
    if n_modules < 1:
        raise ConfigError("n_modules must be at least 1")
    if not c_rates:
        raise ConfigError("at least one C-rate is required")

    rng = np.random.default_rng(seed)
    draws = c_soh_sampler.draw(rng, (n_modules, template.n_parallel))

    fresh = template.build([1.0] * template.n_parallel)
    reference = {
        rate: simulate_cc_charge(fresh, replace(template.simulation, c_rate=rate)).charged_capacity
        for rate in c_rates
    }

    tasks = [
        (f"M{i + 1:03d}", draws[i], float(rate))
        for i in range(n_modules)
        for rate in c_rates
    ]
    if workers > 1:
        records = Parallel(n_jobs=workers)(
            delayed(_charge_task)(template, mid, c_soh, rate, reference[rate])
            for mid, c_soh, rate in tasks
        )
    else:
        records = [_charge_task(template, mid, c_soh, rate, reference[rate])
                   for mid, c_soh, rate in tasks]
    log.info("simulated %d modules × %d C-rates (seed %d)", n_modules, len(c_rates), seed)
    return list(records)


def labels_frame(records: Sequence[FleetRecord]) -> pd.DataFrame:
    """Columns: module_id, c_rate, m_soh, sd, range, cv, c_soh_1..c_soh_Np, m_soh_measured."""
    rows = []
    for rec in records:
        row = {"module_id": rec.module_id, "c_rate": rec.c_rate}
        row.update(rec.labels.as_row())
        row["m_soh_measured"] = rec.m_soh_measured
        rows.append(row)
    df = pd.DataFrame(rows)
    if df.empty:
        return df
    cell_cols = [c for c in df.columns if c.startswith("c_soh_")]
    return df[["module_id", "c_rate", *LABEL_COLUMNS, *cell_cols, "m_soh_measured"]]
