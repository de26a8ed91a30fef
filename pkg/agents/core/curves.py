"""
curves.py – smooth a Q-V charging profile and differentiate it analytically.

Two fits per profile:
    Q(V)  → IC = dQ/dV
    V(Q)  → DV = dV/dQ
Each fit is an RBF support vector regression (scikit-learn SVR) on standardized
abscissa/ordinate, unpacked into physical units so the derivative is a closed
form sum of Gaussian derivatives. Raw samples are never finite-differenced.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
import pandas as pd
from sklearn.svm import SVR

from agents.core.errors import ConfigError, DomainError, FitError, InputError

log = logging.getLogger(__name__)

Orientation = Literal["q_of_v", "v_of_q"]
CurveKind = Literal["IC", "DV"]

MIN_SAMPLES = 50
GRID_POINTS = 500
EDGE_FRACTION = 0.05


# ── Profiles ───────────────────────────────────────────────────────────
@dataclass(frozen=True, eq=False)
class QVProfile:
    """Charged capacity (Ah) against terminal voltage (V) for one CC charge.

    ``tolerance`` is the largest backwards step accepted in either column;
    measured data with sensor noise needs a positive value.
    """

    capacity: np.ndarray
    voltage: np.ndarray
    c_rate: float
    module_id: str = ""
    temperature: float = 25.0
    tolerance: float = 1e-9

    def __post_init__(self) -> None:
        q = np.asarray(self.capacity, dtype=float)
        v = np.asarray(self.voltage, dtype=float)
        object.__setattr__(self, "capacity", q)
        object.__setattr__(self, "voltage", v)

        if q.ndim != 1 or q.shape != v.shape:
            raise InputError("capacity and voltage must be 1-D arrays of equal length")
        if q.size < MIN_SAMPLES:
            raise InputError(f"profile {self.module_id!r} has {q.size} samples, "
                             f"need at least {MIN_SAMPLES}")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(v))):
            raise InputError(f"profile {self.module_id!r} contains non-finite samples")
        if np.min(np.diff(q)) < -self.tolerance:
            raise InputError(f"capacity of profile {self.module_id!r} is not nondecreasing")
        if np.min(np.diff(v)) < -self.tolerance:
            raise InputError(f"voltage of profile {self.module_id!r} is not nondecreasing")
        if self.c_rate <= 0:
            raise InputError("c_rate must be positive")

    @property
    def charged_capacity(self) -> float:
        return float(self.capacity[-1] - self.capacity[0])

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"capacity_ah": self.capacity, "voltage_v": self.voltage})

    @classmethod
    def from_frame(cls, df: pd.DataFrame, c_rate: float, module_id: str = "",
                   temperature: float = 25.0) -> "QVProfile":
        missing = {"capacity_ah", "voltage_v"} - set(df.columns)
        if missing:
            raise InputError(f"Q-V table lacks columns {sorted(missing)}")
        return cls(df["capacity_ah"].to_numpy(), df["voltage_v"].to_numpy(),
                   c_rate=c_rate, module_id=module_id, temperature=temperature)


# ── Smoothing ──────────────────────────────────────────────────────────
@dataclass(frozen=True)
class SmoothingConfig:
    """SVR hyperparameters.

    ``width`` (abscissa units) overrides ``width_factor`` × median sample spacing.
    ``c`` and ``epsilon`` act on standardized ordinates; the defaults were
    calibrated on simulator profiles and are frozen here. The derivative error
    scales with (epsilon + tol) / kernel width, so the tube stays tight and the
    fit runs on fewer, wider-spaced samples.
    """

    width_factor: float = 4.0
    width: float | None = None
    c: float = 100.0
    epsilon: float = 2e-4
    tol: float = 1e-4
    max_fit_samples: int = 100
    max_rmse_fraction: float = 0.01
    grid_points: int = GRID_POINTS

    def __post_init__(self) -> None:
        if self.width_factor <= 0 or (self.width is not None and self.width <= 0):
            raise ConfigError("kernel width must be positive")
        if self.c <= 0 or self.epsilon < 0 or self.tol <= 0:
            raise ConfigError("SVR needs c > 0, epsilon >= 0 and tol > 0")
        if self.max_fit_samples < MIN_SAMPLES:
            raise ConfigError(f"max_fit_samples must be at least {MIN_SAMPLES}")
        if self.grid_points < 3:
            raise ConfigError("grid_points must be at least 3")


@dataclass(frozen=True, eq=False)
class SmoothedCurveModel:
    """f(x) = bias + Σ w_j · exp(-(x - s_j)² / (2·width²)), all in physical units."""

    weights: np.ndarray
    locations: np.ndarray
    width: float
    bias: float
    orientation: Orientation
    window: tuple[float, float]
    fit_rmse: float = field(default=0.0)

    @property
    def support_coefficients(self) -> list[tuple[float, float]]:
        return list(zip(self.weights.tolist(), self.locations.tolist()))

    def _kernel(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        diff = np.asarray(x, dtype=float)[:, None] - self.locations[None, :]
        return diff, np.exp(-0.5 * (diff / self.width) ** 2)

    def evaluate(self, x) -> np.ndarray:
        _, k = self._kernel(np.atleast_1d(x))
        return self.bias + k @ self.weights

    def derivative(self, x) -> np.ndarray:
        diff, k = self._kernel(np.atleast_1d(x))
        return (-(diff / self.width**2) * k) @ self.weights

    def grid(self, points: int = GRID_POINTS) -> np.ndarray:
        return np.linspace(self.window[0], self.window[1], points)


def _thin(x: np.ndarray, y: np.ndarray, limit: int) -> tuple[np.ndarray, np.ndarray]:
    """Keep at most ``limit`` samples, picked nearest to a uniform abscissa grid."""
    order = np.argsort(x, kind="stable")
    xs, ys = x[order], y[order]
    if xs.size <= limit:
        return xs, ys
    targets = np.linspace(xs[0], xs[-1], limit)
    pos = np.clip(np.searchsorted(xs, targets), 1, xs.size - 1)
    left_closer = (targets - xs[pos - 1]) <= (xs[pos] - targets)
    idx = np.unique(np.where(left_closer, pos - 1, pos))
    return xs[idx], ys[idx]


def fit_qv_model(profile: QVProfile, hyper: SmoothingConfig | None = None,
                 orientation: Orientation = "q_of_v") -> SmoothedCurveModel:
    hyper = hyper or SmoothingConfig()
    if orientation == "q_of_v":
        x, y = profile.voltage, profile.capacity
    elif orientation == "v_of_q":
        x, y = profile.capacity, profile.voltage
    else:
        raise ConfigError(f"unknown orientation {orientation!r}")

    x, y = _thin(x, y, hyper.max_fit_samples)
    if x.size < MIN_SAMPLES:
        raise InputError(f"only {x.size} usable samples for the {orientation} fit")

    x_mean, x_sd = float(x.mean()), float(x.std())
    y_mean, y_sd = float(y.mean()), float(y.std())
    if x_sd == 0 or y_sd == 0:
        raise FitError("profile has no spread to fit", {"x_sd": x_sd, "y_sd": y_sd})

    if hyper.width is not None:
        width = hyper.width
    else:
        spacing = np.diff(np.unique(x))
        width = hyper.width_factor * float(np.median(spacing))
    width_z = width / x_sd

    svr = SVR(kernel="rbf", gamma=0.5 / width_z**2, C=hyper.c,
              epsilon=hyper.epsilon, tol=hyper.tol)
    svr.fit(((x - x_mean) / x_sd)[:, None], (y - y_mean) / y_sd)

    weights = svr.dual_coef_.ravel() * y_sd
    locations = svr.support_vectors_.ravel() * x_sd + x_mean
    bias = float(svr.intercept_[0]) * y_sd + y_mean

    report = {
        "orientation": orientation,
        "n_samples": int(x.size),
        "n_support": int(weights.size),
        "width": width,
    }
    if weights.size == 0 or not (np.all(np.isfinite(weights)) and np.isfinite(bias)):
        raise FitError("SVR returned no usable support coefficients", report)

    model = SmoothedCurveModel(weights, locations, width, bias, orientation,
                               window=(float(x[0]), float(x[-1])))
    rmse = float(np.sqrt(np.mean((model.evaluate(x) - y) ** 2)))
    bound = hyper.max_rmse_fraction * float(y[-1] - y[0] if y[-1] != y[0] else np.ptp(y))
    if rmse > bound:
        gram = np.exp(-0.5 * ((locations[:, None] - locations[None, :]) / width) ** 2)
        report.update(rmse=rmse, bound=bound, gram_condition=float(np.linalg.cond(gram)))
        raise FitError(f"{orientation} fit RMSE {rmse:.4g} exceeds bound {bound:.4g}", report)

    object.__setattr__(model, "fit_rmse", rmse)
    log.debug("fit %s module=%s rmse=%.4g support=%d width=%.4g", orientation,
              profile.module_id, rmse, weights.size, width)
    return model


def fit_curve_pair(profile: QVProfile, hyper: SmoothingConfig | None = None,
                   ) -> tuple[SmoothedCurveModel, SmoothedCurveModel]:
    return (fit_qv_model(profile, hyper, "q_of_v"),
            fit_qv_model(profile, hyper, "v_of_q"))


# ── Differential curves ────────────────────────────────────────────────
@dataclass(frozen=True, eq=False)
class DifferentialCurve:
    grid: np.ndarray
    values: np.ndarray
    kind: CurveKind

    def __post_init__(self) -> None:
        grid = np.asarray(self.grid, dtype=float)
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)
        if grid.ndim != 1 or grid.shape != values.shape or grid.size < 1:
            raise InputError("curve grid and values must be 1-D arrays of equal length")
        if np.any(np.diff(grid) <= 0):
            raise InputError("curve grid must be strictly increasing")
        if not np.all(np.isfinite(values)):
            raise InputError(f"{self.kind} curve has non-finite values")

    @property
    def window(self) -> tuple[float, float]:
        return float(self.grid[0]), float(self.grid[-1])

    def require_span(self) -> None:
        """Window consumers (trim, areas) need at least two grid points."""
        if self.grid.size < 2:
            raise InputError(f"{self.kind} curve evaluated at a single point has no window")

    def trim(self, fraction: float = EDGE_FRACTION) -> "DifferentialCurve":
        """Drop the outer ``fraction`` of the abscissa window on each side."""
        self.require_span()
        lo, hi = self.window
        margin = fraction * (hi - lo)
        slack = 1e-9 * (hi - lo)
        keep = (self.grid >= lo + margin - slack) & (self.grid <= hi - margin + slack)
        return DifferentialCurve(self.grid[keep], self.values[keep], self.kind)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"abscissa": self.grid, "value": self.values})


def _checked_grid(model: SmoothedCurveModel, grid, points: int) -> np.ndarray:
    grid = model.grid(points) if grid is None else np.atleast_1d(np.asarray(grid, dtype=float))
    lo, hi = model.window
    slack = 1e-9 * max(1.0, abs(hi - lo))
    if grid.min() < lo - slack or grid.max() > hi + slack:
        raise DomainError(f"grid [{grid.min():.4g}, {grid.max():.4g}] outside fit window "
                          f"[{lo:.4g}, {hi:.4g}]")
    return grid


def compute_ic_curve(model: SmoothedCurveModel, grid=None,
                     points: int = GRID_POINTS) -> DifferentialCurve:
    if model.orientation != "q_of_v":
        raise InputError("IC needs a Q(V) model")
    grid = _checked_grid(model, grid, points)
    return DifferentialCurve(grid, model.derivative(grid), "IC")


def compute_dv_curve(model: SmoothedCurveModel, grid=None,
                     points: int = GRID_POINTS) -> DifferentialCurve:
    if model.orientation != "v_of_q":
        raise InputError("DV needs a V(Q) model")
    grid = _checked_grid(model, grid, points)
    return DifferentialCurve(grid, model.derivative(grid), "DV")
