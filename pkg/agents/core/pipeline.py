"""
pipeline.py – nested cross-validation of selection + RVR per estimation task.

Outer loop: leave-one-out. For every outer fold, on the training split only:
    1. run feature selection on the task's labels,
    2. tune the RBF width with an inner K-fold grid search (MAE),
    3. train RVR with the chosen width and predict the held-out point.
Each task reads only its own label column (``GuardedLabels``).
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.stats import pearsonr
from sklearn.model_selection import KFold, LeaveOneOut

from agents.core import rvr
from agents.core.errors import ConfigError, InputError, StateError
from agents.core.featsel import SelectionConfig, SelectionResult, select_features
from agents.core.metrics import LABEL_COLUMNS

log = logging.getLogger(__name__)

TASKS = LABEL_COLUMNS
KEY_COLUMNS = ("module_id", "c_rate")
MIN_POINTS = 20

# predictor(train_rows, test_row) -> (mean, variance); replaces selection + RVR
FoldPredictor = Callable[[np.ndarray, int], tuple[float, float]]


@dataclass(frozen=True)
class RunConfig:
    task: str = "sd"
    n_features: int | tuple[int, ...] = 6
    inner_folds: int = 10
    kernel_width_grid: tuple[float, ...] = (0.5, 1.0, 2.0, 4.0)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    limits: rvr.TrainingLimits = field(default_factory=rvr.TrainingLimits)
    include_offset: bool = True
    seed: int = 0
    workers: int = 1

    def __post_init__(self) -> None:
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}; choose from {', '.join(TASKS)}")
        if self.inner_folds < 2:
            raise ConfigError("inner_folds must be at least 2")
        if not self.kernel_width_grid or min(self.kernel_width_grid) <= 0:
            raise ConfigError("kernel_width_grid needs positive widths")
        if min(self.sweep) < 1:
            raise ConfigError("n_features must be at least 1")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")

    @property
    def sweep(self) -> tuple[int, ...]:
        counts = self.n_features
        return (counts,) if isinstance(counts, int) else tuple(counts)

    @property
    def max_features(self) -> int:
        return max(self.sweep)


class GuardedLabels:
    """Label table that hands out only the column of one task and logs every read."""

    def __init__(self, labels: pd.DataFrame, task: str):
        if task not in labels.columns:
            raise InputError(f"labels have no {task!r} column")
        self._labels = labels
        self.task = task
        self.accessed: list[str] = []

    def __len__(self) -> int:
        return len(self._labels)

    def column(self, name: str) -> np.ndarray:
        self.accessed.append(name)
        if name != self.task:
            raise StateError(f"{self.task} pipeline tried to read {name!r} labels")
        return self._labels[name].to_numpy(dtype=float)

    def target(self) -> np.ndarray:
        return self.column(self.task)


@dataclass(frozen=True)
class Dataset:
    """Feature columns, label columns and the (module_id, c_rate) key, row-aligned."""

    keys: pd.DataFrame
    features: pd.DataFrame
    labels: pd.DataFrame

    def __post_init__(self) -> None:
        if not len(self.keys) == len(self.features) == len(self.labels):
            raise InputError("keys, features and labels must have the same number of rows")

    def __len__(self) -> int:
        return len(self.keys)

    @classmethod
    def from_tables(cls, features: pd.DataFrame, labels: pd.DataFrame) -> "Dataset":
        for name, df in (("features", features), ("labels", labels)):
            missing = set(KEY_COLUMNS) - set(df.columns)
            if missing:
                raise InputError(f"{name} table lacks key columns {sorted(missing)}")
        left = features.assign(c_rate=features["c_rate"].round(6))
        right = labels.assign(c_rate=labels["c_rate"].round(6))
        merged = left.merge(right, on=list(KEY_COLUMNS), how="inner", validate="one_to_one",
                            suffixes=("", "_label"))
        if len(merged) < len(features):
            log.warning("%d feature rows have no labels", len(features) - len(merged))
        merged = merged.sort_values(list(KEY_COLUMNS), kind="stable").reset_index(drop=True)
        feature_cols = [c for c in features.columns if c not in KEY_COLUMNS]
        label_cols = [c for c in labels.columns if c not in KEY_COLUMNS]
        return cls(merged[list(KEY_COLUMNS)], merged[feature_cols].astype(float),
                   merged[label_cols])


# ── Folds ──────────────────────────────────────────────────────────────
@dataclass(frozen=True)
class FoldResult:
    index: int
    mean: float
    variance: float
    n_rv: int
    width: float
    features: tuple[str, ...]
    flagged: bool = False
    model_hash: str = ""


def model_hash(model: rvr.RVRModel) -> str:
    payload = json.dumps(model.as_dict(), sort_keys=True).encode()
    return hashlib.sha256(payload).hexdigest()


def _complete(frame: pd.DataFrame, y: np.ndarray) -> np.ndarray:
    return frame.notna().all(axis=1).to_numpy() & np.isfinite(y)


def tune_width(x: np.ndarray, y: np.ndarray, config: RunConfig) -> tuple[float, dict[float, float]]:
    """Inner K-fold grid search; ties go to the smaller width."""
    folds = min(config.inner_folds, len(y))
    splitter = KFold(n_splits=folds, shuffle=True, random_state=config.seed)
    scores: dict[float, float] = {}
    for width in sorted(config.kernel_width_grid):
        kernel = rvr.KernelConfig(width, config.include_offset)
        errors = []
        for inner_train, inner_val in splitter.split(x):
            model = rvr.train(x[inner_train], y[inner_train], kernel, config.limits)
            errors.append(np.abs(rvr.predict(model, x[inner_val]).mean - y[inner_val]))
        scores[width] = float(np.mean(np.concatenate(errors)))
    best = min(scores, key=lambda w: (scores[w], w))
    return best, scores


def fold_selection(features: pd.DataFrame, y: np.ndarray, train_idx: np.ndarray,
                   config: RunConfig) -> SelectionResult:
    return select_features(features.iloc[train_idx], y[train_idx], config=config.selection)


def run_outer_fold(
    features: pd.DataFrame,
    y: np.ndarray,
    train_idx: np.ndarray,
    test_idx: int,
    config: RunConfig,
    n_features: int,
    selection: SelectionResult | None = None,
) -> tuple[FoldResult, rvr.RVRModel | None]:
    """One outer fold. Only ``y[train_idx]`` is read."""
    selection = selection or fold_selection(features, y, train_idx, config)
    if not selection.selected:
        raise ConfigError("feature selection returned an empty set")
    chosen = selection.top(n_features)

    test_row = features.iloc[test_idx][chosen]
    if test_row.isna().any():
        return FoldResult(test_idx, np.nan, np.nan, 0, np.nan, tuple(chosen), flagged=True), None

    train = features.iloc[train_idx][chosen]
    y_train = y[train_idx]
    ok = _complete(train, y_train)
    x_train, y_train = train.to_numpy(dtype=float)[ok], y_train[ok]

    width, _ = tune_width(x_train, y_train, config)
    model = rvr.train(x_train, y_train, rvr.KernelConfig(width, config.include_offset),
                      config.limits)
    pred = rvr.predict(model, test_row.to_numpy(dtype=float)[None, :])
    result = FoldResult(test_idx, float(pred.mean[0]), float(pred.variance[0]), model.n_rv,
                        width, tuple(chosen), model_hash=model_hash(model))
    return result, model


def _fold_task(features, y, train_idx, test_idx, config, n_features, selection):
    return run_outer_fold(features, y, train_idx, test_idx, config, n_features, selection)[0]


# ── Reports ────────────────────────────────────────────────────────────
@dataclass(frozen=True, eq=False)
class EvaluationReport:
    task: str
    n_features: int
    predictions: pd.DataFrame
    mae: float
    avg_three_sigma: float
    n_rv: float
    coverage: float
    pearson_r: float
    n_flagged: int = 0

    def metrics(self) -> dict:
        return {
            "task": self.task,
            "n_features": self.n_features,
            "n_points": int(len(self.predictions)),
            "n_flagged": self.n_flagged,
            "mae": self.mae,
            "avg_three_sigma": self.avg_three_sigma,
            "n_rv": self.n_rv,
            "coverage": self.coverage,
            "pearson_r": self.pearson_r,
        }


def evaluate_intervals(report: EvaluationReport | pd.DataFrame) -> float:
    """Fraction of evaluated rows whose truth lies in [mean - 3σ, mean + 3σ]."""
    rows = report.predictions if isinstance(report, EvaluationReport) else report
    rows = rows[~rows["flagged"]] if "flagged" in rows else rows
    if rows.empty:
        raise InputError("no evaluated rows to score")
    inside = (rows["truth"] >= rows["lower"]) & (rows["truth"] <= rows["upper"])
    return float(inside.mean())


def _report(dataset_keys: pd.DataFrame, y: np.ndarray, folds: Sequence[FoldResult],
            task: str, n_features: int) -> EvaluationReport:
    folds = sorted(folds, key=lambda f: f.index)
    mean = np.array([f.mean for f in folds])
    variance = np.array([f.variance for f in folds])
    three_sigma = 3.0 * np.sqrt(variance)
    predictions = dataset_keys.copy()
    predictions["truth"] = y
    predictions["mean"] = mean
    predictions["variance"] = variance
    predictions["lower"] = mean - three_sigma
    predictions["upper"] = mean + three_sigma
    predictions["three_sigma"] = three_sigma
    predictions["n_rv"] = [f.n_rv for f in folds]
    predictions["width"] = [f.width for f in folds]
    predictions["flagged"] = [f.flagged for f in folds]

    evaluated = predictions[~predictions["flagged"]]
    n_flagged = int(predictions["flagged"].sum())
    if n_flagged:
        log.warning("%s: %d test points lack selected features and were excluded", task,
                    n_flagged)
    if evaluated.empty:
        raise InputError(f"{task}: every test point was excluded")
    errors = np.abs(evaluated["mean"] - evaluated["truth"])
    if len(evaluated) > 1 and evaluated["mean"].std() > 0 and evaluated["truth"].std() > 0:
        r = float(pearsonr(evaluated["truth"], evaluated["mean"])[0])
    else:
        r = float("nan")
    return EvaluationReport(
        task=task,
        n_features=n_features,
        predictions=predictions,
        mae=float(errors.mean()),
        avg_three_sigma=float(evaluated["three_sigma"].mean()),
        n_rv=float(evaluated["n_rv"].mean()),
        coverage=evaluate_intervals(evaluated),
        pearson_r=r,
        n_flagged=n_flagged,
    )


def _outer_splits(n: int) -> list[tuple[np.ndarray, int]]:
    return [(train, int(test[0])) for train, test in LeaveOneOut().split(np.zeros((n, 1)))]


def _target(dataset: Dataset, labels: GuardedLabels | None, task: str) -> np.ndarray:
    guard = labels if labels is not None else GuardedLabels(dataset.labels, task)
    if guard.task != task:
        raise ConfigError(f"label guard is for {guard.task!r}, run is for {task!r}")
    return guard.target()


def fold_selections(dataset: Dataset, config: RunConfig,
                    labels: GuardedLabels | None = None) -> dict[int, SelectionResult]:
    """Per-fold selection rankings, computed on each outer training split."""
    y = _target(dataset, labels, config.task)
    splits = _outer_splits(len(dataset))
    if config.workers > 1:
        results = Parallel(n_jobs=config.workers)(
            delayed(fold_selection)(dataset.features, y, train, config) for train, _ in splits)
    else:
        results = [fold_selection(dataset.features, y, train, config) for train, _ in splits]
    return {test: result for (_, test), result in zip(splits, results)}


def nested_cv(dataset: Dataset, config: RunConfig, labels: GuardedLabels | None = None,
              selections: dict[int, SelectionResult] | None = None,
              fold_predictor: FoldPredictor | None = None,
              n_features: int | None = None) -> EvaluationReport:
    n_features = n_features or config.sweep[0]
    y = _target(dataset, labels, config.task)
    if len(dataset) < MIN_POINTS:
        raise InputError(f"nested CV needs at least {MIN_POINTS} points, got {len(dataset)}")
    splits = _outer_splits(len(dataset))
    log.info("%s: %d outer folds, %d features", config.task, len(splits), n_features)

    if fold_predictor is not None:
        folds = []
        for train, test in splits:
            mean, variance = fold_predictor(train, test)
            folds.append(FoldResult(test, float(mean), float(variance), 0, np.nan, ()))
        return _report(dataset.keys, y, folds, config.task, n_features)

    selections = selections or {}
    jobs = [(train, test, selections.get(test)) for train, test in splits]
    if config.workers > 1:
        folds = Parallel(n_jobs=config.workers)(
            delayed(_fold_task)(dataset.features, y, train, test, config, n_features, sel)
            for train, test, sel in jobs)
    else:
        folds = [_fold_task(dataset.features, y, train, test, config, n_features, sel)
                 for train, test, sel in jobs]
    return _report(dataset.keys, y, folds, config.task, n_features)


def feature_count_sweep(dataset: Dataset, config: RunConfig,
                        labels: GuardedLabels | None = None,
                        ) -> tuple[pd.DataFrame, dict[int, EvaluationReport]]:
    """One nested CV per feature count, all sharing the per-fold rankings."""
    selections = fold_selections(dataset, config, labels)
    shortest = min(len(s.selected) for s in selections.values())
    if config.max_features > shortest:
        raise ConfigError(f"sweep asks for {config.max_features} features, "
                          f"a fold selected only {shortest}")
    reports = {}
    for count in config.sweep:
        reports[count] = nested_cv(dataset, config, labels, selections, n_features=count)
        log.info("%s sweep n=%d: mae=%.5f", config.task, count, reports[count].mae)
    table = pd.DataFrame([
        {"n_features": n, "mae": r.mae, "avg_three_sigma": r.avg_three_sigma,
         "n_rv": r.n_rv, "coverage": r.coverage, "pearson_r": r.pearson_r}
        for n, r in reports.items()
    ])
    return table, reports


def presentation_ranking(dataset: Dataset, config: RunConfig,
                         labels: GuardedLabels | None = None) -> SelectionResult:
    """Selection on the whole dataset; for reporting only, never used to predict."""
    y = _target(dataset, labels, config.task)
    return select_features(dataset.features, y, config=config.selection)


def with_task(config: RunConfig, task: str) -> RunConfig:
    return replace(config, task=task)
