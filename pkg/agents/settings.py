"""
settings.py – run configuration, logging and exit codes shared by the stage agents.

Precedence, highest first: CLI flags, the TOML run file, MODHEALTH_* environment
variables (a .env file is honoured), built-in defaults.
"""

from __future__ import annotations

import argparse
import datetime as dt
import json
import logging
import os
import sys
import tomllib
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Callable

from dotenv import load_dotenv

from agents.core.curves import SmoothingConfig
from agents.core.errors import (
    ConfigError,
    InputError,
    ModHealthError,
    NumericError,
    SelectionError,
)
from agents.core.featsel import SelectionConfig
from agents.core.features import FeatureConfig
from agents.core.pipeline import TASKS, RunConfig
from agents.core.rvr import TrainingLimits
from agents.core.simulate import FleetTemplate, SamplerSpec, SimulationConfig

# ── Paths ──────────────────────────────────────────────────────────────
ROOT = Path(__file__).resolve().parent.parent
DEFAULT_CONFIG = ROOT / "config" / "modhealth.toml"
DEFAULT_OUT = ROOT / "runs"

load_dotenv()

SECTIONS = ("simulate", "curves", "features", "select", "train", "evaluate")
LOG_FORMAT = "%(asctime)s  %(levelname)s  %(message)s"

EXIT_OK, EXIT_FAILURE, EXIT_BAD_INPUT, EXIT_NUMERIC = 0, 1, 2, 3


# ── Logging ────────────────────────────────────────────────────────────
def log_dir() -> Path:
    return Path(os.getenv("MODHEALTH_LOG_DIR") or ROOT / "logs")


def setup_logging(stage: str) -> Path:
    folder = log_dir()
    folder.mkdir(parents=True, exist_ok=True)
    path = folder / f"{stage}_{dt.date.today():%Y-%m-%d}.log"
    logging.basicConfig(filename=path, level=logging.INFO, format=LOG_FORMAT)
    return path


# ── Exit codes ─────────────────────────────────────────────────────────
def exit_code(exc: BaseException) -> int:
    if isinstance(exc, (ConfigError, InputError)):
        return EXIT_BAD_INPUT
    if isinstance(exc, (NumericError, SelectionError)):
        return EXIT_NUMERIC
    return EXIT_FAILURE


def run(entry: Callable[[], None]) -> int:
    """Call a stage entry point and turn library errors into exit codes."""
    try:
        entry()
    except ModHealthError as exc:
        logging.error("%s: %s", type(exc).__name__, exc)
        sys.stderr.write(f"[ERROR] {type(exc).__name__}: {exc}\n")
        return exit_code(exc)
    return EXIT_OK


# ── Run file ───────────────────────────────────────────────────────────
def load_config(path: Path | str | None = None) -> dict[str, dict[str, Any]]:
    """Read a TOML run file. Missing sections come back empty; a missing
    default file is the same as an empty one, a missing explicit file is not."""
    explicit = path is not None
    path = Path(path) if explicit else DEFAULT_CONFIG
    if not path.exists():
        if explicit:
            raise ConfigError(f"config file not found: {path}")
        return {name: {} for name in SECTIONS}
    try:
        data = tomllib.loads(path.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path.name}: {exc}") from exc
    unknown = sorted(set(data) - set(SECTIONS))
    if unknown:
        raise ConfigError(f"{path.name}: unknown sections {unknown}")
    return {name: dict(data.get(name, {})) for name in SECTIONS}


def _env_int(name: str) -> int | None:
    raw = os.getenv(name)
    if raw in (None, ""):
        return None
    try:
        return int(raw)
    except ValueError as exc:
        raise ConfigError(f"{name}={raw!r} is not an integer") from exc


def pick(cli: Any, section: dict[str, Any], key: str, env: str | None, default: Any) -> Any:
    if cli is not None:
        return cli
    if key in section:
        return section[key]
    if env is not None:
        value = _env_int(env)
        if value is not None:
            return value
    return default


def build(cls: type, section: dict[str, Any], name: str, **extra: Any):
    """Instantiate a config dataclass from a TOML table, rejecting unknown keys."""
    _reject_unknown(section, name, {f.name for f in fields(cls)})
    values = {**section, **extra}
    values = {k: tuple(v) if isinstance(v, list) else v for k, v in values.items()}
    try:
        return cls(**values)
    except TypeError as exc:
        raise ConfigError(f"[{name}] {exc}") from exc


def _reject_unknown(section: dict[str, Any], name: str, allowed: set[str]) -> None:
    unknown = sorted(set(section) - allowed)
    if unknown:
        raise ConfigError(f"[{name}] unknown keys {unknown}")


def _table(section: dict[str, Any], key: str, name: str) -> dict[str, Any]:
    value = section.get(key, {})
    if not isinstance(value, dict):
        raise ConfigError(f"[{name}] '{key}' must be a table")
    return value


# ── Stage configs ──────────────────────────────────────────────────────
def fleet_setup(config: dict, seed: int | None = None, workers: int | None = None) -> dict:
    """Everything ``generate_fleet`` needs, from the [simulate] section."""
    section = config["simulate"]
    _reject_unknown(section, "simulate", {"n_modules", "c_rates", "seed", "temperature",
                                          "workers", "cells", "sampler", "solver"})
    solver = _table(section, "solver", "simulate.solver")
    cells = _table(section, "cells", "simulate.cells")
    simulation = build(SimulationConfig, solver, "simulate.solver",
                       temperature=float(section.get("temperature", 25.0)))
    template = build(FleetTemplate, cells, "simulate.cells", simulation=simulation)
    sampler = build(SamplerSpec, _table(section, "sampler", "simulate.sampler"),
                    "simulate.sampler")
    c_rates = [float(c) for c in section.get("c_rates", [0.5, 0.25])]
    n_modules = int(section.get("n_modules", 78))
    return {
        "n_modules": n_modules,
        "c_soh_sampler": sampler,
        "c_rates": c_rates,
        "seed": int(pick(seed, section, "seed", "MODHEALTH_SEED", 0)),
        "template": template,
        "workers": int(pick(workers, section, "workers", "MODHEALTH_WORKERS", 1)),
    }


def smoothing_config(config: dict) -> SmoothingConfig:
    return build(SmoothingConfig, config["curves"], "curves")


def feature_config(config: dict) -> FeatureConfig:
    return build(FeatureConfig, config["features"], "features")


def selection_config(config: dict, seed: int | None = None,
                     threshold: float | None = None) -> SelectionConfig:
    section = dict(config["select"])
    section["seed"] = int(pick(seed, section, "seed", "MODHEALTH_SEED", 0))
    if threshold is not None:
        section["threshold"] = threshold
    return build(SelectionConfig, section, "select")


def training_limits(config: dict) -> TrainingLimits:
    return build(TrainingLimits, config["train"], "train")


def tasks(config: dict) -> list[str]:
    configured = list(config["evaluate"].get("tasks", ["sd", "m_soh"]))
    unknown = sorted(set(configured) - set(TASKS))
    if unknown:
        raise ConfigError(f"[evaluate] unknown tasks {unknown}")
    if not configured:
        raise ConfigError("[evaluate] tasks must not be empty")
    return configured


def default_task(config: dict) -> str:
    return tasks(config)[0]


def run_config(config: dict, task: str, seed: int | None = None,
               workers: int | None = None) -> RunConfig:
    """RunConfig for one task. ``n_features`` is the reported count; ``sweep``
    adds the counts of the MAE-vs-feature-count table."""
    section = config["evaluate"]
    _reject_unknown(section, "evaluate", {"tasks", "n_features", "sweep", "inner_folds",
                                          "kernel_width_grid", "include_offset", "seed",
                                          "workers"})
    n_features = int(section.get("n_features", 6))
    sweep = tuple(sorted({n_features, *(int(n) for n in section.get("sweep", []))}))
    run_seed = int(pick(seed, section, "seed", "MODHEALTH_SEED", 0))
    return RunConfig(
        task=task,
        n_features=sweep if len(sweep) > 1 else n_features,
        inner_folds=int(section.get("inner_folds", 10)),
        kernel_width_grid=tuple(float(w) for w in
                                section.get("kernel_width_grid", (0.5, 1.0, 2.0, 4.0))),
        selection=selection_config(config, seed),
        limits=training_limits(config),
        include_offset=bool(section.get("include_offset", True)),
        seed=run_seed,
        workers=int(pick(workers, section, "workers", "MODHEALTH_WORKERS", 1)),
    )


def reported_count(config: dict) -> int:
    return int(config["evaluate"].get("n_features", 6))


# ── CLI helpers ────────────────────────────────────────────────────────
def add_common_args(ap: argparse.ArgumentParser) -> argparse.ArgumentParser:
    ap.add_argument("--config", help=f"TOML run file (default {DEFAULT_CONFIG.name} if present)")
    ap.add_argument("--out", default=str(DEFAULT_OUT), help="run directory shared by all stages")
    ap.add_argument("--seed", type=int, help="overrides every seed of the run")
    ap.add_argument("--workers", type=int, help="joblib workers")
    return ap


def add_task_arg(ap: argparse.ArgumentParser) -> argparse.ArgumentParser:
    ap.add_argument("--task", "--target", dest="task", choices=TASKS,
                    help="estimation target (default: first of [evaluate] tasks)")
    return ap


def require(path: Path, hint: str) -> Path:
    if not path.exists():
        raise InputError(f"{path.name} not found in {path.parent} – run {hint} first")
    return path


# ── Run directory ──────────────────────────────────────────────────────
@dataclass(frozen=True)
class RunDir:
    """File layout shared by the stages inside one ``--out`` directory."""

    root: Path

    @property
    def profiles(self) -> Path:
        return self.root / "profiles"

    @property
    def profile_index(self) -> Path:
        return self.root / "profiles.csv"

    @property
    def labels(self) -> Path:
        return self.root / "labels.csv"

    @property
    def curves(self) -> Path:
        return self.root / "curves"

    @property
    def features(self) -> Path:
        return self.root / "features.csv"

    def selection(self, task: str) -> Path:
        return self.root / f"selection_{task}.json"

    def scores(self, task: str) -> Path:
        return self.root / "scores" / task

    def model(self, task: str) -> Path:
        return self.root / f"model_{task}.json"

    def report(self, task: str) -> Path:
        return self.root / "evaluate" / task


def write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
