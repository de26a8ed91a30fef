"""
featsel.py – greedy information-theoretic feature selection.

Each round picks the unselected feature X maximizing

    J(X) = Ĩ(X;Y) - mean_j Ĩ(X;X_j) + mean_j Ĩ(X;X_j|Y),   X_j in S

and then moves every unselected feature that is completely redundant with the
winner (Ĩ(X*;X) >= threshold) to the removed set. With an empty S the score is
the relevance alone. Ties go to the lexicographically smallest name.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd

from agents.core import infotheory
from agents.core.errors import (
    ConfigError,
    DegenerateColumnError,
    InputError,
    SelectionError,
    StateError,
)

log = logging.getLogger(__name__)

MIN_CANDIDATES = 2


@dataclass(frozen=True)
class SelectionConfig:
    threshold: float = 0.95
    k: int = infotheory.DEFAULT_K
    seed: int = infotheory.DEFAULT_SEED

    def __post_init__(self) -> None:
        if self.threshold <= 0:
            raise ConfigError("threshold must be positive")
        if self.k < 3:
            raise ConfigError("k must be at least 3")


@dataclass
class SelectionState:
    """S, U and R over the feature set; S keeps insertion order."""

    selected: list[str]
    unselected: set[str]
    removed: set[str]
    threshold: float

    @classmethod
    def start(cls, names: Sequence[str], preselected: Sequence[str],
              threshold: float) -> "SelectionState":
        return cls(list(preselected), set(names) - set(preselected), set(), threshold)

    def select(self, name: str) -> None:
        self.unselected.remove(name)
        self.selected.append(name)

    def remove(self, names: Sequence[str]) -> None:
        self.unselected.difference_update(names)
        self.removed.update(names)


@dataclass(frozen=True)
class CandidateScore:
    relevance: float
    avg_redundancy: float = 0.0
    avg_complementarity: float = 0.0

    @property
    def total(self) -> float:
        return self.relevance - self.avg_redundancy + self.avg_complementarity

    def as_dict(self) -> dict[str, float]:
        return {**asdict(self), "score": self.total}


class ScoreBook:
    """Memoized normalized MI/CMI over the standardized columns of one run."""

    def __init__(self, data: pd.DataFrame, target: np.ndarray, k: int, seed: int):
        self.columns = {name: data[name].to_numpy(dtype=float) for name in data.columns}
        self.target = target
        self.k = k
        self.seed = seed
        self._self_mi: dict[str, float] = {}
        self._pairs: dict[tuple[str, str, str], float] = {}

    def _self(self, name: str) -> float:
        if name not in self._self_mi:
            column = self.target if name == "" else self.columns[name]
            self._self_mi[name] = infotheory.estimate_mi(column, column, self.k, self.seed)
        return self._self_mi[name]

    def relevance(self, x: str) -> float:
        key = ("rel", x, "")
        if key not in self._pairs:
            raw = infotheory.estimate_mi(self.columns[x], self.target, self.k, self.seed)
            self._pairs[key] = infotheory.normalize(raw, self._self(x), self._self(""))
        return self._pairs[key]

    def redundancy(self, a: str, b: str) -> float:
        a, b = sorted((a, b))
        key = ("red", a, b)
        if key not in self._pairs:
            raw = infotheory.estimate_mi(self.columns[a], self.columns[b], self.k, self.seed)
            self._pairs[key] = infotheory.normalize(raw, self._self(a), self._self(b))
        return self._pairs[key]

    def complementarity(self, a: str, b: str) -> float:
        a, b = sorted((a, b))
        key = ("cmp", a, b)
        if key not in self._pairs:
            raw = infotheory.estimate_cmi(self.columns[a], self.columns[b], self.target, self.k)
            self._pairs[key] = infotheory.normalize(raw, self._self(a), self._self(b))
        return self._pairs[key]


def score_candidate(x: str, state: SelectionState, book: ScoreBook) -> CandidateScore:
    if x not in state.unselected:
        where = ("selected" if x in state.selected
                 else "removed" if x in state.removed else "unknown")
        raise StateError(f"cannot score {x!r}: feature is {where}")
    relevance = book.relevance(x)
    if not state.selected:
        return CandidateScore(relevance)
    redundancy = np.mean([book.redundancy(x, s) for s in state.selected])
    complementarity = np.mean([book.complementarity(x, s) for s in state.selected])
    return CandidateScore(relevance, float(redundancy), float(complementarity))


@dataclass(frozen=True)
class IterationRecord:
    step: int
    chosen: str
    scores: dict[str, CandidateScore]
    removed: tuple[str, ...]

    def as_dict(self) -> dict:
        return {
            "step": self.step,
            "chosen": self.chosen,
            "removed": list(self.removed),
            "scores": {name: s.as_dict() for name, s in sorted(self.scores.items())},
        }


@dataclass(frozen=True)
class SelectionResult:
    selected: tuple[str, ...]
    removed: tuple[str, ...]
    threshold: float
    preselected: tuple[str, ...] = ()
    pre_removed: tuple[str, ...] = ()
    dropped_constant: tuple[str, ...] = ()
    iterations: tuple[IterationRecord, ...] = field(default=())
    n_rows: int = 0

    def top(self, n: int) -> list[str]:
        if n > len(self.selected):
            raise ConfigError(f"asked for {n} features, only {len(self.selected)} selected")
        return list(self.selected[:n])

    def as_dict(self) -> dict:
        return {
            "ranked_selected": list(self.selected),
            "removed": list(self.removed),
            "preselected": list(self.preselected),
            "pre_removed": list(self.pre_removed),
            "dropped_constant": list(self.dropped_constant),
            "threshold": self.threshold,
            "n_rows": self.n_rows,
            "iterations": [it.as_dict() for it in self.iterations],
        }


# ── Preparation ────────────────────────────────────────────────────────
def prepare(data: pd.DataFrame, target: Sequence[float] | np.ndarray,
            ) -> tuple[pd.DataFrame, np.ndarray, tuple[str, ...]]:
    """Complete-case rows, standardized columns; constant columns are dropped."""
    y = np.asarray(target, dtype=float)
    if len(data) != y.size:
        raise InputError(f"{len(data)} feature rows but {y.size} targets")
    keep = data.notna().all(axis=1).to_numpy() & np.isfinite(y)
    if not keep.all():
        log.warning("dropping %d of %d rows with missing features or target",
                    int((~keep).sum()), keep.size)
    data, y = data.loc[keep], y[keep]

    standardized, dropped = {}, []
    for name in data.columns:
        try:
            standardized[name] = infotheory.standardize(
                infotheory.SampleColumn(data[name].to_numpy(dtype=float), name=name))
        except DegenerateColumnError:
            dropped.append(name)
    if dropped:
        log.warning("dropping constant features: %s", ", ".join(dropped))
    frame = pd.DataFrame(standardized, index=data.index)
    return frame, infotheory.standardize(infotheory.SampleColumn(y, name="target")), tuple(dropped)


def select_features(data: pd.DataFrame, target: Sequence[float] | np.ndarray,
                    preselected: Sequence[str] | None = None,
                    config: SelectionConfig | None = None) -> SelectionResult:
    config = config or SelectionConfig()
    preselected = list(preselected or [])
    unknown = set(preselected) - set(data.columns)
    if unknown:
        raise ConfigError(f"preselected features not in table: {sorted(unknown)}")

    frame, y, dropped = prepare(data, target)
    constant = sorted(set(preselected) & set(dropped))
    if constant:
        raise ConfigError(f"preselected features are constant: {constant}")
    names = sorted(frame.columns)
    if len(names) < MIN_CANDIDATES:
        raise SelectionError(f"need at least {MIN_CANDIDATES} usable features, got {len(names)}",
                             {"dropped_constant": list(dropped), "n_rows": len(frame)})

    book = ScoreBook(frame, y, config.k, config.seed)
    state = SelectionState.start(names, preselected, config.threshold)

    pre_removed = sorted(
        x for x in state.unselected
        if any(book.redundancy(x, s) >= config.threshold for s in state.selected)
    )
    state.remove(pre_removed)
    if not state.selected and not state.unselected:
        raise SelectionError("every feature was removed before selection",
                             {"pre_removed": pre_removed, "dropped_constant": list(dropped)})

    iterations = []
    while state.unselected:
        scores = {x: score_candidate(x, state, book) for x in sorted(state.unselected)}
        best = min(scores, key=lambda name: (-scores[name].total, name))
        state.select(best)
        redundant = sorted(x for x in state.unselected
                           if book.redundancy(best, x) >= config.threshold)
        state.remove(redundant)
        iterations.append(IterationRecord(len(iterations) + 1, best, scores, tuple(redundant)))
        log.debug("step %d: %s (J=%.4f), removed %s", len(iterations), best,
                  scores[best].total, redundant or "-")

    log.info("selected %d features, removed %d (threshold %.3f, %d rows)",
             len(state.selected), len(state.removed), config.threshold, len(frame))
    return SelectionResult(
        selected=tuple(state.selected),
        removed=tuple(sorted(state.removed)),
        threshold=config.threshold,
        preselected=tuple(preselected),
        pre_removed=tuple(pre_removed),
        dropped_constant=dropped,
        iterations=tuple(iterations),
        n_rows=len(frame),
    )


def rank_report(result: SelectionResult) -> pd.DataFrame:
    """Rank, name and the score components each feature had when it was chosen."""
    chosen = {it.chosen: it.scores[it.chosen] for it in result.iterations}
    rows = []
    for rank, name in enumerate(result.selected, start=1):
        score = chosen.get(name)
        parts = score.as_dict() if score else dict.fromkeys(
            ("relevance", "avg_redundancy", "avg_complementarity", "score"), np.nan)
        rows.append({"rank": rank, "name": name, **parts,
                     "preselected": name in result.preselected})
    return pd.DataFrame(rows, columns=["rank", "name", "relevance", "avg_redundancy",
                                       "avg_complementarity", "score", "preselected"])


@dataclass(frozen=True)
class ScoreMatrices:
    relevance: pd.Series
    redundancy: pd.DataFrame
    complementarity: pd.DataFrame


def score_matrices(data: pd.DataFrame, target: Sequence[float] | np.ndarray,
                   config: SelectionConfig | None = None) -> ScoreMatrices:
    """Normalized relevance, pairwise redundancy and pairwise complementarity."""
    config = config or SelectionConfig()
    frame, y, _ = prepare(data, target)
    names = sorted(frame.columns)
    book = ScoreBook(frame, y, config.k, config.seed)

    relevance = pd.Series({n: book.relevance(n) for n in names}, name="relevance")
    redundancy = pd.DataFrame(1.0, index=names, columns=names)
    complementarity = pd.DataFrame(np.nan, index=names, columns=names)
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            redundancy.loc[a, b] = redundancy.loc[b, a] = book.redundancy(a, b)
            complementarity.loc[a, b] = complementarity.loc[b, a] = book.complementarity(a, b)
    return ScoreMatrices(relevance, redundancy, complementarity)
