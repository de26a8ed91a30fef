"""
metrics.py – SoH and cell-to-cell variation labels from cell-level SoH lists.

SD uses the population convention (divide by N), not the sample one most
statistics defaults apply.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from agents.core.errors import InputError

LABEL_COLUMNS = ("m_soh", "sd", "range", "cv")


@dataclass(frozen=True)
class SohLabels:
    c_soh: tuple[float, ...]
    m_soh: float
    sd: float
    range: float
    cv: float

    @property
    def n_parallel(self) -> int:
        return len(self.c_soh)

    def as_row(self) -> dict[str, float]:
        row = {name: getattr(self, name) for name in LABEL_COLUMNS}
        for i, value in enumerate(self.c_soh, start=1):
            row[f"c_soh_{i}"] = value
        return row


def compute_labels(c_soh: Sequence[float]) -> SohLabels:
    values = np.asarray(c_soh, dtype=float)
    if values.ndim != 1 or values.size == 0:
        raise InputError("C-SoH list must be a non-empty sequence")
    if not np.all(np.isfinite(values)) or np.any(values <= 0.0) or np.any(values > 1.0):
        raise InputError(f"C-SoH values must lie in (0, 1], got {values.tolist()}")

    m_soh = float(np.mean(values))
    sd = float(np.std(values))
    return SohLabels(
        c_soh=tuple(float(v) for v in values),
        m_soh=m_soh,
        sd=sd,
        range=float(values.max() - values.min()),
        cv=sd / m_soh,
    )
