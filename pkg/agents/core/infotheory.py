"""
infotheory.py – kNN estimates of (conditional) mutual information for mixed data.

The CMI estimator works on max-norm neighbourhoods. The radius is the distance
to the k-th neighbour in the joint (f, g, h) space. Neighbours strictly inside
that radius are then counted in the (f, h), (g, h) and (h) subspaces. When
the radius is zero (discrete ties) the realized tie count replaces k.

MI is the CMI given an independent white Gaussian column. The noise comes from
its own seed stream, so every call with the same sample size and seed conditions
on the same noise, and that noise never replays data drawn from the plain seed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Literal, Union

import numpy as np
from numpy.typing import ArrayLike
from scipy.spatial import cKDTree
from scipy.special import digamma

from agents.core.errors import ConfigError, DegenerateColumnError, InputError

log = logging.getLogger(__name__)

DEFAULT_K = 7
DEFAULT_SEED = 0
NOISE_STREAM = 0x4D49
MIN_SAMPLES = 20


@dataclass(frozen=True, eq=False)
class SampleColumn:
    values: np.ndarray
    declared_kind: Literal["continuous", "discrete", "mixed"] = "continuous"
    name: str = ""

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        if values.ndim != 1:
            raise InputError(f"column {self.name!r} must be 1-D")
        if not np.all(np.isfinite(values)):
            raise InputError(f"column {self.name!r} contains non-finite values")

    def __len__(self) -> int:
        return self.values.size


Column = Union[SampleColumn, ArrayLike]


def _values(column: Column) -> np.ndarray:
    if isinstance(column, SampleColumn):
        return column.values
    values = np.asarray(column, dtype=float)
    if values.ndim != 1 or not np.all(np.isfinite(values)):
        raise InputError("sample columns must be finite 1-D arrays")
    return values


@dataclass(frozen=True)
class MIEstimate:
    raw: float  # nats
    normalized: float
    k_neighbors: int
    seed: int


def standardize(column: Column) -> np.ndarray:
    """Zero mean, unit population standard deviation."""
    values = _values(column)
    if values.size < 2:
        raise InputError("standardize needs at least two samples")
    sd = values.std()
    if sd == 0.0:
        name = column.name if isinstance(column, SampleColumn) else "?"
        raise DegenerateColumnError(f"column {name!r} has zero variance")
    return (values - values.mean()) / sd


def _check_k(k: int, n: int) -> None:
    if n < MIN_SAMPLES:
        raise InputError(f"need at least {MIN_SAMPLES} samples, got {n}")
    if not 3 <= k <= n / 4:
        raise ConfigError(f"k={k} outside [3, N/4] for N={n}")


def _counts(space: np.ndarray, radius: np.ndarray) -> np.ndarray:
    tree = cKDTree(space)
    # query_ball_point counts the point itself
    return tree.query_ball_point(space, r=radius, p=np.inf, return_length=True) - 1


def estimate_cmi(f: Column, g: Column, h: Column, k: int = DEFAULT_K) -> float:
    """I(F; G | H) in nats; columns are expected to be standardized already."""
    fv, gv, hv = _values(f), _values(g), _values(h)
    n = fv.size
    if gv.size != n or hv.size != n:
        raise InputError(f"column lengths differ: {fv.size}, {gv.size}, {hv.size}")
    _check_k(k, n)

    joint = np.column_stack([fv, gv, hv])
    tree = cKDTree(joint)
    distances, _ = tree.query(joint, k=k + 1, p=np.inf)
    rho = distances[:, k]

    tied = rho == 0.0
    k_tilde = np.full(n, float(k))
    if np.any(tied):
        k_tilde[tied] = tree.query_ball_point(joint[tied], r=0.0, p=np.inf,
                                              return_length=True) - 1
    radius = np.where(tied, 0.0, np.nextafter(rho, 0.0))

    n_fh = _counts(np.column_stack([fv, hv]), radius)
    n_gh = _counts(np.column_stack([gv, hv]), radius)
    n_h = _counts(hv[:, None], radius)
    terms = digamma(k_tilde) - digamma(n_fh + 1.0) - digamma(n_gh + 1.0) + digamma(n_h + 1.0)
    return float(np.mean(terms))


def white_noise(n: int, seed: int = DEFAULT_SEED) -> np.ndarray:
    # tagged seed: never the same stream as a caller drawing data from default_rng(seed)
    return np.random.default_rng([seed, NOISE_STREAM]).standard_normal(n)


def estimate_mi(f: Column, g: Column, k: int = DEFAULT_K, seed: int = DEFAULT_SEED) -> float:
    fv = _values(f)
    return estimate_cmi(fv, g, white_noise(fv.size, seed), k)


def normalize(raw: float, self_f: float, self_g: float) -> float:
    """raw / min(self_f, self_g), clipped to [0, 1]."""
    denominator = min(self_f, self_g)
    if denominator <= 0:
        raise DegenerateColumnError(f"self-information must be positive, got "
                                    f"({self_f:.4g}, {self_g:.4g})")
    return float(np.clip(raw / denominator, 0.0, 1.0))


def normalized_mi(f: Column, g: Column, k: int = DEFAULT_K,
                  seed: int = DEFAULT_SEED) -> MIEstimate:
    raw = estimate_mi(f, g, k, seed)
    value = normalize(raw, estimate_mi(f, f, k, seed), estimate_mi(g, g, k, seed))
    return MIEstimate(raw, value, k, seed)


def normalized_cmi(f: Column, g: Column, h: Column, k: int = DEFAULT_K,
                   seed: int = DEFAULT_SEED) -> MIEstimate:
    """Ĩ(F;G|H), normalized by the self-MI of F and G like the unconditional case."""
    raw = estimate_cmi(f, g, h, k)
    value = normalize(raw, estimate_mi(f, f, k, seed), estimate_mi(g, g, k, seed))
    return MIEstimate(raw, value, k, seed)
