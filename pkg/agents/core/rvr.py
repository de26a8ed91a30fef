"""
rvr.py – relevance vector regression trained by Type-II maximum likelihood.

Model (standardized units):  t(x) = w0 + Σ_j w_j K(x, x_j),  K = RBF.
Each weight has a zero-mean Gaussian prior with its own precision α_j. The
fixed-point re-estimation is

    Σ = (β ΦᵀΦ + A)⁻¹      μ = β Σ Φᵀ y
    γ_j = 1 - α_j Σ_jj     α_j ← γ_j / μ_j²     β ← (N - Σγ) / ‖y - Φμ‖²

and weights whose α exceeds the prune threshold are deleted together with
their rows/columns in Σ, μ, Φ and α. Inputs and targets are standardized
inside ``train``; predictions are returned in the original units.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg
from sklearn.metrics.pairwise import rbf_kernel

from agents.core.errors import ConfigError, DegenerateModelError, InputError, NumericError

log = logging.getLogger(__name__)

MODEL_FORMAT = "modhealth-rvr"
MODEL_VERSION = 1
MIN_TRAIN = 10


# ── Configuration ──────────────────────────────────────────────────────
@dataclass(frozen=True)
class KernelConfig:
    """RBF K(a, b) = exp(-‖a - b‖² / (2·width²)) on standardized inputs."""

    width: float = 1.0
    include_offset: bool = True
    kind: str = "rbf"

    def __post_init__(self) -> None:
        if self.kind != "rbf":
            raise ConfigError(f"unsupported kernel {self.kind!r}")
        if not self.width > 0:
            raise ConfigError("kernel width must be positive")

    @property
    def gamma(self) -> float:
        return 0.5 / self.width**2


@dataclass(frozen=True)
class TrainingLimits:
    max_iter: int = 3000
    tol: float = 1e-3
    prune_threshold: float = 1e9
    init_alpha: float = 1e-6
    init_beta_scale: float = 100.0
    jitter: float = 1e-10
    evidence_patience: int = 50

    def __post_init__(self) -> None:
        if self.max_iter < 1 or self.tol <= 0:
            raise ConfigError("max_iter must be >= 1 and tol positive")
        if self.prune_threshold <= self.init_alpha:
            raise ConfigError("prune_threshold must exceed init_alpha")


@dataclass(frozen=True, eq=False)
class Scaler:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, values: np.ndarray) -> "Scaler":
        mean = values.mean(axis=0)
        scale = values.std(axis=0)
        return cls(np.asarray(mean, dtype=float),
                   np.where(scale > 0, scale, 1.0).astype(float))

    def transform(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean) / self.scale

    def inverse(self, values: np.ndarray) -> np.ndarray:
        return values * self.scale + self.mean

    def as_dict(self) -> dict:
        return {"mean": np.atleast_1d(self.mean).tolist(),
                "scale": np.atleast_1d(self.scale).tolist()}


# ── Model ──────────────────────────────────────────────────────────────
@dataclass(frozen=True, eq=False)
class RVRModel:
    relevance_vectors: np.ndarray  # (n_rv, d), standardized
    has_offset: bool
    posterior_mean: np.ndarray
    posterior_cov: np.ndarray
    noise_precision: float
    alphas: np.ndarray
    kernel: KernelConfig
    input_scaler: Scaler
    output_scaler: Scaler
    relevance_indices: tuple[int, ...] = ()
    n_iter: int = 0
    converged: bool = False
    log_evidence: float = float("nan")

    @property
    def n_rv(self) -> int:
        return int(self.relevance_vectors.shape[0])

    @property
    def n_inputs(self) -> int:
        return int(self.input_scaler.mean.size)

    def footprint(self) -> dict[str, int]:
        m = self.posterior_mean.size
        return {
            "n_relevance_vectors": self.n_rv,
            "input_dim": self.n_inputs,
            "offset": int(self.has_offset),
            "sigma_entries": m * m,
            "stored_floats": self.n_rv * self.n_inputs + m + m * m + 1 + 2 * self.n_inputs + 2,
        }

    def as_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "kernel": {"kind": self.kernel.kind, "width": self.kernel.width,
                       "include_offset": self.kernel.include_offset},
            "has_offset": self.has_offset,
            "input_scaler": self.input_scaler.as_dict(),
            "output_scaler": self.output_scaler.as_dict(),
            "relevance_vectors": self.relevance_vectors.tolist(),
            "relevance_indices": list(self.relevance_indices),
            "mu": self.posterior_mean.tolist(),
            "sigma": self.posterior_cov.ravel().tolist(),
            "alphas": self.alphas.tolist(),
            "beta": self.noise_precision,
            "n_iter": self.n_iter,
            "converged": self.converged,
            "log_evidence": self.log_evidence,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "RVRModel":
        if payload.get("format") != MODEL_FORMAT or payload.get("version") != MODEL_VERSION:
            raise InputError(f"not a {MODEL_FORMAT} v{MODEL_VERSION} model file")
        mu = np.asarray(payload["mu"], dtype=float)
        m = mu.size
        d = len(payload["input_scaler"]["mean"])
        return cls(
            relevance_vectors=np.asarray(payload["relevance_vectors"], dtype=float).reshape(-1, d),
            has_offset=bool(payload["has_offset"]),
            posterior_mean=mu,
            posterior_cov=np.asarray(payload["sigma"], dtype=float).reshape(m, m),
            noise_precision=float(payload["beta"]),
            alphas=np.asarray(payload["alphas"], dtype=float),
            kernel=KernelConfig(**payload["kernel"]),
            input_scaler=Scaler(np.asarray(payload["input_scaler"]["mean"], dtype=float),
                                np.asarray(payload["input_scaler"]["scale"], dtype=float)),
            output_scaler=Scaler(np.asarray(payload["output_scaler"]["mean"], dtype=float),
                                 np.asarray(payload["output_scaler"]["scale"], dtype=float)),
            relevance_indices=tuple(payload.get("relevance_indices", ())),
            n_iter=int(payload.get("n_iter", 0)),
            converged=bool(payload.get("converged", False)),
            log_evidence=float(payload.get("log_evidence", float("nan"))),
        )

    def save(self, path: Path) -> None:
        path.write_text(json.dumps(self.as_dict(), indent=2), encoding="utf-8")

    @classmethod
    def load(cls, path: Path) -> "RVRModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True, eq=False)
class Prediction:
    mean: np.ndarray
    variance: np.ndarray
    lower: np.ndarray = field(init=False)
    upper: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        sigma3 = 3.0 * np.sqrt(self.variance)
        object.__setattr__(self, "lower", self.mean - sigma3)
        object.__setattr__(self, "upper", self.mean + sigma3)

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.variance)

    @property
    def three_sigma(self) -> np.ndarray:
        return 3.0 * self.std


# ── Training ───────────────────────────────────────────────────────────
def _as_rows(values) -> np.ndarray:
    array = np.asarray(values, dtype=float)
    return array[:, None] if array.ndim == 1 else array


def build_design_matrix(inputs, kernel: KernelConfig, centers=None) -> np.ndarray:
    x = _as_rows(inputs)
    if x.shape[0] == 0:
        raise InputError("design matrix needs at least one input")
    c = x if centers is None else _as_rows(centers)
    phi = rbf_kernel(x, c, gamma=kernel.gamma) if c.shape[0] else np.empty((x.shape[0], 0))
    if kernel.include_offset:
        phi = np.hstack([np.ones((x.shape[0], 1)), phi])
    return phi


def _posterior(phi: np.ndarray, alpha: np.ndarray, beta: float, y: np.ndarray,
               jitter: float) -> tuple[np.ndarray, np.ndarray, float]:
    """Σ, μ and log|H| for H = βΦᵀΦ + diag(α)."""
    hessian = beta * phi.T @ phi + np.diag(alpha)
    try:
        factor = scipy.linalg.cho_factor(hessian, lower=True)
    except np.linalg.LinAlgError:
        log.debug("Hessian not positive definite, retrying with jitter %.1e", jitter)
        try:
            hessian = hessian + jitter * np.eye(alpha.size)
            factor = scipy.linalg.cho_factor(hessian, lower=True)
        except np.linalg.LinAlgError as exc:
            raise NumericError(
                f"posterior Hessian not positive definite after jitter {jitter:.1e} "
                f"(size {alpha.size}, min alpha {alpha.min():.3e}, beta {beta:.3e})"
            ) from exc
    sigma = scipy.linalg.cho_solve(factor, np.eye(alpha.size))
    sigma = 0.5 * (sigma + sigma.T)
    mu = beta * sigma @ (phi.T @ y)
    log_det = 2.0 * float(np.sum(np.log(np.diag(factor[0]))))
    return sigma, mu, log_det


def _log_evidence(n: int, beta: float, residual: float, mu: np.ndarray, alpha: np.ndarray,
                  log_det: float) -> float:
    return 0.5 * (n * np.log(beta) - beta * residual - float(mu @ (alpha * mu))
                  - log_det + float(np.sum(np.log(alpha))) - n * np.log(2 * np.pi))


def train(inputs, targets, kernel: KernelConfig | None = None,
          limits: TrainingLimits | None = None) -> RVRModel:
    kernel = kernel or KernelConfig()
    limits = limits or TrainingLimits()
    x = np.asarray(inputs, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    y_raw = np.asarray(targets, dtype=float).ravel()
    n = x.shape[0]
    if n < MIN_TRAIN:
        raise InputError(f"need at least {MIN_TRAIN} training points, got {n}")
    if y_raw.size != n:
        raise InputError(f"{n} inputs but {y_raw.size} targets")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y_raw))):
        raise InputError("training data contains non-finite values")

    x_scaler, y_scaler = Scaler.fit(x), Scaler.fit(y_raw)
    xs, y = x_scaler.transform(x), y_scaler.transform(y_raw)

    phi = build_design_matrix(xs, kernel)
    # basis j maps to training row j (offset is -1)
    basis = np.arange(phi.shape[1]) - (1 if kernel.include_offset else 0)
    alpha = np.full(basis.size, limits.init_alpha)
    variance = float(y.var())
    beta = limits.init_beta_scale / (variance if variance > 0 else 1.0)

    previous_evidence = -np.inf
    dips = streak = 0
    converged = False
    iteration = 0
    for iteration in range(1, limits.max_iter + 1):
        sigma, mu, log_det = _posterior(phi, alpha, beta, y, limits.jitter)
        residual = float(np.sum((y - phi @ mu) ** 2))

        evidence = _log_evidence(n, beta, residual, mu, alpha, log_det)
        if evidence < previous_evidence - 1e-9 * abs(previous_evidence):
            dips += 1
            streak += 1
            if streak > limits.evidence_patience:
                raise NumericError(f"marginal likelihood fell for {streak} consecutive "
                                   f"iterations (now {evidence:.6g})")
        else:
            streak = 0
        previous_evidence = evidence

        gamma = np.clip(1.0 - alpha * np.diag(sigma), 1e-12, 1.0)
        new_alpha = gamma / np.maximum(mu**2, 1e-300)
        beta = max(n - float(gamma.sum()), 1e-12) / max(residual, 1e-12 * n)

        keep = new_alpha < limits.prune_threshold
        if not keep.any():
            # the offset alone survives, pinned at the prune threshold
            keep = basis == -1
            if not keep.any():
                raise DegenerateModelError("every basis function was pruned, offset included")
            new_alpha = np.minimum(new_alpha, limits.prune_threshold)
        delta = float(np.max(np.abs(np.log(new_alpha[keep]) - np.log(alpha[keep]))))
        pruned = not keep.all()
        phi, alpha, basis = phi[:, keep], new_alpha[keep], basis[keep]

        if delta < limits.tol and not pruned:
            converged = True
            break

    if not converged:
        log.warning("RVR stopped after %d iterations without converging", limits.max_iter)
    if dips:
        log.warning("marginal likelihood dipped on %d iterations", dips)

    sigma, mu, log_det = _posterior(phi, alpha, beta, y, limits.jitter)
    residual = float(np.sum((y - phi @ mu) ** 2))
    rows = basis[basis >= 0]
    model = RVRModel(
        relevance_vectors=xs[rows],
        has_offset=bool(np.any(basis == -1)),
        posterior_mean=mu,
        posterior_cov=sigma,
        noise_precision=float(beta),
        alphas=alpha,
        kernel=kernel,
        input_scaler=x_scaler,
        output_scaler=y_scaler,
        relevance_indices=tuple(int(r) for r in rows),
        n_iter=iteration,
        converged=converged,
        log_evidence=_log_evidence(n, beta, residual, mu, alpha, log_det),
    )
    log.debug("RVR: %d relevance vectors after %d iterations (beta %.4g)",
              model.n_rv, iteration, beta)
    return model


def design_for(model: RVRModel, inputs) -> np.ndarray:
    """φ̃(x) rows for new inputs, in the retained-basis order of ``model``."""
    x = np.asarray(inputs, dtype=float)
    if x.ndim == 1:
        x = x[None, :] if x.size == model.n_inputs else x[:, None]
    if x.shape[1] != model.n_inputs:
        raise InputError(f"input dimension {x.shape[1]} does not match model "
                         f"dimension {model.n_inputs}")
    xs = model.input_scaler.transform(x)
    kernel = KernelConfig(model.kernel.width, model.has_offset, model.kernel.kind)
    return build_design_matrix(xs, kernel, centers=model.relevance_vectors)


def predict(model: RVRModel, inputs) -> Prediction:
    phi = design_for(model, inputs)
    mean = phi @ model.posterior_mean
    variance = 1.0 / model.noise_precision + np.einsum("ij,jk,ik->i", phi,
                                                       model.posterior_cov, phi)
    scale = float(np.atleast_1d(model.output_scaler.scale)[0])
    return Prediction(model.output_scaler.inverse(mean), variance * scale**2)
