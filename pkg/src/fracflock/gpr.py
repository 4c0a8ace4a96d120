"""Gaussian-process regression with a Matern-5/2 ARD covariance.

Models the scalar loss-versus-order map for the Bayesian optimization
loop: noisy-observation predictive mean/variance in closed form, and
maximum-marginal-likelihood hyperparameters found by a derivative-free
multi-start coordinate search in log space.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "GpHyperparams",
    "GpModel",
    "FactorizationError",
    "matern52_ard",
    "fit",
    "predict",
    "log_marginal_likelihood",
]

NOISE_FLOOR = 1e-10
JITTERS = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)


class FactorizationError(RuntimeError):
    """Gram matrix stayed non-positive-definite after jitter escalation."""


@dataclass(frozen=True)
class GpHyperparams:
    signal_variance: float
    lengthscales: tuple[float, ...]
    noise_variance: float

    def __post_init__(self) -> None:
        if self.signal_variance <= 0.0:
            raise ValueError("signal variance must be positive")
        if any(l <= 0.0 for l in self.lengthscales):
            raise ValueError("lengthscales must be positive")
        if self.noise_variance < 0.0:
            raise ValueError("noise variance must be nonnegative")
        if self.noise_variance < NOISE_FLOOR:
            object.__setattr__(self, "noise_variance", NOISE_FLOOR)


def _as_2d(x) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        return arr.reshape(1, 1)
    if arr.ndim == 1:
        return arr.reshape(-1, 1)
    return arr


def matern52_ard(x, x_other, hyp: GpHyperparams) -> float:
    """Matern-5/2 covariance with per-dimension lengthscales:

        k(x, x') = sv * (1 + h + h^2/3) * exp(-h),
        h = sqrt( sum_i 5 (x_i - x_i')^2 / theta_i^2 ).
    """
    a = np.asarray(x, dtype=float).reshape(-1)
    b = np.asarray(x_other, dtype=float).reshape(-1)
    theta = np.asarray(hyp.lengthscales, dtype=float)
    h = math.sqrt(float(np.sum(5.0 * (a - b) ** 2 / theta**2)))
    return hyp.signal_variance * (1.0 + h + h * h / 3.0) * math.exp(-h)


def _gram(xa: np.ndarray, xb: np.ndarray, hyp: GpHyperparams) -> np.ndarray:
    theta = np.asarray(hyp.lengthscales, dtype=float)
    diff = xa[:, None, :] - xb[None, :, :]
    h = np.sqrt(np.sum(5.0 * diff**2 / theta**2, axis=2))
    return hyp.signal_variance * (1.0 + h + h * h / 3.0) * np.exp(-h)


def _merge_duplicates(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Average outputs of inputs that coincide to within 1e-12."""
    order = np.lexsort(x.T[::-1])
    xs, ys = x[order], y[order]
    keep_x, keep_y = [xs[0]], [[ys[0]]]
    for xi, yi in zip(xs[1:], ys[1:]):
        if np.all(np.abs(xi - keep_x[-1]) <= 1e-12):
            keep_y[-1].append(yi)
        else:
            keep_x.append(xi)
            keep_y.append([yi])
    return np.array(keep_x), np.array([np.mean(v) for v in keep_y])


def _factorize(x: np.ndarray, hyp: GpHyperparams) -> tuple[np.ndarray, float]:
    gram = _gram(x, x, hyp)
    gram[np.diag_indices_from(gram)] += hyp.noise_variance
    for jitter in JITTERS:
        try:
            chol = np.linalg.cholesky(
                gram + jitter * np.eye(len(gram)) if jitter else gram
            )
            return chol, jitter
        except np.linalg.LinAlgError:
            continue
    raise FactorizationError(
        f"covariance not SPD after jitter up to {JITTERS[-1]:g} "
        f"(n={len(gram)}, hyp={hyp})"
    )


@dataclass
class GpModel:
    inputs: np.ndarray
    outputs: np.ndarray
    hyperparams: GpHyperparams
    prior_mean: float
    chol: np.ndarray
    weights: np.ndarray  # (K + sn^2 I)^{-1} (y - mean)
    jitter: float = 0.0

    @staticmethod
    def from_data(
        inputs, outputs, hyp: GpHyperparams, prior_mean: float | None = None
    ) -> "GpModel":
        x = _as_2d(inputs)
        y = np.asarray(outputs, dtype=float).reshape(-1)
        if x.shape[0] != y.shape[0]:
            raise ValueError("inputs and outputs disagree in length")
        x, y = _merge_duplicates(x, y)
        mean = float(np.mean(y)) if prior_mean is None else float(prior_mean)
        chol, jitter = _factorize(x, hyp)
        resid = y - mean
        weights = np.linalg.solve(chol.T, np.linalg.solve(chol, resid))
        return GpModel(x, y, hyp, mean, chol, weights, jitter)

    @property
    def incumbent(self) -> float:
        """Smallest observed output."""
        return float(self.outputs.min())

    def to_json(self) -> dict:
        return {
            "inputs": self.inputs.tolist(),
            "outputs": self.outputs.tolist(),
            "hyperparams": {
                "signal_variance": self.hyperparams.signal_variance,
                "lengthscales": list(self.hyperparams.lengthscales),
                "noise_variance": self.hyperparams.noise_variance,
            },
            "prior_mean": self.prior_mean,
        }

    def save(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)

    @staticmethod
    def from_json(payload: dict) -> "GpModel":
        hyp = GpHyperparams(
            signal_variance=payload["hyperparams"]["signal_variance"],
            lengthscales=tuple(payload["hyperparams"]["lengthscales"]),
            noise_variance=payload["hyperparams"]["noise_variance"],
        )
        return GpModel.from_data(
            payload["inputs"], payload["outputs"], hyp, payload["prior_mean"]
        )

    @staticmethod
    def load(path: str | Path) -> "GpModel":
        with open(path) as fh:
            return GpModel.from_json(json.load(fh))


def predict(model: GpModel, x_star) -> tuple[np.ndarray, np.ndarray]:
    """Predictive mean and standard deviation at the test inputs:

        m*  = m + k^T (K + sn^2 I)^{-1} (y - m)
        s*^2 = k(x*,x*) - k^T (K + sn^2 I)^{-1} k
    """
    xs = _as_2d(x_star)
    k_star = _gram(xs, model.inputs, model.hyperparams)
    mean = model.prior_mean + k_star @ model.weights
    half = np.linalg.solve(model.chol, k_star.T)
    var = model.hyperparams.signal_variance - np.einsum("ij,ij->j", half, half)
    std = np.sqrt(np.maximum(var, 0.0))
    if np.isscalar(x_star) or np.asarray(x_star).ndim == 0:
        return float(mean[0]), float(std[0])
    return mean, std


def log_marginal_likelihood(
    inputs, outputs, hyp: GpHyperparams, prior_mean: float | None = None
) -> float:
    """Gaussian log evidence of the (centered) outputs; -inf when the Gram
    matrix cannot be factorized."""
    x = _as_2d(inputs)
    y = np.asarray(outputs, dtype=float).reshape(-1)
    mean = float(np.mean(y)) if prior_mean is None else float(prior_mean)
    try:
        chol, _ = _factorize(x, hyp)
    except FactorizationError:
        return -np.inf
    resid = y - mean
    half = np.linalg.solve(chol, resid)
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
    n = len(y)
    return float(-0.5 * half @ half - 0.5 * logdet - 0.5 * n * math.log(2.0 * math.pi))


_START_SCALES = (0.08, 0.3, 1.0, 3.0, 10.0)
_ROUND_WIDTHS = (2.0, 0.7, 0.25)
_GRID_POINTS = 9


def fit(inputs, outputs, noise_mode: str = "learn") -> GpModel:
    """Maximum-marginal-likelihood hyperparameters by multi-start coordinate
    refinement in log space (5 starts, 3 shrinking rounds per start).

    ``noise_mode`` is "learn" (noise searched with the floor applied) or
    "fixed" (noise pinned at the floor; appropriate for deterministic data).
    """
    if noise_mode not in ("learn", "fixed"):
        raise ValueError(f"unknown noise_mode {noise_mode!r}")
    x = _as_2d(inputs)
    y = np.asarray(outputs, dtype=float).reshape(-1)
    if x.shape[0] != y.shape[0]:
        raise ValueError("inputs and outputs disagree in length")
    x, y = _merge_duplicates(x, y)
    if x.shape[0] < 2:
        raise ValueError("need at least 2 distinct training pairs")
    d = x.shape[1]

    span = np.maximum(x.max(axis=0) - x.min(axis=0), 1e-3)
    var_y = max(float(np.var(y)), 1e-12)
    base_log = [math.log(var_y)] + [math.log(s / 3.0) for s in span]
    learn_noise = noise_mode == "learn"
    if learn_noise:
        base_log.append(math.log(max(1e-6 * var_y, NOISE_FLOOR)))

    def unpack(p: list[float]) -> GpHyperparams:
        sv = math.exp(p[0])
        ls = tuple(math.exp(v) for v in p[1 : 1 + d])
        nv = math.exp(p[1 + d]) if learn_noise else NOISE_FLOOR
        return GpHyperparams(sv, ls, max(nv, NOISE_FLOOR))

    def objective(p: list[float]) -> float:
        return log_marginal_likelihood(x, y, unpack(p))

    best_p, best_val = None, -np.inf
    for scale in _START_SCALES:
        p = list(base_log)
        for j in range(d):
            p[1 + j] += math.log(scale)
        value = objective(p)
        for width in _ROUND_WIDTHS:
            for coord in range(len(p)):
                grid = p[coord] + np.linspace(-width, width, _GRID_POINTS)
                for candidate in grid:
                    trial = list(p)
                    trial[coord] = float(candidate)
                    trial_val = objective(trial)
                    if trial_val > value:
                        p, value = trial, trial_val
        if value > best_val:
            best_p, best_val = p, value
    if best_p is None or not np.isfinite(best_val):
        raise FactorizationError("marginal likelihood not finite for any start")
    return GpModel.from_data(x, y, unpack(best_p))
