"""Elasticnet-regularized linear models fitted by cyclic coordinate descent,
and the coefficient pruning rule of the global stage.

The objective is

    mean loss + lam * (l1_ratio * |beta|_1 + (1 - l1_ratio) * |beta|_2^2 / 2)

with an unpenalized intercept. Squared loss takes exact coordinate
minimizers. Logistic loss minimizes, per coordinate, the quadratic upper
bound given by the curvature bound 1/4 * mean(x_j^2), so every coordinate
step is a majorize-minimize step and the objective never increases.

References:
    - https://doi.org/10.18637/jss.v033.i01
    - https://doi.org/10.1111/j.1467-9868.2005.00503.x
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple

try:
    from typing import Self
except ImportError:  # Python < 3.11
    from typing_extensions import Self

import numpy as np
from scipy.special import expit

try:
    from .constants import DEFAULT_L1_RATIO, DEFAULT_LAMBDA, MAX_ITER, TOL
    from .utils import soft_threshold
except ImportError:
    from constants import DEFAULT_L1_RATIO, DEFAULT_LAMBDA, MAX_ITER, TOL
    from utils import soft_threshold

logger = logging.getLogger(__name__)


class Loss(str, Enum):
    LOGISTIC = "logistic"
    SQUARED = "squared"


@dataclass(frozen=True)
class ElasticNetConfig:
    lam: float = DEFAULT_LAMBDA
    l1_ratio: float = DEFAULT_L1_RATIO
    max_iter: int = MAX_ITER
    tol: float = TOL
    loss: Loss = Loss.LOGISTIC
    prune_threshold: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "loss", Loss(self.loss))
        if self.lam < 0:
            raise ValueError(f"lam must be nonnegative. Got {self.lam}.")
        if not 0 <= self.l1_ratio <= 1:
            raise ValueError(f"l1_ratio must lie in [0, 1]. Got {self.l1_ratio}.")
        if self.max_iter < 1 or self.tol <= 0:
            raise ValueError("Need max_iter >= 1 and tol > 0.")
        if self.prune_threshold is not None and self.prune_threshold < 0:
            raise ValueError(f"Pruning threshold must be nonnegative. Got {self.prune_threshold}.")

    @property
    def l2_ratio(self) -> float:
        return 1.0 - self.l1_ratio

    @property
    def threshold(self) -> float:
        """Pruning threshold, the penalty strength unless overridden."""
        return self.lam if self.prune_threshold is None else self.prune_threshold

    def to_dict(self) -> dict:
        return {
            "lam": self.lam,
            "l1_ratio": self.l1_ratio,
            "max_iter": self.max_iter,
            "tol": self.tol,
            "loss": self.loss.value,
            "prune_threshold": self.prune_threshold,
        }

    @classmethod
    def from_dict(cls, data: dict) -> Self:
        return cls(**data)


class _Fit(NamedTuple):
    beta: np.ndarray
    intercept: float
    converged: bool
    n_iter: int
    trace: list[float]


@dataclass(frozen=True, eq=False)
class FittedModel:
    coefficients: np.ndarray
    intercept: float
    converged: bool
    objective: float
    n_iter: int
    objective_trace: tuple[float, ...]
    coef_matrix: np.ndarray
    intercepts: np.ndarray

    @property
    def n_features(self) -> int:
        return self.coefficients.size


def penalty(beta: np.ndarray, cfg: ElasticNetConfig) -> float:
    return cfg.lam * (
        cfg.l1_ratio * np.abs(beta).sum() + cfg.l2_ratio * np.dot(beta, beta) / 2
    )


def mean_loss(eta: np.ndarray, y: np.ndarray, loss: Loss) -> float:
    """Mean loss at linear predictor eta. Logistic targets are +1/-1."""
    if loss is Loss.SQUARED:
        return float(np.mean((y - eta) ** 2) / 2)
    margin = -y * eta
    # log(1 + exp(m)) without overflow
    return float(np.mean(np.maximum(margin, 0) + np.log1p(np.exp(-np.abs(margin)))))


def objective(
    X: np.ndarray, y: np.ndarray, beta: np.ndarray, intercept: float, cfg: ElasticNetConfig
) -> float:
    return mean_loss(intercept + X @ beta, y, cfg.loss) + penalty(beta, cfg)


def _coordinate_descent(X: np.ndarray, y: np.ndarray, cfg: ElasticNetConfig) -> _Fit:
    n, k = X.shape
    l1, l2 = cfg.lam * cfg.l1_ratio, cfg.lam * cfg.l2_ratio
    squared = cfg.loss is Loss.SQUARED
    curvature = np.mean(X**2, axis=0)
    if not squared:
        curvature = curvature / 4
    beta = np.zeros(k)
    intercept = float(np.mean(y)) if squared else 0.0
    eta = np.full(n, intercept)
    trace = [objective(X, y, beta, intercept, cfg)]

    for sweep in range(1, cfg.max_iter + 1):
        biggest = 0.0
        for j in range(k):
            if squared:
                grad = -np.dot(X[:, j], y - eta) / n
            else:
                grad = -np.dot(X[:, j], y * expit(-y * eta)) / n
            denom = curvature[j] + l2
            new = 0.0 if denom == 0 else soft_threshold(curvature[j] * beta[j] - grad, l1) / denom
            delta = new - beta[j]
            if delta != 0:
                eta += delta * X[:, j]
                beta[j] = new
                biggest = max(biggest, abs(delta))
        if squared:
            shift = float(np.mean(y - eta))
        else:
            shift = float(4 * np.mean(y * expit(-y * eta)))
        intercept += shift
        eta += shift
        biggest = max(biggest, abs(shift))
        trace.append(objective(X, y, beta, intercept, cfg))
        if biggest < cfg.tol:
            return _Fit(beta, intercept, True, sweep, trace)
    return _Fit(beta, intercept, False, cfg.max_iter, trace)


def _aggregate(betas: np.ndarray) -> np.ndarray:
    """Per feature, the signed coefficient of largest magnitude."""
    rows = np.argmax(np.abs(betas), axis=0)
    return betas[rows, np.arange(betas.shape[1])]


def fit_elasticnet(
    X: np.ndarray, y: np.ndarray, cfg: ElasticNetConfig = ElasticNetConfig()
) -> FittedModel:
    """Fits the elasticnet model on the columns of X.

    With logistic loss y holds class codes: two classes are mapped to -1/+1
    (the larger code positive), more than two are fitted one-vs-rest and
    each feature keeps the coefficient of largest magnitude across the
    per-class models. With squared loss y is a real response.

    A fit that has not converged after cfg.max_iter sweeps is returned with
    converged=False and a warning is logged.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError(f"X has shape {X.shape} but y has {y.shape[0]} entries.")
    if cfg.loss is Loss.SQUARED:
        targets = [y.astype(float)]
    else:
        classes = np.unique(y)
        if classes.size < 2:
            raise ValueError("Logistic loss needs at least two classes.")
        positives = classes[1:] if classes.size == 2 else classes
        targets = [np.where(y == c, 1.0, -1.0) for c in positives]

    fits = [_coordinate_descent(X, t, cfg) for t in targets]
    coef_matrix = np.vstack([f.beta for f in fits]) if X.shape[1] else np.zeros((len(fits), 0))
    longest = max(len(f.trace) for f in fits)
    trace = np.sum(
        [np.pad(f.trace, (0, longest - len(f.trace)), mode="edge") for f in fits], axis=0
    )
    converged = all(f.converged for f in fits)
    if not converged:
        logger.warning(
            "Elasticnet did not converge within %d sweeps; pruning on the last iterate.",
            cfg.max_iter,
        )
    intercepts = np.array([f.intercept for f in fits])
    return FittedModel(
        coefficients=_aggregate(coef_matrix) if X.shape[1] else np.zeros(0),
        intercept=float(intercepts[0]),
        converged=converged,
        objective=float(trace[-1]),
        n_iter=max(f.n_iter for f in fits),
        objective_trace=tuple(map(float, trace)),
        coef_matrix=coef_matrix,
        intercepts=intercepts,
    )


def prune(model: FittedModel, threshold: float) -> tuple[int, ...]:
    """Positions of the features whose |beta| is at least the threshold.

    Examples:
    >>> m = FittedModel(np.array([0.3, 0.05, -0.2]), 0.0, True, 0.0, 1, (), np.zeros((1, 3)), np.zeros(1))
    >>> prune(m, 0.15)
    (0, 2)
    """
    return tuple(int(i) for i in np.flatnonzero(np.abs(model.coefficients) >= threshold))


if __name__ == "__main__":
    import doctest

    doctest.testmod()
