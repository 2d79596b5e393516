"""Class-separability scores and the supervised acceptance criteria.

A within-class scatter S_w and a between-class scatter S_b summarize how
well a set of feature columns separates the classes. The feature score is
s(f) = S_b(f) / S_w(f) and the subset score is F(U) = tr(S_b(U)) / tr(S_w(U)).

Every construction used here is additive over columns once the columns
are standardized, so both traces are sums of per-column contributions.
`column_scatter` computes those contributions directly; `scatter` builds
the full matrices by their definitions and is kept for inspection and as
a cross-check.

References:
    - https://doi.org/10.1109/34.990133 (mean/variance scatter)
    - https://doi.org/10.1109/TPAMI.2015.2424265 (label-based scatter)
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
from scipy import stats
from scipy.spatial.distance import cdist

try:
    from .constants import DEFAULT_ALPHA, DEFAULT_EPSILON, LARGE_SCORE, ZERO_SCATTER
    from .utils import standardize
except ImportError:
    from constants import DEFAULT_ALPHA, DEFAULT_EPSILON, LARGE_SCORE, ZERO_SCATTER
    from utils import standardize

logger = logging.getLogger(__name__)


class ScatterError(ValueError):
    ...


class ScatterVariant(str, Enum):
    MEAN_VARIANCE = "mean_variance"
    KERNEL = "kernel"
    LABEL = "label"
    LABEL_LAPLACIAN = "label_laplacian"


class TSign(str, Enum):
    EXCEEDS = "exceeds"  # one-sided test of s(f) > mean score
    LITERAL = "literal"  # (mean - s(f)) / (sd / sqrt(|U|)) > alpha


class TReference(str, Enum):
    HELD = "held"  # scores of the features already selected
    INCOMING = "incoming"  # scores of the group under evaluation


class ClassStats(NamedTuple):
    label: int
    prior: float
    mean: np.ndarray
    covariance: np.ndarray
    count: int


@dataclass(frozen=True, eq=False)
class ScatterPair:
    variant: ScatterVariant
    S_w: np.ndarray | float
    S_b: np.ndarray | float
    class_stats: tuple[ClassStats, ...]
    pooled_mean: np.ndarray

    @property
    def n_classes(self) -> int:
        return len(self.class_stats)


@dataclass(frozen=True)
class SupervisedConfig:
    epsilon: float = DEFAULT_EPSILON
    alpha: float = DEFAULT_ALPHA
    scatter_variant: ScatterVariant = ScatterVariant.MEAN_VARIANCE
    t_sign: TSign = TSign.EXCEEDS
    t_reference: TReference = TReference.HELD

    def __post_init__(self) -> None:
        object.__setattr__(self, "scatter_variant", ScatterVariant(self.scatter_variant))
        object.__setattr__(self, "t_sign", TSign(self.t_sign))
        object.__setattr__(self, "t_reference", TReference(self.t_reference))
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be positive. Got {self.epsilon}.")
        if not 0 < self.alpha < 1:
            raise ValueError(f"alpha must lie in (0, 1). Got {self.alpha}.")

    def to_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "alpha": self.alpha,
            "scatter_variant": self.scatter_variant.value,
            "t_sign": self.t_sign.value,
            "t_reference": self.t_reference.value,
        }

    @classmethod
    def from_dict(cls, data: dict) -> Self:
        return cls(**data)


class Decision(NamedTuple):
    accepted: bool
    statistic: float
    reason: str


def _columns(U: np.ndarray, n: int) -> np.ndarray:
    U = np.asarray(U, dtype=float)
    if U.ndim == 1:
        U = U[:, None]
    if U.size == 0:
        return np.zeros((n, 0))
    if U.shape[0] != n:
        raise ScatterError(f"Features have {U.shape[0]} instances, labels have {n}.")
    return U


def _encode(labels: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    classes, codes, counts = np.unique(
        np.asarray(labels), return_inverse=True, return_counts=True
    )
    return classes, codes, counts


def class_statistics(U: np.ndarray, labels: np.ndarray) -> tuple[ClassStats, ...]:
    """Per-class prior, mean vector, (population) covariance and count."""
    classes, codes, counts = _encode(labels)
    U = _columns(U, codes.size)
    out = []
    for j, (label, count) in enumerate(zip(classes, counts)):
        rows = U[codes == j]
        centered = rows - rows.mean(axis=0)
        cov = centered.T @ centered / count
        out.append(ClassStats(int(label), count / codes.size, rows.mean(axis=0), cov, int(count)))
    return tuple(out)


def _label_matrices(labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    _, codes, counts = _encode(labels)
    n = codes.size
    same = codes[:, None] == codes[None, :]
    n_c = counts[codes][:, None]
    S_w = np.where(same, 1 / n - 1 / n_c, 1 / n)
    S_b = np.where(same, 1 / n_c, 0.0)
    return S_w, S_b


def _laplacian(A: np.ndarray) -> np.ndarray:
    return np.diag(A.sum(axis=1)) - A


def scatter(U: np.ndarray, labels: np.ndarray, variant: ScatterVariant) -> ScatterPair:
    """Builds the scatter pair of the columns of U by definition.

    mean_variance: S_w = sum_j pi_j sigma_j, S_b = sum_j (mu_j - M_o)(mu_j - M_o)^T.
    kernel: scalar within/between averages of pairwise squared distances.
    label: n x n matrices from the class memberships alone.
    label_laplacian: graph Laplacians of the label affinities, within from
    the same-class affinity 1/n_c and between from the label S_w matrix.
    """
    variant = ScatterVariant(variant)
    _, codes, counts = _encode(labels)
    U = _columns(U, codes.size)
    class_stats = class_statistics(U, labels)
    pooled = sum(s.prior * s.mean for s in class_stats)
    c = len(class_stats)
    match variant:
        case ScatterVariant.MEAN_VARIANCE:
            S_w = sum(s.prior * s.covariance for s in class_stats)
            S_b = sum(np.outer(s.mean - pooled, s.mean - pooled) for s in class_stats)
        case ScatterVariant.KERNEL:
            if c < 2:
                raise ScatterError("The kernel scatter needs at least two classes.")
            groups = [U[codes == j] for j in range(c)]
            S_w = sum(
                cdist(g, g, "sqeuclidean").sum() / len(g) ** 2 for g in groups
            ) / c
            S_b = (
                2
                / (c * (c - 1))
                * sum(
                    cdist(gi, gj, "sqeuclidean").sum() / (len(gi) * len(gj))
                    for i, gi in enumerate(groups)
                    for j, gj in enumerate(groups)
                    if i != j
                )
            )
        case ScatterVariant.LABEL:
            S_w, S_b = _label_matrices(labels)
        case ScatterVariant.LABEL_LAPLACIAN:
            A_b, A_w = _label_matrices(labels)
            S_w, S_b = _laplacian(A_w), _laplacian(A_b)
    return ScatterPair(variant, S_w, S_b, class_stats, pooled)


def column_scatter(
    Z: np.ndarray, labels: np.ndarray, variant: ScatterVariant
) -> tuple[np.ndarray, np.ndarray]:
    """Per-column contributions (b, w) to tr(S_b) and tr(S_w)."""
    variant = ScatterVariant(variant)
    _, codes, counts = _encode(labels)
    Z = _columns(Z, codes.size)
    n, c = codes.size, counts.size
    onehot = np.eye(c)[codes]
    sums = onehot.T @ Z  # c x k class sums
    means = sums / counts[:, None]
    pooled = (counts / n) @ means
    within_var = np.maximum((onehot.T @ Z**2) / counts[:, None] - means**2, 0.0)
    match variant:
        case ScatterVariant.MEAN_VARIANCE:
            w = (counts / n) @ within_var
            b = np.sum((means - pooled) ** 2, axis=0)
        case ScatterVariant.KERNEL:
            if c < 2:
                raise ScatterError("The kernel scatter needs at least two classes.")
            w = 2 * within_var.sum(axis=0) / c
            gaps = (means[:, None, :] - means[None, :, :]) ** 2
            spread = within_var[:, None, :] + within_var[None, :, :] + gaps
            off = ~np.eye(c, dtype=bool)
            b = 2 / (c * (c - 1)) * spread[off].sum(axis=0)
        case ScatterVariant.LABEL:
            b = np.sum(sums**2 / counts[:, None], axis=0)
            w = Z.sum(axis=0) ** 2 / n - b
        case ScatterVariant.LABEL_LAPLACIAN:
            between = np.sum(sums**2 / counts[:, None], axis=0)
            w = np.sum(Z**2, axis=0) - between
            b = between - Z.sum(axis=0) ** 2 / n
    return b, w


def score_ratio(tr_b: float, tr_w: float) -> float:
    """tr_b / tr_w, with LARGE_SCORE standing in when the within-class
    scatter vanishes but the between-class scatter does not."""
    if abs(tr_w) <= ZERO_SCATTER:
        return LARGE_SCORE if tr_b > ZERO_SCATTER else 0.0
    return float(tr_b / tr_w)


def feature_score(f: np.ndarray, labels: np.ndarray, variant: ScatterVariant) -> float:
    """s(f) on the standardized column f."""
    b, w = column_scatter(standardize(np.asarray(f, dtype=float))[:, None], labels, variant)
    return score_ratio(b[0], w[0])


def subset_score(U: np.ndarray, labels: np.ndarray, variant: ScatterVariant) -> float:
    """F(U) = tr(S_b(U)) / tr(S_w(U)) on the standardized columns of U."""
    U = np.asarray(U, dtype=float)
    if U.ndim == 1:
        U = U[:, None]
    if U.shape[1] == 0:
        raise ValueError("F(U) needs at least one column.")
    b, w = column_scatter(standardize(U), labels, variant)
    return score_ratio(b.sum(), w.sum())


def _subset_score_or_zero(U: np.ndarray, labels, variant) -> float:
    U = np.asarray(U, dtype=float)
    if U.size == 0:
        return 0.0
    return subset_score(U, labels, variant)


def criterion1(
    U: np.ndarray,
    f: np.ndarray,
    labels: np.ndarray,
    epsilon: float,
    variant: ScatterVariant = ScatterVariant.MEAN_VARIANCE,
) -> Decision:
    """Accepts f when F(U + f) - F(U) > epsilon, with F(empty) = 0."""
    n = len(labels)
    U = _columns(U, n)
    before = _subset_score_or_zero(U, labels, variant)
    after = subset_score(np.column_stack([U, f]), labels, variant)
    gain = after - before
    return Decision(gain > epsilon, gain, f"gain={gain:.6g}")


def t_test(
    history: list[float] | np.ndarray,
    score: float,
    alpha: float,
    t_sign: TSign = TSign.EXCEEDS,
) -> Decision:
    """Significance of a candidate score against the scores already held.
    Sentinel scores are left out of the running mean and deviation."""
    kept = np.array([s for s in history if s < LARGE_SCORE], dtype=float)
    if kept.size < 2 or np.std(kept, ddof=1) <= 0:
        return Decision(False, float("nan"), "insufficient history")
    mu, sd, k = kept.mean(), np.std(kept, ddof=1), kept.size
    if TSign(t_sign) is TSign.LITERAL:
        t = (mu - score) / (sd / np.sqrt(k))
        return Decision(bool(t > alpha), float(t), f"t={t:.4g}")
    t = (score - mu) / (sd / np.sqrt(k))
    p = stats.t.sf(t, df=k - 1)
    return Decision(bool(p < alpha), float(t), f"t={t:.4g}, p={p:.4g}")


def criterion2(
    U: np.ndarray,
    f: np.ndarray,
    labels: np.ndarray,
    alpha: float,
    variant: ScatterVariant = ScatterVariant.MEAN_VARIANCE,
    t_sign: TSign = TSign.EXCEEDS,
) -> Decision:
    """Accepts f when s(f) is significantly above the mean score of U
    (one-sided t-test with |U| - 1 degrees of freedom)."""
    U = _columns(U, len(labels))
    history = [feature_score(u, labels, variant) for u in U.T]
    return t_test(history, feature_score(f, labels, variant), alpha, t_sign)


def supervised_select(
    incoming: np.ndarray,
    U: np.ndarray,
    labels: np.ndarray,
    cfg: SupervisedConfig = SupervisedConfig(),
) -> list[int]:
    """Greedy pass over the incoming columns sorted by descending s(f),
    ties broken by position. A feature passing criterion 1 or criterion 2
    joins the set before the next one is evaluated.

    Criterion 2 compares s(f) against the scores of the held set, grown as
    features are accepted, or with TReference.INCOMING against the fixed
    scores of every incoming column.

    Returns the accepted positions into `incoming`, in acceptance order.
    """
    n = len(labels)
    incoming = _columns(incoming, n)
    U = _columns(U, n)
    if incoming.shape[1] == 0:
        return []
    variant = cfg.scatter_variant
    b_new, w_new = column_scatter(standardize(incoming), labels, variant)
    b_cur, w_cur = column_scatter(standardize(U), labels, variant)
    scores = [score_ratio(b, w) for b, w in zip(b_new, w_new)]
    if cfg.t_reference is TReference.INCOMING:
        history = list(scores)
    else:
        history = [score_ratio(b, w) for b, w in zip(b_cur, w_cur)]
    tr_b, tr_w = float(b_cur.sum()), float(w_cur.sum())
    current = score_ratio(tr_b, tr_w) if U.shape[1] else 0.0

    accepted = []
    for i in sorted(range(len(scores)), key=lambda i: (-scores[i], i)):
        proposed = score_ratio(tr_b + b_new[i], tr_w + w_new[i])
        gain = proposed - current
        decision = (
            Decision(True, gain, f"gain={gain:.6g}")
            if gain > cfg.epsilon
            else t_test(history, scores[i], cfg.alpha, cfg.t_sign)
        )
        logger.debug(
            "Candidate %d: s=%.4g, %s -> %s",
            i,
            scores[i],
            decision.reason,
            "accept" if decision.accepted else "reject",
        )
        if decision.accepted:
            accepted.append(i)
            tr_b, tr_w = tr_b + b_new[i], tr_w + w_new[i]
            current = proposed
            if cfg.t_reference is TReference.HELD:
                history.append(scores[i])
    return accepted
