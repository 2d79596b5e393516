"""Wilcoxon signed-rank test and the redundancy filter built on it.

Two features are treated as paired measurements over the same instances.
A feature is redundant with an already selected one when the test cannot
tell them apart (p > alpha).

References:
    - https://en.wikipedia.org/wiki/Wilcoxon_signed-rank_test
"""

import logging
from typing import NamedTuple

import numpy as np
from scipy import stats

try:
    from .constants import EXACT_MAX_PAIRS, MIN_PAIRED_LENGTH
    from .utils import check_finite
except ImportError:
    from constants import EXACT_MAX_PAIRS, MIN_PAIRED_LENGTH
    from utils import check_finite

logger = logging.getLogger(__name__)

# Slack when comparing enumerated statistics against the observed one,
# so midranks summing to the same value count as ties.
_ATOL = 1e-9


class WilcoxonResult(NamedTuple):
    statistic: float
    z: float
    p_value: float
    n_effective: int
    degenerate: bool = False


def sign_matrix(n: int) -> np.ndarray:
    """All 2**n assignments of +1/-1 to n positions, one per row.

    Examples:
    >>> sign_matrix(2).tolist()
    [[-1, -1], [1, -1], [-1, 1], [1, 1]]
    """
    codes = np.arange(2**n)[:, None] >> np.arange(n)
    return (codes & 1) * 2 - 1


def exact_p_value(ranks: np.ndarray, statistic: float) -> float:
    """Two-sided p-value of W under the permutation null, enumerating every
    sign assignment of the (mid)ranks."""
    null = sign_matrix(ranks.size) @ ranks
    return float(np.mean(np.abs(null) >= abs(statistic) - _ATOL))


def wilcoxon_test(x: np.ndarray, y: np.ndarray) -> WilcoxonResult:
    """Signed-rank test of x against y.

    Zero differences are dropped and tied absolute differences share their
    midrank. W = sum(sign(d_i) * R_i), z = W / sqrt(N(N+1)(2N+1)/6). The
    p-value is exact for N <= EXACT_MAX_PAIRS and from the normal
    approximation of z (no continuity correction) above that.
    """
    x = check_finite(x, "x")
    y = check_finite(y, "y")
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("Paired samples must be equal-length vectors.")
    d = x - y
    d = d[d != 0]
    n = d.size
    if n == 0:
        return WilcoxonResult(0.0, 0.0, 1.0, 0, x.size < MIN_PAIRED_LENGTH)
    ranks = stats.rankdata(np.abs(d))
    w = float(np.sum(np.sign(d) * ranks))
    z = float(w / np.sqrt(n * (n + 1) * (2 * n + 1) / 6))
    if x.size < MIN_PAIRED_LENGTH:
        return WilcoxonResult(w, z, 1.0, n, True)
    if n <= EXACT_MAX_PAIRS:
        p = exact_p_value(ranks, w)
    else:
        p = float(2 * stats.norm.sf(abs(z)))
    return WilcoxonResult(w, z, min(p, 1.0), n)


def wilcoxon_filter(selected: np.ndarray, f: np.ndarray, alpha: float) -> bool:
    """Returns True if f should be kept: f must differ significantly from
    every selected feature. The first test with p > alpha discards it."""
    selected = np.asarray(selected, dtype=float)
    f = np.asarray(f, dtype=float)
    if selected.ndim == 1:
        selected = selected[:, None]
    if selected.shape[0] != f.shape[0]:
        raise ValueError(
            f"Feature has {f.shape[0]} instances, selected set has {selected.shape[0]}."
        )
    for j, x in enumerate(selected.T):
        result = wilcoxon_test(x, f)
        if result.p_value > alpha:
            logger.debug(
                "Discarded: indistinguishable from column %d (p=%.4g).",
                j,
                result.p_value,
            )
            return False
    return True
