from itertools import product

import numpy as np
import pytest
from scipy import stats

from src.wilcoxon import exact_p_value, sign_matrix, wilcoxon_filter, wilcoxon_test


def permutation_p(d: np.ndarray) -> float:
    """Two-sided p by enumerating every sign flip of the ranked differences."""
    d = d[d != 0]
    ranks = stats.rankdata(np.abs(d))
    observed = abs(np.sum(np.sign(d) * ranks))
    hits = sum(
        abs(np.dot(signs, ranks)) >= observed - 1e-9
        for signs in product((-1, 1), repeat=d.size)
    )
    return hits / 2**d.size


def random_pair(seed: int) -> tuple[np.ndarray, np.ndarray, float, float]:
    """Paired samples of length 5 to 12 with a positive affine map that keeps
    their ranks. Odd seeds draw small integers, so zeros and ties occur and
    the map stays exact."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(5, 13))
    if seed % 2:
        x, y = rng.integers(0, 6, n).astype(float), rng.integers(0, 6, n).astype(float)
        return x, y, float(rng.integers(1, 6)), float(rng.integers(-10, 11))
    x = rng.standard_normal(n) + rng.normal(0, 1)
    return x, rng.standard_normal(n), rng.uniform(0.1, 10), rng.uniform(-5, 5)


def test_identical_samples() -> None:
    x = np.arange(8.0)
    result = wilcoxon_test(x, x)
    assert result.n_effective == 0
    assert result.statistic == 0
    assert result.p_value == 1.0


def test_hand_computed_statistic() -> None:
    x = np.array([1.0, 2.0, 3.0, 5.0, 5.0])
    y = np.array([0.0, 0.0, 0.0, 5.0, 5.0])
    result = wilcoxon_test(x, y)
    assert result.n_effective == 3
    assert result.statistic == 6
    assert result.z == pytest.approx(6 / np.sqrt(14), abs=1e-12)
    assert result.z == pytest.approx(1.6036, abs=1e-4)


def test_short_samples_are_degenerate() -> None:
    result = wilcoxon_test(np.array([1.0, 2.0, 3.0]), np.zeros(3))
    assert result.degenerate
    assert result.p_value == 1.0


def test_ties_share_midranks() -> None:
    d = np.array([1.0, -1.0, 2.0, 2.0, 3.0])
    result = wilcoxon_test(d, np.zeros(5))
    # |d| ranks: 1.5, 1.5, 3.5, 3.5, 5
    assert result.statistic == pytest.approx(1.5 - 1.5 + 3.5 + 3.5 + 5)


@pytest.mark.parametrize("seed", range(5))
def test_exact_p_matches_enumeration(seed: int) -> None:
    rng = np.random.default_rng(seed)
    x, y = rng.standard_normal(10), rng.standard_normal(10)
    assert wilcoxon_test(x, y).p_value == pytest.approx(permutation_p(x - y), abs=1e-9)


def test_random_pairs_match_enumeration() -> None:
    for seed in range(1000):
        x, y, _, _ = random_pair(seed)
        assert wilcoxon_test(x, y).p_value == pytest.approx(permutation_p(x - y), abs=1e-9)


def test_random_pairs_are_scale_invariant_and_antisymmetric() -> None:
    for seed in range(1000):
        x, y, a, b = random_pair(seed)
        plain = wilcoxon_test(x, y)
        mapped = wilcoxon_test(a * x + b, a * y + b)
        backward = wilcoxon_test(y, x)
        assert mapped.statistic == plain.statistic
        assert mapped.p_value == pytest.approx(plain.p_value, abs=1e-12)
        assert backward.statistic == -plain.statistic
        assert backward.p_value == pytest.approx(plain.p_value, abs=1e-12)


def test_sign_matrix_enumerates_every_assignment() -> None:
    signs = sign_matrix(4)
    assert signs.shape == (16, 4)
    assert len({tuple(row) for row in signs.tolist()}) == 16


def test_exact_p_of_extreme_statistic() -> None:
    ranks = np.arange(1.0, 6.0)
    # Only all-plus and all-minus reach |W| = 15.
    assert exact_p_value(ranks, 15.0) == pytest.approx(2 / 32)


def test_large_samples_use_normal_approximation() -> None:
    rng = np.random.default_rng(3)
    x, y = rng.standard_normal(40) + 0.3, rng.standard_normal(40)
    result = wilcoxon_test(x, y)
    assert result.n_effective == 40
    assert result.p_value == pytest.approx(2 * stats.norm.sf(abs(result.z)))


def test_non_finite_input_raises() -> None:
    with pytest.raises(ValueError):
        wilcoxon_test(np.array([1.0, np.nan, 2, 3, 4]), np.zeros(5))
    with pytest.raises(ValueError):
        wilcoxon_test(np.zeros(5), np.zeros(6))


@pytest.mark.parametrize("a, b", [(2.0, 0.0), (0.5, -3.0), (10.0, 7.0)])
def test_common_affine_map_is_invariant(a: float, b: float) -> None:
    rng = np.random.default_rng(4)
    x, y = rng.standard_normal(15), rng.standard_normal(15)
    plain, mapped = wilcoxon_test(x, y), wilcoxon_test(a * x + b, a * y + b)
    assert mapped.statistic == plain.statistic
    assert mapped.z == pytest.approx(plain.z)
    assert mapped.p_value == pytest.approx(plain.p_value)


@pytest.mark.parametrize("n", [6, 11, 30])
def test_swapping_negates_statistic(n: int) -> None:
    rng = np.random.default_rng(n)
    x, y = rng.standard_normal(n), rng.standard_normal(n)
    forward, backward = wilcoxon_test(x, y), wilcoxon_test(y, x)
    assert backward.statistic == -forward.statistic
    assert backward.p_value == pytest.approx(forward.p_value)


def test_exact_and_normal_p_gap_without_continuity_correction() -> None:
    """Every achievable W for 10 to 12 distinct ranks. The normal tail
    misses about half a point mass of the exact distribution, so the gap
    stays under 0.06 but exceeds 0.03 at n = 10."""
    worst = {}
    for n in (10, 11, 12):
        ranks = np.arange(1.0, n + 1)
        sigma = np.sqrt(n * (n + 1) * (2 * n + 1) / 6)
        achievable = {abs(int(np.dot(s, ranks))) for s in product((-1, 1), repeat=n)}
        worst[n] = max(
            abs(exact_p_value(ranks, w) - 2 * stats.norm.sf(w / sigma)) for w in achievable
        )
    assert all(gap < 0.06 for gap in worst.values())
    assert worst[10] > 0.03


def test_p_value_range_and_statistic_bound() -> None:
    rng = np.random.default_rng(5)
    for _ in range(20):
        x, y = rng.integers(0, 4, 9).astype(float), rng.integers(0, 4, 9).astype(float)
        result = wilcoxon_test(x, y)
        n = result.n_effective
        assert 0 <= result.p_value <= 1
        assert abs(result.statistic) <= n * (n + 1) / 2


def test_filter_discards_copies() -> None:
    rng = np.random.default_rng(6)
    f = rng.standard_normal(30)
    selected = np.column_stack([rng.standard_normal(30) + 5, f])
    assert not wilcoxon_filter(selected, f.copy(), 0.05)


def test_filter_keeps_with_empty_selection() -> None:
    assert wilcoxon_filter(np.zeros((20, 0)), np.arange(20.0), 0.05)


def test_filter_keeps_shifted_feature() -> None:
    rng = np.random.default_rng(7)
    selected = rng.standard_normal((30, 3))
    f = rng.standard_normal(30) + 10
    assert wilcoxon_filter(selected, f, 0.05)


def test_filter_checks_lengths() -> None:
    with pytest.raises(ValueError):
        wilcoxon_filter(np.zeros((10, 2)), np.zeros(9), 0.05)
