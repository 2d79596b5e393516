import logging

import numpy as np
import pytest

from src.elasticnet import ElasticNetConfig, FittedModel, Loss, fit_elasticnet, prune


def model_with(*beta: float) -> FittedModel:
    coefficients = np.array(beta)
    return FittedModel(coefficients, 0.0, True, 0.0, 1, (), coefficients[None, :], np.zeros(1))


def logistic_loss(X: np.ndarray, y: np.ndarray, beta: np.ndarray, intercept: float) -> float:
    return float(np.mean(np.logaddexp(0.0, -y * (intercept + X @ beta))))


def orthonormal_design(n: int, k: int, seed: int) -> np.ndarray:
    """Centered columns with X^T X / n = I."""
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(np.column_stack([np.ones(n), rng.standard_normal((n, k))]))
    return q[:, 1:] * np.sqrt(n)


def test_zero_penalty_is_least_squares() -> None:
    rng = np.random.default_rng(0)
    X = rng.standard_normal((30, 4))
    y = X @ np.array([1.0, -2.0, 0.5, 0.0]) + 0.3 + 0.1 * rng.standard_normal(30)
    cfg = ElasticNetConfig(lam=0.0, loss=Loss.SQUARED, tol=1e-12, max_iter=100_000)
    model = fit_elasticnet(X, y, cfg)
    solution, *_ = np.linalg.lstsq(np.column_stack([np.ones(30), X]), y, rcond=None)
    assert model.converged
    np.testing.assert_allclose(model.coefficients, solution[1:], atol=1e-8)
    assert model.intercept == pytest.approx(solution[0], abs=1e-8)


def test_orthonormal_design_soft_thresholds() -> None:
    for seed in range(100):
        rng = np.random.default_rng(seed)
        n, k = int(rng.integers(20, 81)), int(rng.integers(1, 7))
        lam, a = rng.uniform(0.01, 1.5), rng.uniform(0.0, 1.0)
        X = orthonormal_design(n, k, seed)
        y = X @ rng.normal(0, 1, k) + rng.standard_normal(n) + rng.normal(0, 3)
        ols = X.T @ (y - y.mean()) / n
        cfg = ElasticNetConfig(lam=lam, l1_ratio=a, loss="squared", tol=1e-12)
        model = fit_elasticnet(X, y, cfg)
        expected = np.sign(ols) * np.maximum(np.abs(ols) - lam * a, 0.0) / (1 + lam * (1 - a))
        np.testing.assert_allclose(model.coefficients, expected, atol=1e-8)
        assert model.intercept == pytest.approx(y.mean(), abs=1e-8)


def test_logistic_fit_satisfies_kkt() -> None:
    h = 1e-6
    for seed in range(100):
        rng = np.random.default_rng(seed)
        n, k = int(rng.integers(30, 61)), int(rng.integers(2, 7))
        labels = rng.permutation(np.arange(n) % 2)
        X = rng.standard_normal((n, k)) + np.outer(labels - 0.5, rng.normal(0, 1, k))
        y = np.where(labels == 1, 1, -1)
        cfg = ElasticNetConfig(
            lam=rng.uniform(0.05, 0.3), l1_ratio=rng.uniform(0.2, 0.9), tol=1e-10, max_iter=100_000
        )
        model = fit_elasticnet(X, labels, cfg)
        assert model.converged
        beta, b0 = model.coefficients, model.intercept
        l1, l2 = cfg.lam * cfg.l1_ratio, cfg.lam * cfg.l2_ratio
        for j in range(k):
            step = np.zeros(k)
            step[j] = h
            grad = (
                logistic_loss(X, y, beta + step, b0) - logistic_loss(X, y, beta - step, b0)
            ) / (2 * h)
            if beta[j] != 0:
                assert abs(grad + l2 * beta[j] + l1 * np.sign(beta[j])) <= 1e-6
            else:
                assert abs(grad) <= l1 + 1e-6
        intercept_grad = (
            logistic_loss(X, y, beta, b0 + h) - logistic_loss(X, y, beta, b0 - h)
        ) / (2 * h)
        assert abs(intercept_grad) <= 1e-6


@pytest.mark.parametrize("loss", list(Loss))
def test_objective_never_increases(loss: Loss) -> None:
    rng = np.random.default_rng(3)
    X = rng.standard_normal((40, 6))
    y = (X[:, 0] + X[:, 1] > 0).astype(int)
    model = fit_elasticnet(X, y, ElasticNetConfig(lam=0.1, loss=loss))
    trace = model.objective_trace
    assert len(trace) == model.n_iter + 1
    assert all(b <= a + 1e-12 for a, b in zip(trace, trace[1:]))
    assert model.objective == trace[-1]


def test_permuting_columns_permutes_coefficients() -> None:
    rng = np.random.default_rng(4)
    X = rng.standard_normal((50, 5))
    y = (X[:, 2] - X[:, 4] + 0.5 * rng.standard_normal(50) > 0).astype(int)
    cfg = ElasticNetConfig(lam=0.05, tol=1e-12, max_iter=100_000)
    order = [3, 0, 4, 1, 2]
    plain = fit_elasticnet(X, y, cfg).coefficients
    permuted = fit_elasticnet(X[:, order], y, cfg).coefficients
    np.testing.assert_allclose(permuted, plain[order], atol=1e-7)


def test_informative_coefficient_dominates() -> None:
    rng = np.random.default_rng(5)
    X = rng.standard_normal((200, 4))
    y = (X[:, 1] > 0).astype(int)
    model = fit_elasticnet(X, y)
    assert np.argmax(np.abs(model.coefficients)) == 1
    assert model.coefficients[1] > 0
    assert prune(model, 0.15) == (1,)


def test_larger_code_is_the_positive_class() -> None:
    rng = np.random.default_rng(6)
    X = rng.standard_normal((100, 1))
    y = np.where(X[:, 0] > 0, 7, 3)
    assert fit_elasticnet(X, y).coefficients[0] > 0


def test_multiclass_keeps_largest_magnitude() -> None:
    rng = np.random.default_rng(7)
    X = rng.standard_normal((150, 3))
    y = np.argmax(X[:, :3] * np.array([1.0, 1.0, 0.0]) + 0.1 * rng.standard_normal((150, 3)), axis=1)
    model = fit_elasticnet(X, y, ElasticNetConfig(lam=0.05))
    assert model.coef_matrix.shape == (3, 3)
    assert model.intercepts.shape == (3,)
    for j in range(3):
        column = model.coef_matrix[:, j]
        assert model.coefficients[j] == column[np.argmax(np.abs(column))]


def test_single_class_is_rejected() -> None:
    with pytest.raises(ValueError):
        fit_elasticnet(np.ones((5, 2)), np.zeros(5))


def test_shape_mismatch() -> None:
    with pytest.raises(ValueError):
        fit_elasticnet(np.ones((5, 2)), np.array([0, 1, 0]))


def test_non_convergence_warns(caplog: pytest.LogCaptureFixture) -> None:
    rng = np.random.default_rng(8)
    X = rng.standard_normal((30, 4))
    y = (X[:, 0] > 0).astype(int)
    with caplog.at_level(logging.WARNING, logger="src.elasticnet"):
        model = fit_elasticnet(X, y, ElasticNetConfig(lam=0.01, max_iter=1))
    assert not model.converged
    assert model.n_iter == 1
    assert "did not converge" in caplog.text


@pytest.mark.parametrize(
    "kwargs",
    [{"lam": -0.1}, {"l1_ratio": 1.5}, {"max_iter": 0}, {"tol": 0.0}, {"prune_threshold": -1.0}],
)
def test_config_validation(kwargs: dict) -> None:
    with pytest.raises(ValueError):
        ElasticNetConfig(**kwargs)


def test_config_round_trip_and_threshold() -> None:
    cfg = ElasticNetConfig(lam=0.2, loss="squared", prune_threshold=0.05)
    assert ElasticNetConfig.from_dict(cfg.to_dict()) == cfg
    assert cfg.threshold == 0.05
    assert ElasticNetConfig(lam=0.2).threshold == 0.2
    assert ElasticNetConfig(l1_ratio=0.25).l2_ratio == 0.75


def test_prune_examples() -> None:
    assert prune(model_with(0.3, 0.05, -0.2), 0.15) == (0, 2)
    assert prune(model_with(0.5, -0.6, 0.2), 0.15) == (0, 1, 2)
    assert prune(model_with(0.0, 1.0), 1e-9) == (1,)


def test_pruning_is_monotone_in_threshold() -> None:
    model = model_with(0.3, -0.05, 0.2, 0.0, -0.8, 0.15)
    kept = [set(prune(model, t)) for t in (0.0, 0.1, 0.15, 0.25, 1.0)]
    assert all(later <= earlier for earlier, later in zip(kept, kept[1:]))
