"""Cross-validated scoring of a selected feature subset, run reports and
the comparison tables built from them."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, NamedTuple

try:
    from typing import Self
except ImportError:  # Python < 3.11
    from typing_extensions import Self

import numpy as np
import pandas as pd
from sklearn.linear_model import LogisticRegression
from sklearn.metrics import accuracy_score, log_loss
from sklearn.model_selection import StratifiedKFold
from sklearn.neighbors import KNeighborsClassifier
from sklearn.pipeline import Pipeline
from sklearn.preprocessing import StandardScaler

try:
    from .constants import DEFAULT_FOLDS, DEFAULT_NEIGHBORS, MAX_RESTRATIFY
    from .data_stream import Dataset
except ImportError:
    from constants import DEFAULT_FOLDS, DEFAULT_NEIGHBORS, MAX_RESTRATIFY
    from data_stream import Dataset

logger = logging.getLogger(__name__)

RESULT_COLUMNS = ["dataset", "mode", "n_selected", "accuracy", "log_loss", "seconds", "seed"]
RESULT_KEY = ["dataset", "mode", "seed"]

Selector = Callable[[Dataset], Iterable[int]]


class EvaluationError(ValueError):
    ...


class FoldMetrics(NamedTuple):
    fold: int
    accuracy: float
    log_loss: float
    knn_accuracy: float
    n_selected: int


@dataclass(frozen=True)
class SelectionReport:
    dataset: str
    mode: str
    selected: tuple[int, ...] = ()
    feature_names: tuple[str, ...] = ()
    accuracy: float | None = None
    log_loss: float | None = None
    knn_accuracy: float | None = None
    folds: tuple[FoldMetrics, ...] = ()
    seconds: float = 0.0
    seed: int = 0
    config: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "selected", tuple(map(int, self.selected)))
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        object.__setattr__(
            self, "folds", tuple(FoldMetrics(*f) for f in self.folds)
        )
        for acc in (self.accuracy, self.knn_accuracy):
            if acc is not None and not 0 <= acc <= 100:
                raise ValueError(f"Accuracy must lie in [0, 100]. Got {acc}.")
        if self.log_loss is not None and self.log_loss < 0:
            raise ValueError(f"Log-loss must be nonnegative. Got {self.log_loss}.")
        if self.folds and len(self.folds) < 2:
            raise ValueError("A cross-validated report needs at least two folds.")

    @property
    def n_selected(self) -> int:
        return len(self.selected)

    def to_dict(self, timings: bool = True) -> dict:
        out = asdict(self)
        out["folds"] = [f._asdict() for f in self.folds]
        out["n_selected"] = self.n_selected
        if not timings:
            del out["seconds"]
        return out

    def to_json(self, timings: bool = True) -> str:
        return json.dumps(self.to_dict(timings), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> Self:
        data = {k: v for k, v in data.items() if k != "n_selected"}
        data["folds"] = tuple(FoldMetrics(**f) for f in data.get("folds", ()))
        return cls(**data)

    @classmethod
    def load(cls, path: str | Path) -> Self:
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json() + "\n")
        return path

    def row(self) -> dict:
        return {
            "dataset": self.dataset,
            "mode": self.mode,
            "n_selected": self.n_selected,
            "accuracy": self.accuracy,
            "log_loss": self.log_loss,
            "seconds": self.seconds,
            "seed": self.seed,
        }


def logistic_model() -> Pipeline:
    # Scaler statistics come from the training fold only.
    return Pipeline(
        [("scaler", StandardScaler()), ("clf", LogisticRegression(max_iter=1000))]
    )


def knn_model(neighbors: int = DEFAULT_NEIGHBORS) -> Pipeline:
    return Pipeline(
        [("scaler", StandardScaler()), ("clf", KNeighborsClassifier(n_neighbors=neighbors))]
    )


def mean_log_loss(y_true: np.ndarray, proba: np.ndarray, labels=None) -> float:
    """Mean negative log-likelihood of the true labels under `proba`."""
    return float(log_loss(y_true, proba, labels=labels))


def stratified_folds(
    labels: np.ndarray, folds: int, seed: int
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Stratified fold assignment; re-drawn with a new seed whenever a
    training split misses a class, up to MAX_RESTRATIFY attempts."""
    n_classes = np.unique(labels).size
    placeholder = np.zeros((labels.size, 1))
    for attempt in range(MAX_RESTRATIFY):
        splitter = StratifiedKFold(n_splits=folds, shuffle=True, random_state=seed + attempt)
        try:
            splits = list(splitter.split(placeholder, labels))
        except ValueError as e:
            raise EvaluationError(f"Cannot stratify {folds} folds: {e}") from e
        if all(np.unique(labels[train]).size == n_classes for train, _ in splits):
            return splits
        logger.info("Fold assignment %d left a class out of training; re-drawing.", attempt)
    raise EvaluationError(
        f"No stratification with every class in training after {MAX_RESTRATIFY} attempts."
    )


def evaluate(
    d: Dataset,
    selected: Iterable[int],
    folds: int = DEFAULT_FOLDS,
    seed: int = 0,
    *,
    mode: str = "custom",
    config: dict | None = None,
    selector: Selector | None = None,
    neighbors: int = DEFAULT_NEIGHBORS,
) -> SelectionReport:
    """Scores the selected columns with stratified k-fold cross-validation.

    The logistic evaluator is the headline: accuracy is its mean fold
    accuracy times 100 and log-loss is the mean of its fold log-losses.
    The 3-NN accuracy is reported alongside. When a selector is given the
    selection is re-run on every training fold instead of using `selected`
    for all of them.
    """
    selected = tuple(map(int, selected))
    if not d.supervised:
        raise EvaluationError(f"{d.name} has no labels with two or more classes.")
    if not selected and selector is None:
        raise EvaluationError("Cannot evaluate an empty feature selection.")
    if not 2 <= folds <= d.n:
        raise EvaluationError(f"folds must lie in [2, {d.n}]. Got {folds}.")
    if any(not 0 <= i < d.n_features for i in selected):
        raise EvaluationError("Selected feature index out of range.")

    classes = np.unique(d.labels)
    metrics = []
    for k, (train, test) in enumerate(stratified_folds(d.labels, folds, seed)):
        cols = selected
        if selector is not None:
            cols = tuple(map(int, selector(d.take(train))))
            if not cols:
                raise EvaluationError(f"Selection on training fold {k} came back empty.")
        X_train, X_test = d.values[np.ix_(train, cols)], d.values[np.ix_(test, cols)]
        y_train, y_test = d.labels[train], d.labels[test]

        logistic = logistic_model().fit(X_train, y_train)
        proba = np.zeros((len(test), classes.size))
        proba[:, np.searchsorted(classes, logistic.classes_)] = logistic.predict_proba(X_test)
        knn = knn_model(min(neighbors, len(train))).fit(X_train, y_train)
        metrics.append(
            FoldMetrics(
                fold=k,
                accuracy=100 * accuracy_score(y_test, logistic.predict(X_test)),
                log_loss=mean_log_loss(y_test, proba, labels=classes),
                knn_accuracy=100 * accuracy_score(y_test, knn.predict(X_test)),
                n_selected=len(cols),
            )
        )
        logger.debug("Fold %d: %s", k, metrics[-1])

    return SelectionReport(
        dataset=d.name,
        mode=mode,
        selected=selected,
        feature_names=tuple(d.feature_names[i] for i in selected),
        accuracy=float(np.mean([m.accuracy for m in metrics])),
        log_loss=float(np.mean([m.log_loss for m in metrics])),
        knn_accuracy=float(np.mean([m.knn_accuracy for m in metrics])),
        folds=tuple(metrics),
        seed=seed,
        config=config or {},
    )


@dataclass(frozen=True, eq=False)
class Comparison:
    """One row per report, plus the dataset x mode layout of #dim and
    accuracy column pairs."""

    rows: pd.DataFrame

    def wide(self) -> pd.DataFrame:
        table = self.rows.pivot_table(
            index="dataset",
            columns="mode",
            values=["n_selected", "accuracy"],
            aggfunc="first",
            sort=False,
        )
        return table.swaplevel(axis=1).sort_index(axis=1, level=0, sort_remaining=False)

    def to_csv(self, path: str | Path | None = None) -> str | None:
        return self.rows.to_csv(path, index=False)

    def to_text(self) -> str:
        return self.wide().to_string(float_format=lambda x: f"{x:.2f}")


def compare_runs(reports: Iterable[SelectionReport]) -> Comparison:
    rows = [
        {
            "dataset": r.dataset,
            "mode": r.mode,
            "n_selected": r.n_selected,
            "accuracy": r.accuracy,
        }
        for r in reports
    ]
    if not rows:
        raise ValueError("Need at least one report to compare.")
    return Comparison(pd.DataFrame(rows, columns=["dataset", "mode", "n_selected", "accuracy"]))


def append_results(path: str | Path, reports: Iterable[SelectionReport]) -> pd.DataFrame:
    """Adds report rows to the results CSV, replacing any earlier row with
    the same dataset, mode and seed."""
    path = Path(path)
    fresh = pd.DataFrame([r.row() for r in reports], columns=RESULT_COLUMNS)
    if path.exists() and path.stat().st_size:
        frame = pd.concat([pd.read_csv(path), fresh], ignore_index=True)
    else:
        frame = fresh
    frame = frame.drop_duplicates(subset=RESULT_KEY, keep="last")
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False)
    return frame
