"""Utility functions shared by the selection stages."""

import doctest
import hashlib
import json
import logging
from typing import Any, Iterator, Sequence, TypeVar

import numpy as np

T = TypeVar("T")

LOG_FORMAT = "%(asctime)s %(name)s %(levelname)s %(message)s"


def chunked(seq: Sequence[T], n: int) -> Iterator[Sequence[T]]:
    """Splits a sequence into consecutive chunks of size n, the last
    chunk holding whatever is left over.

    Examples:
    >>> [list(c) for c in chunked(range(12), 5)]
    [[0, 1, 2, 3, 4], [5, 6, 7, 8, 9], [10, 11]]
    >>> list(chunked([], 3))
    []
    """
    if n < 1:
        raise ValueError(f"Chunk size must be positive. Got {n} instead.")
    for i in range(0, len(seq), n):
        yield seq[i : i + n]


def check_finite(values: np.ndarray, what: str = "input") -> np.ndarray:
    """Returns values as a float array, raising if anything is NaN or infinite."""
    arr = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{what} contains non-finite values.")
    return arr


def standardize(x: np.ndarray) -> np.ndarray:
    """Centers each column and scales it to unit (population) variance.
    Constant columns become zero columns.

    Examples:
    >>> standardize(np.array([[1.0, 5.0], [3.0, 5.0]])).tolist()
    [[-1.0, 0.0], [1.0, 0.0]]
    """
    arr = np.asarray(x, dtype=float)
    squeeze = arr.ndim == 1
    if squeeze:
        arr = arr[:, None]
    centered = arr - arr.mean(axis=0)
    scale = arr.std(axis=0)
    out = np.zeros_like(centered)
    live = scale > 0
    out[:, live] = centered[:, live] / scale[live]
    return out[:, 0] if squeeze else out


def soft_threshold(x: float | np.ndarray, t: float) -> float | np.ndarray:
    """Soft-thresholding operator sign(x) * max(|x| - t, 0).

    Examples:
    >>> float(soft_threshold(0.3, 0.15))
    0.15
    >>> float(soft_threshold(-0.1, 0.15))
    -0.0
    """
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def fingerprint(obj: Any) -> str:
    """Returns the sha256 hex digest of an object's canonical JSON form."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def setup_logging(verbosity: int = 0) -> None:
    """Configures the root logger; each -v lowers the threshold one step."""
    level = {0: logging.WARNING, 1: logging.INFO}.get(verbosity, logging.DEBUG)
    logging.basicConfig(level=level, format=LOG_FORMAT, force=True)


if __name__ == "__main__":
    doctest.testmod()
