# !usr/bin/env python3

"""Determinantal point processes over feature vectors.

An L-ensemble assigns P(Y) = det(L_Y) / det(L + I) to every subset Y of
its items, so subsets of mutually dissimilar features are more likely.
Items here are columns of a feature matrix, standardized before the
similarity kernel is evaluated.

References:
    - https://arxiv.org/abs/1207.6083
    - https://github.com/guilgautier/DPPy
"""

from __future__ import annotations

import logging
import multiprocessing as mp
from dataclasses import dataclass, field
from enum import Enum
from itertools import repeat
from pathlib import Path
from typing import Iterable, NamedTuple

try:
    from typing import Self
except ImportError:  # Python < 3.11
    from typing_extensions import Self

import numpy as np
import pandas as pd
from scipy import linalg
from sklearn.metrics.pairwise import linear_kernel, rbf_kernel

try:
    from .constants import (
        EIGEN_FLOOR,
        MAX_REJECTIONS,
        SAMPLE_CHUNK,
        SINGULAR_TOL,
        SYMMETRY_TOL,
        WORKERS,
    )
    from .utils import chunked, standardize
except ImportError:
    from constants import (
        EIGEN_FLOOR,
        MAX_REJECTIONS,
        SAMPLE_CHUNK,
        SINGULAR_TOL,
        SYMMETRY_TOL,
        WORKERS,
    )
    from utils import chunked, standardize

logger = logging.getLogger(__name__)


class KernelError(ValueError):
    ...


class ConditioningError(ValueError):
    ...


class KernelName(str, Enum):
    RBF = "rbf"
    LINEAR = "linear"
    CORRELATION = "correlation"


@dataclass(frozen=True)
class KernelSpec:
    """Similarity kernel between standardized feature columns. A gamma of
    None means 1/n; scale multiplies the whole matrix."""

    name: KernelName = KernelName.RBF
    gamma: float | None = None
    scale: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "name", KernelName(self.name))
        if self.gamma is not None and self.gamma <= 0:
            raise ValueError(f"gamma must be positive. Got {self.gamma}.")
        if self.scale <= 0:
            raise ValueError(f"scale must be positive. Got {self.scale}.")

    def to_dict(self) -> dict:
        return {"name": self.name.value, "gamma": self.gamma, "scale": self.scale}

    @classmethod
    def from_dict(cls, data: dict) -> Self:
        return cls(**data)


@dataclass(frozen=True, eq=False)
class LEnsemble:
    L: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    item_ids: tuple[int, ...]
    _index: dict[int, int] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "_index", {item: i for i, item in enumerate(self.item_ids)}
        )

    @classmethod
    def from_matrix(cls, L: np.ndarray, item_ids: Iterable[int] | None = None) -> Self:
        """Validates symmetry and positive semidefiniteness, clamping
        eigenvalues in [EIGEN_FLOOR, 0) to zero."""
        L = np.asarray(L, dtype=float)
        if L.ndim != 2 or L.shape[0] != L.shape[1]:
            raise KernelError(f"L must be square, got shape {L.shape}.")
        if not np.all(np.isfinite(L)):
            raise KernelError("L contains non-finite entries.")
        size = L.shape[0]
        ids = tuple(range(size)) if item_ids is None else tuple(map(int, item_ids))
        if len(ids) != size or len(set(ids)) != size:
            raise KernelError("item_ids must be distinct and match the size of L.")
        norm = max(1.0, float(np.abs(L).max(initial=0.0)))
        if np.abs(L - L.T).max(initial=0.0) > SYMMETRY_TOL * norm:
            raise KernelError("L is not symmetric.")
        L = (L + L.T) / 2
        if size == 0:
            return cls(L, np.zeros(0), np.zeros((0, 0)), ids)
        w, v = np.linalg.eigh(L)
        if w.min() < EIGEN_FLOOR * norm:
            raise KernelError(
                f"L is not positive semidefinite (smallest eigenvalue {w.min():.3g})."
            )
        w = np.clip(w, 0.0, None)
        return cls(L, w, v, ids)

    @property
    def size(self) -> int:
        return len(self.item_ids)

    def positions(self, items: Iterable[int]) -> np.ndarray:
        try:
            return np.array(sorted(self._index[int(i)] for i in items), dtype=int)
        except KeyError as e:
            raise KeyError(f"Item {e.args[0]} is not in the ensemble.") from None

    @property
    def log_normalizer(self) -> float:
        """log det(L + I)."""
        return float(np.log1p(self.eigenvalues).sum())


class MarginalKernel(NamedTuple):
    K: np.ndarray
    item_ids: tuple[int, ...]


class SubsetSample(NamedTuple):
    items: tuple[int, ...]
    log_prob: float


def similarity(z: np.ndarray, kernel: KernelSpec) -> np.ndarray:
    """Evaluates the kernel between the columns of an already standardized
    n x M matrix. Zero (constant) columns are similar only to themselves."""
    n = z.shape[0]
    cols = z.T
    match kernel.name:
        case KernelName.RBF:
            gamma = kernel.gamma if kernel.gamma is not None else 1.0 / n
            S = rbf_kernel(cols, gamma=gamma)
        case KernelName.LINEAR:
            S = linear_kernel(cols) / n
        case KernelName.CORRELATION:
            S = np.abs(linear_kernel(cols) / n)
    flat = ~np.any(cols, axis=1)
    S[flat, :] = 0.0
    S[:, flat] = 0.0
    S[flat, flat] = 1.0
    return kernel.scale * S


def build_similarity(
    features: np.ndarray,
    kernel: KernelSpec = KernelSpec(),
    item_ids: Iterable[int] | None = None,
) -> LEnsemble:
    """Builds the L-ensemble over the columns of an n x M feature matrix."""
    x = np.asarray(features, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[1] < 1:
        raise KernelError("Need at least one feature column.")
    if not np.all(np.isfinite(x)):
        raise KernelError("Features contain non-finite values.")
    return LEnsemble.from_matrix(similarity(standardize(x), kernel), item_ids)


def marginal_kernel(e: LEnsemble) -> MarginalKernel:
    """K = (L + I)^-1 L, sharing L's eigenvectors with eigenvalues l/(1+l)."""
    w, v = e.eigenvalues, e.eigenvectors
    K = (v * (w / (1 + w))) @ v.T
    return MarginalKernel((K + K.T) / 2, e.item_ids)


def expected_size(e: LEnsemble) -> float:
    w = e.eigenvalues
    return float(np.sum(w / (1 + w)))


def subset_log_prob(e: LEnsemble, items: Iterable[int]) -> float:
    """log P(Y = items) = log det(L_items) - log det(L + I)."""
    pos = e.positions(items)
    if pos.size == 0:
        return -e.log_normalizer
    minor = e.L[np.ix_(pos, pos)]
    if np.linalg.eigvalsh(minor).min() <= SINGULAR_TOL:
        return -np.inf
    _, logdet = np.linalg.slogdet(minor)
    return float(logdet) - e.log_normalizer


def condition_on(e: LEnsemble, included: Iterable[int]) -> LEnsemble:
    """Returns the L-ensemble over the remaining items given that every item
    of `included` is in the sample:

        L^A = ([(L + I_Abar)^-1]_Abar)^-1 - I

    References:
        - https://arxiv.org/abs/1207.6083 (conditioning on inclusion)
    """
    inc = e.positions(included)
    if inc.size == 0:
        return e
    if np.linalg.eigvalsh(e.L[np.ix_(inc, inc)]).min() <= SINGULAR_TOL:
        raise ConditioningError("Conditioning event has probability zero.")
    rest = np.setdiff1d(np.arange(e.size), inc)
    ids = tuple(e.item_ids[i] for i in rest)
    if rest.size == 0:
        return LEnsemble.from_matrix(np.zeros((0, 0)), ids)
    shift = np.ones(e.size)
    shift[inc] = 0.0
    inner = linalg.inv(e.L + np.diag(shift))
    cond = linalg.inv(inner[np.ix_(rest, rest)]) - np.eye(rest.size)
    return LEnsemble.from_matrix((cond + cond.T) / 2, ids)


def _project(v: np.ndarray, rng: np.random.Generator) -> list[int]:
    """Draws from the projection DPP spanned by the orthonormal columns of v."""
    picked = []
    while v.shape[1] > 0:
        probs = np.sum(v**2, axis=1)
        probs /= probs.sum()
        i = int(rng.choice(len(probs), p=probs))
        picked.append(i)
        # Eliminate the basis vector with the largest weight on item i and
        # re-orthonormalize the rest.
        j = int(np.argmax(np.abs(v[i])))
        vj = v[:, j]
        v = np.delete(v, j, axis=1)
        if v.shape[1] == 0:
            break
        v = v - np.outer(vj, v[i] / vj[i])
        v, _ = np.linalg.qr(v)
    return picked


def _as_sample(e: LEnsemble, positions: Iterable[int]) -> SubsetSample:
    items = tuple(sorted(e.item_ids[p] for p in positions))
    return SubsetSample(items, subset_log_prob(e, items))


def sample(e: LEnsemble, rng: np.random.Generator) -> SubsetSample:
    """Exact spectral DPP sampling: keep each eigenvector with probability
    l/(1+l), then sample the projection DPP they span.

    References:
        - https://github.com/guilgautier/DPPy (dpp_eigvals_selector)
    """
    w = e.eigenvalues
    keep = rng.random(e.size) < w / (1 + w)
    return _as_sample(e, _project(e.eigenvectors[:, keep], rng))


def elementary_symmetric_polynomials(eigvals: np.ndarray, k: int) -> np.ndarray:
    """E[l, m] = e_l(eigvals[:m]) for l <= k and m <= len(eigvals)."""
    N = eigvals.size
    E = np.zeros((k + 1, N + 1))
    E[0, :] = 1.0
    for l in range(1, k + 1):
        for m in range(1, N + 1):
            E[l, m] = E[l, m - 1] + eigvals[m - 1] * E[l - 1, m - 1]
    return E


def sample_k(e: LEnsemble, k: int, rng: np.random.Generator) -> SubsetSample:
    """Exact k-DPP sample, selecting eigenvectors through the elementary
    symmetric polynomials of the eigenvalues.

    References:
        - https://github.com/guilgautier/DPPy (k_dpp_eigvals_selector)
    """
    w = e.eigenvalues
    rank = int(np.count_nonzero(w > SINGULAR_TOL))
    if not 0 <= k <= rank:
        raise ValueError(f"k={k} must be between 0 and the rank of L ({rank}).")
    E = elementary_symmetric_polynomials(w, k)
    chosen, remaining = [], k
    for m in range(w.size, 0, -1):
        if remaining == 0:
            break
        if E[remaining, m] <= 0:
            continue
        if rng.random() < w[m - 1] * E[remaining - 1, m - 1] / E[remaining, m]:
            chosen.append(m - 1)
            remaining -= 1
    return _as_sample(e, _project(e.eigenvectors[:, chosen], rng))


def sample_truncated(
    e: LEnsemble, k_max: int, rng: np.random.Generator
) -> SubsetSample:
    """DPP sample conditioned on having at most k_max items. Rejection from
    `sample` first; after MAX_REJECTIONS failures an exact k-DPP sample at
    k = k_max is returned instead."""
    if not 0 <= k_max <= e.size:
        raise ValueError(f"k_max must be between 0 and {e.size}. Got {k_max}.")
    if k_max == 0:
        return _as_sample(e, ())
    for _ in range(MAX_REJECTIONS):
        draw = sample(e, rng)
        if len(draw.items) <= k_max:
            return draw
    logger.warning(
        "Truncated sampler fell back to a %d-DPP after %d rejections.",
        k_max,
        MAX_REJECTIONS,
    )
    return sample_k(e, k_max, rng)


def _sample_chunk(
    e: LEnsemble, count: int, seed: np.random.SeedSequence, k_max: int | None
) -> list[SubsetSample]:
    rng = np.random.default_rng(seed)
    if k_max is None:
        return [sample(e, rng) for _ in range(count)]
    return [sample_truncated(e, k_max, rng) for _ in range(count)]


def sample_many(
    e: LEnsemble,
    count: int,
    seed: int,
    k_max: int | None = None,
    workers: int = 1,
) -> list[SubsetSample]:
    """Draws `count` samples in fixed-size chunks, each seeded from one
    SeedSequence, so the output does not depend on the number of workers."""
    sizes = [len(c) for c in chunked(range(count), SAMPLE_CHUNK)]
    seeds = np.random.SeedSequence(seed).spawn(len(sizes))
    args = list(zip(repeat(e), sizes, seeds, repeat(k_max)))
    if workers <= 1 or len(args) <= 1:
        chunks = [_sample_chunk(*a) for a in args]
    else:
        with mp.Pool(processes=min(workers, WORKERS)) as pool:
            chunks = pool.starmap(_sample_chunk, args)
    return [s for chunk in chunks for s in chunk]


def dump_kernels(e: LEnsemble, directory: str | Path) -> tuple[Path, Path]:
    """Writes L.csv and K.csv for inspection, with the item ids on a
    leading comment line."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    header = ",".join(map(str, e.item_ids))
    paths = directory / "L.csv", directory / "K.csv"
    for path, mat in zip(paths, (e.L, marginal_kernel(e).K)):
        np.savetxt(path, mat, delimiter=",", header=header, comments="# ", fmt="%.17g")
    return paths


def load_kernel_matrix(path: str | Path) -> LEnsemble:
    """Reads a comma-separated L matrix; lines starting with # are skipped."""
    try:
        L = pd.read_csv(path, header=None, comment="#").to_numpy(dtype=float)
    except (OSError, ValueError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise KernelError(f"Could not read a kernel matrix from {path}: {e}") from e
    return LEnsemble.from_matrix(L)
