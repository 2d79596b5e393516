"""The online selection loop.

Each arriving feature group goes through three stages in order:

    sample  - a DPP over (selected + group), conditioned on the selected
              features, picks a diverse subset of the group;
    local   - per-mode filters (Wilcoxon redundancy test and/or the
              class-separability criteria) decide which sampled features
              join the selected set;
    global  - an elasticnet model over the whole selected set prunes the
              features whose coefficient falls below the threshold.

The state after every group is an immutable snapshot holding the selected
features with their provenance, the append-only iteration log and the
random generator state, which is all that is needed to continue a run.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, NamedTuple, Sequence

try:
    from typing import Self
except ImportError:  # Python < 3.11
    from typing_extensions import Self

import numpy as np
from scipy import linalg

try:
    from .constants import (
        ANCHOR_LIMIT,
        CHECKPOINT_VERSION,
        DEFAULT_ALPHA,
        DEFAULT_EPSILON,
        DEFAULT_FOLDS,
        DEFAULT_GROUP_SIZE,
        RANK_TOL,
    )
    from .data_stream import Dataset, FeatureGroup, StreamConfig, stream_groups
    from .dpp import KernelSpec, LEnsemble, build_similarity, condition_on, sample, sample_truncated
    from .elasticnet import ElasticNetConfig, fit_elasticnet, prune
    from .evaluation import SelectionReport, evaluate
    from .separability import (
        ScatterVariant,
        SupervisedConfig,
        TReference,
        TSign,
        supervised_select,
    )
    from .utils import fingerprint, standardize
    from .wilcoxon import wilcoxon_filter
except ImportError:
    from constants import (
        ANCHOR_LIMIT,
        CHECKPOINT_VERSION,
        DEFAULT_ALPHA,
        DEFAULT_EPSILON,
        DEFAULT_FOLDS,
        DEFAULT_GROUP_SIZE,
        RANK_TOL,
    )
    from data_stream import Dataset, FeatureGroup, StreamConfig, stream_groups
    from dpp import KernelSpec, LEnsemble, build_similarity, condition_on, sample, sample_truncated
    from elasticnet import ElasticNetConfig, fit_elasticnet, prune
    from evaluation import SelectionReport, evaluate
    from separability import (
        ScatterVariant,
        SupervisedConfig,
        TReference,
        TSign,
        supervised_select,
    )
    from utils import fingerprint, standardize
    from wilcoxon import wilcoxon_filter

logger = logging.getLogger(__name__)

# Second key of the sampler seed, keeping it apart from the stream shuffle.
SAMPLER_STREAM = 1

Sink = Callable[[dict], None]


class PipelineError(RuntimeError):
    """A stage failed. `state` is the last consistent state, log included."""

    def __init__(self, message: str, state: PipelineState) -> None:
        super().__init__(message)
        self.state = state


class ConfigMismatchError(ValueError):
    ...


class Mode(str, Enum):
    DPP_ONLY = "dpp_only"
    UNSUPERVISED = "unsupervised"
    SUPERVISED = "supervised"
    COMBINED = "combined"


class Stage(str, Enum):
    INITIAL = "initial"
    DPP = "dpp"
    LOCAL_UNSUP = "local_unsup"
    LOCAL_SUP = "local_sup"
    SURVIVED_GLOBAL = "survived_global"


@dataclass(frozen=True)
class PipelineConfig:
    mode: Mode = Mode.SUPERVISED
    kernel: KernelSpec = field(default_factory=KernelSpec)
    k_max: int | None = None
    alpha: float = DEFAULT_ALPHA
    epsilon: float = DEFAULT_EPSILON
    elasticnet: ElasticNetConfig = field(default_factory=ElasticNetConfig)
    group_size: int = DEFAULT_GROUP_SIZE
    seed: int = 0
    shuffle: bool = False
    max_selected: int | None = None
    anchor_limit: int = ANCHOR_LIMIT
    scatter_variant: ScatterVariant = ScatterVariant.MEAN_VARIANCE
    t_sign: TSign = TSign.EXCEEDS
    t_reference: TReference = TReference.HELD
    global_per_feature: bool = False
    second_chance: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", Mode(self.mode))
        if isinstance(self.kernel, dict):
            object.__setattr__(self, "kernel", KernelSpec.from_dict(self.kernel))
        if isinstance(self.elasticnet, dict):
            object.__setattr__(self, "elasticnet", ElasticNetConfig.from_dict(self.elasticnet))
        if self.k_max is not None and self.k_max < 0:
            raise ValueError(f"k_max must be nonnegative. Got {self.k_max}.")
        if self.max_selected is not None and self.max_selected < 0:
            raise ValueError(f"max_selected must be nonnegative. Got {self.max_selected}.")
        if self.anchor_limit < 1:
            raise ValueError(f"anchor_limit must be positive. Got {self.anchor_limit}.")
        if self.group_size < 1:
            raise ValueError(f"Group size must be >= 1. Got {self.group_size}.")
        # SupervisedConfig validates alpha and epsilon and coerces the enums.
        object.__setattr__(self, "scatter_variant", self.supervised.scatter_variant)
        object.__setattr__(self, "t_sign", self.supervised.t_sign)
        object.__setattr__(self, "t_reference", self.supervised.t_reference)

    @property
    def stream(self) -> StreamConfig:
        return StreamConfig(self.group_size, self.seed, self.shuffle)

    @property
    def supervised(self) -> SupervisedConfig:
        return SupervisedConfig(
            self.epsilon, self.alpha, self.scatter_variant, self.t_sign, self.t_reference
        )

    @property
    def needs_labels(self) -> bool:
        return self.mode in (Mode.SUPERVISED, Mode.COMBINED)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode.value,
            "kernel": self.kernel.to_dict(),
            "k_max": self.k_max,
            "alpha": self.alpha,
            "epsilon": self.epsilon,
            "elasticnet": self.elasticnet.to_dict(),
            "group_size": self.group_size,
            "seed": self.seed,
            "shuffle": self.shuffle,
            "max_selected": self.max_selected,
            "anchor_limit": self.anchor_limit,
            "scatter_variant": ScatterVariant(self.scatter_variant).value,
            "t_sign": TSign(self.t_sign).value,
            "t_reference": TReference(self.t_reference).value,
            "global_per_feature": self.global_per_feature,
            "second_chance": self.second_chance,
        }

    @classmethod
    def from_dict(cls, data: dict) -> Self:
        return cls(**data)


class SelectedFeature(NamedTuple):
    index: int
    group_id: int
    admitted_by: Stage
    stage: Stage


class IterationLog(NamedTuple):
    group_id: int
    arrived: tuple[int, ...]
    sampled: tuple[int, ...]
    accepted: tuple[int, ...]
    pruned: tuple[int, ...]
    stages: tuple[str, ...]
    timings: dict[str, float]

    def to_dict(self) -> dict:
        out = self._asdict()
        for key in ("arrived", "sampled", "accepted", "pruned", "stages"):
            out[key] = list(out[key])
        return out

    @classmethod
    def from_dict(cls, data: dict) -> Self:
        return cls(
            group_id=int(data["group_id"]),
            arrived=tuple(data["arrived"]),
            sampled=tuple(data["sampled"]),
            accepted=tuple(data["accepted"]),
            pruned=tuple(data["pruned"]),
            stages=tuple(data["stages"]),
            timings=dict(data["timings"]),
        )


@dataclass(frozen=True)
class PipelineState:
    selected: tuple[SelectedFeature, ...]
    logs: tuple[IterationLog, ...]
    rng_state: dict
    groups_seen: int
    fingerprint: str

    @property
    def indices(self) -> tuple[int, ...]:
        return tuple(s.index for s in self.selected)

    def to_dict(self) -> dict:
        return {
            "version": CHECKPOINT_VERSION,
            "fingerprint": self.fingerprint,
            "groups_seen": self.groups_seen,
            "rng_state": self.rng_state,
            "selected": [
                [s.index, s.group_id, s.admitted_by.value, s.stage.value] for s in self.selected
            ],
            "logs": [log.to_dict() for log in self.logs],
        }

    @classmethod
    def from_dict(cls, data: dict) -> Self:
        if data.get("version") != CHECKPOINT_VERSION:
            raise ValueError(
                f"Unsupported checkpoint version {data.get('version')!r}, "
                f"expected {CHECKPOINT_VERSION}."
            )
        return cls(
            selected=tuple(
                SelectedFeature(int(i), int(g), Stage(a), Stage(s))
                for i, g, a, s in data["selected"]
            ),
            logs=tuple(IterationLog.from_dict(log) for log in data["logs"]),
            rng_state=data["rng_state"],
            groups_seen=int(data["groups_seen"]),
            fingerprint=data["fingerprint"],
        )


def run_fingerprint(d: Dataset, cfg: PipelineConfig) -> str:
    return fingerprint({"config": cfg.to_dict(), "n": d.n, "n_features": d.n_features})


def save_checkpoint(state: PipelineState, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(state.to_dict(), sort_keys=True))
    return path


def load_checkpoint(path: str | Path) -> PipelineState:
    return PipelineState.from_dict(json.loads(Path(path).read_text()))


def jsonl_sink(path: str | Path) -> Sink:
    """Sink appending each iteration record to `path` as one JSON line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    def write(record: dict) -> None:
        with path.open("a") as f:
            f.write(json.dumps(record, sort_keys=True) + "\n")

    return write


def _rng_from(state: dict) -> np.random.Generator:
    rng = np.random.default_rng()
    rng.bit_generator.state = state
    return rng


def start(d: Dataset, cfg: PipelineConfig, initial: Iterable[int] = ()) -> PipelineState:
    """Initial state: the given features (none by default) and a fresh
    sampler generator derived from cfg.seed."""
    if cfg.needs_labels and not d.supervised:
        raise ValueError(f"Mode {cfg.mode.value} needs labels with at least two classes.")
    initial = tuple(map(int, initial))
    if len(set(initial)) != len(initial) or any(not 0 <= i < d.n_features for i in initial):
        raise ValueError("Initial features must be distinct valid column indices.")
    rng = np.random.default_rng([cfg.seed, SAMPLER_STREAM])
    return PipelineState(
        selected=tuple(SelectedFeature(i, -1, Stage.INITIAL, Stage.INITIAL) for i in initial),
        logs=(),
        rng_state=rng.bit_generator.state,
        groups_seen=0,
        fingerprint=run_fingerprint(d, cfg),
    )


def independent_anchors(e: LEnsemble, anchors: Sequence[int]) -> tuple[int, ...]:
    """Largest subset of the anchors whose principal minor of L is
    nonsingular, chosen by pivoted QR so conditioning stays well-posed."""
    if not anchors:
        return ()
    pos = e.positions(anchors)
    minor = e.L[np.ix_(pos, pos)]
    _, R, piv = linalg.qr(minor, pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.count_nonzero(diag > RANK_TOL * max(1.0, diag.max(initial=0.0))))
    kept = tuple(sorted(e.item_ids[pos[p]] for p in piv[:rank]))
    if len(kept) < len(anchors):
        logger.debug("Dropped %d linearly dependent anchors.", len(anchors) - len(kept))
    return kept


def _sample_group(
    Z: np.ndarray,
    anchors: list[int],
    fresh: list[int],
    cfg: PipelineConfig,
    rng: np.random.Generator,
) -> tuple[int, ...]:
    ensemble = build_similarity(Z[:, anchors + fresh], cfg.kernel, anchors + fresh)
    conditioned = condition_on(ensemble, independent_anchors(ensemble, anchors))
    if conditioned.size > len(fresh):
        # Dependent anchors left over are excluded from the draw.
        pos = conditioned.positions(fresh)
        conditioned = LEnsemble.from_matrix(
            conditioned.L[np.ix_(pos, pos)], [conditioned.item_ids[p] for p in pos]
        )
    if cfg.k_max is None:
        return sample(conditioned, rng).items
    return sample_truncated(conditioned, min(cfg.k_max, conditioned.size), rng).items


def _local_stage(
    candidates: Sequence[int],
    current: list[int],
    Z: np.ndarray,
    labels: np.ndarray | None,
    cfg: PipelineConfig,
) -> list[tuple[int, Stage]]:
    """Features among `candidates` admitted by the mode's local criteria,
    in admission order. Z holds the standardized columns."""
    if not candidates:
        return []
    if cfg.mode is Mode.DPP_ONLY:
        return [(i, Stage.DPP) for i in candidates]

    survivors = list(candidates)
    if cfg.mode in (Mode.UNSUPERVISED, Mode.COMBINED):
        survivors, pool = [], list(current)
        for i in candidates:
            if wilcoxon_filter(Z[:, pool], Z[:, i], cfg.alpha):
                survivors.append(i)
                pool.append(i)
        if cfg.mode is Mode.UNSUPERVISED:
            return [(i, Stage.LOCAL_UNSUP) for i in survivors]

    positions = supervised_select(Z[:, survivors], Z[:, current], labels, cfg.supervised)
    return [(survivors[p], Stage.LOCAL_SUP) for p in positions]


def _global_stage(
    selected: list[SelectedFeature], Z: np.ndarray, labels: np.ndarray, cfg: PipelineConfig
) -> tuple[list[SelectedFeature], list[int]]:
    if not selected:
        return selected, []
    model = fit_elasticnet(Z[:, [s.index for s in selected]], labels, cfg.elasticnet)
    keep = set(prune(model, cfg.elasticnet.threshold))
    kept = [s._replace(stage=Stage.SURVIVED_GLOBAL) for p, s in enumerate(selected) if p in keep]
    dropped = [s.index for p, s in enumerate(selected) if p not in keep]
    return kept, dropped


def step(
    state: PipelineState,
    group: FeatureGroup,
    d: Dataset,
    cfg: PipelineConfig,
    Z: np.ndarray | None = None,
) -> PipelineState:
    """Processes one arriving group and returns the next state."""
    Z = standardize(d.values) if Z is None else Z
    rng = _rng_from(state.rng_state)
    selected = list(state.selected)
    chosen = {s.index for s in selected}
    fresh = [i for i in group.indices if i not in chosen]
    timings, stages = {}, []

    tick = time.perf_counter()
    anchors = [s.index for s in selected]
    if len(anchors) > cfg.anchor_limit:
        anchors = sorted(map(int, rng.choice(anchors, cfg.anchor_limit, replace=False)))
    sampled = _sample_group(Z, anchors, fresh, cfg, rng) if fresh else ()
    timings["sample"] = time.perf_counter() - tick
    stages.append("sample")

    tick = time.perf_counter()
    current = [s.index for s in selected]
    admitted = _local_stage(sampled, current, Z, d.labels, cfg)
    if cfg.second_chance and cfg.needs_labels:
        leftover = [i for i in fresh if i not in sampled]
        held = current + [i for i, _ in admitted]
        admitted += _local_stage(leftover, held, Z, d.labels, cfg)
    if cfg.k_max is not None:
        admitted = admitted[: cfg.k_max]
    if cfg.max_selected is not None:
        admitted = admitted[: max(cfg.max_selected - len(selected), 0)]
    timings["local"] = time.perf_counter() - tick
    stages.append("local")

    tick = time.perf_counter()
    pruned = []
    additions = [SelectedFeature(i, group.group_id, how, how) for i, how in admitted]
    if d.supervised:
        if cfg.global_per_feature:
            for feature in additions:
                selected, dropped = _global_stage(selected + [feature], Z, d.labels, cfg)
                pruned += dropped
        else:
            selected, pruned = _global_stage(selected + additions, Z, d.labels, cfg)
        timings["global"] = time.perf_counter() - tick
        stages.append("global")
    else:
        selected += additions

    log = IterationLog(
        group_id=group.group_id,
        arrived=tuple(fresh),
        sampled=tuple(sampled),
        accepted=tuple(i for i, _ in admitted),
        pruned=tuple(pruned),
        stages=tuple(stages),
        timings=timings,
    )
    logger.info(
        "Group %d: %d arrived, %d sampled, %d accepted, %d pruned, %d selected",
        group.group_id,
        len(fresh),
        len(sampled),
        len(admitted),
        len(pruned),
        len(selected),
    )
    return replace(
        state,
        selected=tuple(selected),
        logs=state.logs + (log,),
        rng_state=rng.bit_generator.state,
        groups_seen=state.groups_seen + 1,
    )


def resume(
    state: PipelineState,
    groups: Iterable[FeatureGroup],
    cfg: PipelineConfig,
    d: Dataset,
    sink: Sink | None = None,
) -> PipelineState:
    """Continues a run over more groups. Stops early once max_selected
    features are held. Any stage error is raised as PipelineError carrying
    the state reached before the failing group."""
    if state.fingerprint != run_fingerprint(d, cfg):
        raise ConfigMismatchError("State was produced with a different config or dataset.")
    Z = standardize(d.values)
    for group in groups:
        if cfg.max_selected is not None and len(state.selected) >= cfg.max_selected:
            logger.info("Reached max_selected=%d; stopping.", cfg.max_selected)
            break
        try:
            state = step(state, group, d, cfg, Z)
        except Exception as e:
            raise PipelineError(f"Group {group.group_id} failed: {e}", state) from e
        if sink is not None:
            sink(state.logs[-1].to_dict())
    return state


def run_stream(d: Dataset, cfg: PipelineConfig, sink: Sink | None = None) -> PipelineState:
    return resume(start(d, cfg), stream_groups(d, cfg.stream), cfg, d, sink)


def run(
    d: Dataset,
    cfg: PipelineConfig,
    folds: int = DEFAULT_FOLDS,
    sink: Sink | None = None,
    per_fold_selection: bool = False,
) -> tuple[PipelineState, SelectionReport]:
    """Runs the whole stream and scores the final selection.

    The report carries no metrics when the dataset is unlabeled or nothing
    was selected.
    """
    tick = time.perf_counter()
    state = run_stream(d, cfg, sink)
    seconds = time.perf_counter() - tick
    report = SelectionReport(
        dataset=d.name,
        mode=cfg.mode.value,
        selected=state.indices,
        feature_names=tuple(d.feature_names[i] for i in state.indices),
        seed=cfg.seed,
        config=cfg.to_dict(),
    )
    if d.supervised and (state.selected or per_fold_selection):
        selector = (lambda train: run_stream(train, cfg).indices) if per_fold_selection else None
        report = evaluate(
            d,
            state.indices,
            folds,
            cfg.seed,
            mode=cfg.mode.value,
            config=cfg.to_dict(),
            selector=selector,
        )
    return state, replace(report, seconds=seconds)
