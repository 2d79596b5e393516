"""Command-line interface: select, evaluate, bench, sample-dpp and synth."""

from __future__ import annotations

import logging
import multiprocessing as mp
from collections import Counter
from pathlib import Path
from typing import NamedTuple

import click

try:
    from .constants import (
        ANCHOR_LIMIT,
        DEFAULT_ALPHA,
        DEFAULT_EPSILON,
        DEFAULT_FOLDS,
        DEFAULT_GROUP_SIZE,
        DEFAULT_L1_RATIO,
        DEFAULT_LAMBDA,
        OUTPUT_DIR_ENV,
        WORKERS,
    )
    from .data_stream import DataError, Dataset, load_csv, make_synthetic
    from .dpp import KernelError, KernelName, KernelSpec, build_similarity, dump_kernels
    from .dpp import load_kernel_matrix, sample_many
    from .elasticnet import ElasticNetConfig
    from .evaluation import SelectionReport, append_results, compare_runs, evaluate
    from .pipeline import Mode, PipelineConfig, PipelineError, jsonl_sink, run
    from .pipeline import save_checkpoint
    from .separability import ScatterVariant, TReference, TSign
    from .utils import setup_logging
except ImportError:
    from constants import (
        ANCHOR_LIMIT,
        DEFAULT_ALPHA,
        DEFAULT_EPSILON,
        DEFAULT_FOLDS,
        DEFAULT_GROUP_SIZE,
        DEFAULT_L1_RATIO,
        DEFAULT_LAMBDA,
        OUTPUT_DIR_ENV,
        WORKERS,
    )
    from data_stream import DataError, Dataset, load_csv, make_synthetic
    from dpp import KernelError, KernelName, KernelSpec, build_similarity, dump_kernels
    from dpp import load_kernel_matrix, sample_many
    from elasticnet import ElasticNetConfig
    from evaluation import SelectionReport, append_results, compare_runs, evaluate
    from pipeline import Mode, PipelineConfig, PipelineError, jsonl_sink, run
    from pipeline import save_checkpoint
    from separability import ScatterVariant, TReference, TSign
    from utils import setup_logging

logger = logging.getLogger(__name__)

BENCH_MODES = (Mode.DPP_ONLY, Mode.UNSUPERVISED, Mode.SUPERVISED)
RESULTS_FILE = "results.csv"


def _stack(*decorators):
    def apply(f):
        for d in reversed(decorators):
            f = d(f)
        return f

    return apply


dataset_options = _stack(
    click.option(
        "--label-column",
        default="-1",
        show_default=True,
        help="Label column name or index (negative counts from the end).",
    ),
    click.option("--no-labels", is_flag=True, help="Treat every column as a feature."),
)

output_options = _stack(
    click.option(
        "--output-dir",
        envvar=OUTPUT_DIR_ENV,
        default="results",
        show_default=True,
        type=click.Path(file_okay=False, path_type=Path),
        help=f"Where reports and the results CSV go (env: {OUTPUT_DIR_ENV}).",
    ),
    click.option(
        "--seed",
        default=0,
        show_default=True,
        type=int,
        help="Seed for all randomness.",
    ),
)

kernel_options = _stack(
    click.option(
        "--kernel",
        type=click.Choice([k.value for k in KernelName]),
        default=KernelName.RBF.value,
        show_default=True,
        help="Similarity kernel between feature columns.",
    ),
    click.option(
        "--gamma",
        type=click.FloatRange(min=0, min_open=True),
        default=None,
        help="RBF width. [default: 1/n]",
    ),
    click.option(
        "--kernel-scale",
        type=click.FloatRange(min=0, min_open=True),
        default=1.0,
        show_default=True,
        help="Multiplier on the similarity matrix.",
    ),
    click.option(
        "--k-max",
        type=click.IntRange(min=0),
        default=None,
        help="Cap on features sampled per group. [default: none]",
    ),
)

pipeline_options = _stack(
    kernel_options,
    click.option(
        "--m",
        "group_size",
        type=click.IntRange(min=1),
        default=DEFAULT_GROUP_SIZE,
        show_default=True,
        help="Features per arriving group.",
    ),
    click.option(
        "--alpha",
        type=click.FloatRange(0, 1, min_open=True, max_open=True),
        default=DEFAULT_ALPHA,
        show_default=True,
        help="Significance level.",
    ),
    click.option(
        "--epsilon",
        type=click.FloatRange(min=0, min_open=True),
        default=DEFAULT_EPSILON,
        show_default=True,
        help="Minimum gain of F(U).",
    ),
    click.option(
        "--lam",
        type=click.FloatRange(min=0),
        default=DEFAULT_LAMBDA,
        show_default=True,
        help="Elasticnet penalty strength.",
    ),
    click.option(
        "--l1-ratio",
        type=click.FloatRange(0, 1),
        default=DEFAULT_L1_RATIO,
        show_default=True,
        help="L1 share of the penalty.",
    ),
    click.option(
        "--prune-threshold",
        type=click.FloatRange(min=0),
        default=None,
        help="Coefficient threshold. [default: same as --lam]",
    ),
    click.option(
        "--scatter",
        type=click.Choice([v.value for v in ScatterVariant]),
        default=ScatterVariant.MEAN_VARIANCE.value,
        show_default=True,
        help="Scatter construction for the separability scores.",
    ),
    click.option(
        "--t-sign",
        type=click.Choice([t.value for t in TSign]),
        default=TSign.EXCEEDS.value,
        show_default=True,
        help="Sign convention of the significance test.",
    ),
    click.option(
        "--t-reference",
        type=click.Choice([t.value for t in TReference]),
        default=TReference.HELD.value,
        show_default=True,
        help="Scores the significance test compares against.",
    ),
    click.option(
        "--max-selected",
        type=click.IntRange(min=0),
        default=None,
        help="Stop once this many features are held. [default: none]",
    ),
    click.option(
        "--anchor-limit",
        type=click.IntRange(min=1),
        default=ANCHOR_LIMIT,
        show_default=True,
        help="Selected features the sampler conditions on.",
    ),
    click.option(
        "--shuffle",
        is_flag=True,
        help="Stream the features in a seeded random order.",
    ),
    click.option(
        "--global-per-feature",
        is_flag=True,
        help="Prune after every accepted feature.",
    ),
    click.option(
        "--second-chance",
        is_flag=True,
        help="Offer unsampled features to the supervised criteria.",
    ),
    click.option(
        "--folds",
        type=click.IntRange(min=2),
        default=DEFAULT_FOLDS,
        show_default=True,
        help="Cross-validation folds.",
    ),
    click.option(
        "--per-fold-selection",
        is_flag=True,
        help="Re-run selection inside every training fold.",
    ),
)


def _kernel(opts: dict) -> KernelSpec:
    return KernelSpec(opts["kernel"], opts["gamma"], opts["kernel_scale"])


def _pipeline_config(mode: str, seed: int, opts: dict) -> PipelineConfig:
    return PipelineConfig(
        mode=mode,
        kernel=_kernel(opts),
        k_max=opts["k_max"],
        alpha=opts["alpha"],
        epsilon=opts["epsilon"],
        elasticnet=ElasticNetConfig(
            lam=opts["lam"],
            l1_ratio=opts["l1_ratio"],
            prune_threshold=opts["prune_threshold"],
        ),
        group_size=opts["group_size"],
        seed=seed,
        shuffle=opts["shuffle"],
        max_selected=opts["max_selected"],
        anchor_limit=opts["anchor_limit"],
        scatter_variant=opts["scatter"],
        t_sign=opts["t_sign"],
        t_reference=opts["t_reference"],
        global_per_feature=opts["global_per_feature"],
        second_chance=opts["second_chance"],
    )


def _load(path: Path, label_column: str, no_labels: bool) -> Dataset:
    try:
        return load_csv(path, None if no_labels else label_column)
    except DataError as e:
        raise click.ClickException(str(e)) from e


def _stem(report: SelectionReport) -> str:
    return f"{report.dataset}_{report.mode}_seed{report.seed}"


def _write_report(report: SelectionReport, output_dir: Path) -> Path:
    path = report.save(output_dir / f"{_stem(report)}.json")
    features = output_dir / f"{_stem(report)}_features.txt"
    pairs = zip(report.selected, report.feature_names)
    features.write_text("".join(f"{i}\t{name}\n" for i, name in pairs))
    append_results(output_dir / RESULTS_FILE, [report])
    return path


def _summary(report: SelectionReport) -> str:
    if report.accuracy is None:
        return f"{report.dataset} [{report.mode}]: {report.n_selected} features, not scored"
    return (
        f"{report.dataset} [{report.mode}]: {report.n_selected} features, "
        f"accuracy {report.accuracy:.2f}, log-loss {report.log_loss:.4f}, "
        f"3-NN accuracy {report.knn_accuracy:.2f}"
    )


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.option(
    "-v",
    "--verbose",
    count=True,
    help="-v for progress, -vv for per-test detail.",
)
def cli(verbose: int) -> None:
    """Online feature selection with DPP sampling over a feature stream."""
    setup_logging(verbose)


@cli.command()
@click.option(
    "--dataset",
    required=True,
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    help="Headed CSV file.",
)
@dataset_options
@click.option(
    "--mode",
    type=click.Choice([m.value for m in Mode]),
    default=Mode.SUPERVISED.value,
    show_default=True,
    help="Local criteria to apply.",
)
@pipeline_options
@output_options
@click.option(
    "--log-iterations",
    is_flag=True,
    help="Stream the iteration log as JSON lines.",
)
@click.option(
    "--checkpoint",
    type=click.Path(dir_okay=False, path_type=Path),
    default=None,
    help="Write the final pipeline state here.",
)
def select(
    dataset, label_column, no_labels, mode, output_dir, seed, log_iterations, checkpoint, **opts
):
    """Run the selection pipeline on one dataset and write its report."""
    d = _load(dataset, label_column, no_labels)
    try:
        cfg = _pipeline_config(mode, seed, opts)
    except ValueError as e:
        raise click.UsageError(str(e)) from e
    output_dir.mkdir(parents=True, exist_ok=True)
    sink = None
    if log_iterations:
        sink = jsonl_sink(output_dir / f"{d.name}_{mode}_seed{seed}_iterations.jsonl")
    try:
        state, report = run(d, cfg, opts["folds"], sink, opts["per_fold_selection"])
    except (PipelineError, ValueError) as e:
        raise click.ClickException(str(e)) from e
    if checkpoint is not None:
        save_checkpoint(state, checkpoint)
    path = _write_report(report, output_dir)
    click.echo(_summary(report))
    click.echo(f"Report written to {path}")


@cli.command(name="evaluate")
@click.option(
    "--dataset",
    required=True,
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    help="Headed CSV file.",
)
@dataset_options
@click.option("--features", default=None, help="Comma-separated feature indices.")
@click.option(
    "--report",
    "report_path",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    default=None,
    help="Score the selection of an earlier report.",
)
@click.option(
    "--folds",
    type=click.IntRange(min=2),
    default=DEFAULT_FOLDS,
    show_default=True,
    help="Cross-validation folds.",
)
@output_options
def evaluate_cmd(
    dataset, label_column, no_labels, features, report_path, folds, output_dir, seed
):
    """Score an explicit feature subset by cross-validation."""
    if (features is None) == (report_path is None):
        raise click.UsageError("Give exactly one of --features and --report.")
    d = _load(dataset, label_column, no_labels)
    if report_path is not None:
        selected, mode = SelectionReport.load(report_path).selected, "report"
    else:
        try:
            selected = tuple(int(tok) for tok in features.split(",") if tok.strip())
        except ValueError as e:
            raise click.UsageError(f"--features takes comma-separated integers: {e}") from e
        mode = "custom"
    try:
        report = evaluate(d, selected, folds, seed, mode=mode)
    except ValueError as e:
        raise click.ClickException(str(e)) from e
    output_dir.mkdir(parents=True, exist_ok=True)
    click.echo(_summary(report))
    click.echo(f"Report written to {report.save(output_dir / f'{_stem(report)}.json')}")


class BenchCell(NamedTuple):
    path: Path
    label_column: str
    mode: str
    config: dict
    folds: int


class CellResult(NamedTuple):
    path: Path
    mode: str
    report: dict | None
    error: str | None


def read_manifest(path: Path) -> list[tuple[Path, str]]:
    """One dataset per line: a path (relative to the manifest) and a label
    column. Blank lines and lines starting with # are skipped."""
    entries = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise click.UsageError(
                f"{path}:{lineno}: expected 'path label_column', got {line!r}."
            )
        entries.append(((path.parent / parts[0]).resolve(), parts[1]))
    return entries


def run_cell(cell: BenchCell) -> CellResult:
    try:
        d = load_csv(cell.path, cell.label_column)
        _, report = run(d, PipelineConfig.from_dict(cell.config), cell.folds)
    except (DataError, PipelineError, ValueError) as e:
        return CellResult(cell.path, cell.mode, None, str(e))
    return CellResult(cell.path, cell.mode, report.to_dict(), None)


@cli.command()
@click.option(
    "--manifest",
    required=True,
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    help="Dataset manifest file.",
)
@pipeline_options
@output_options
@click.option(
    "--workers",
    type=click.IntRange(min=1),
    default=1,
    show_default=True,
    help="Grid cells run in parallel.",
)
def bench(manifest, output_dir, seed, workers, **opts):
    """Run every DOFS mode on every dataset of a manifest."""
    cells = [
        BenchCell(
            path, label, mode.value, _pipeline_config(mode, seed, opts).to_dict(), opts["folds"]
        )
        for path, label in read_manifest(manifest)
        for mode in BENCH_MODES
    ]
    if workers > 1:
        with mp.Pool(processes=min(workers, WORKERS)) as pool:
            results = pool.map(run_cell, cells)
    else:
        results = [run_cell(c) for c in cells]

    output_dir.mkdir(parents=True, exist_ok=True)
    reports, failures = [], []
    for result in results:
        if result.error is not None:
            failures.append(result)
            click.echo(
                f"FAILED {result.path.name} [{result.mode}]: {result.error}", err=True
            )
            continue
        report = SelectionReport.from_dict(result.report)
        reports.append(report)
        report.save(output_dir / f"{_stem(report)}.json")
        click.echo(f"ok     {_summary(report)}")
    if reports:
        append_results(output_dir / RESULTS_FILE, reports)
        click.echo(compare_runs(reports).to_text())
    if failures:
        raise click.ClickException(f"{len(failures)} of {len(cells)} cells failed.")


@cli.command(name="sample-dpp")
@click.option(
    "--dataset",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    default=None,
    help="Sample over the columns of this CSV.",
)
@dataset_options
@click.option(
    "--kernel-matrix",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    default=None,
    help="Sample from this L matrix instead.",
)
@kernel_options
@click.option(
    "--n-samples",
    type=click.IntRange(min=1),
    default=10,
    show_default=True,
    help="Number of samples.",
)
@click.option(
    "--summary",
    is_flag=True,
    help="Print subset frequencies instead of every sample.",
)
@click.option(
    "--dump-kernels",
    "dump_dir",
    type=click.Path(file_okay=False, path_type=Path),
    default=None,
    help="Write L.csv and K.csv to this directory.",
)
@click.option(
    "--workers",
    type=click.IntRange(min=1),
    default=1,
    show_default=True,
    help="Processes drawing samples.",
)
@click.option(
    "--seed",
    default=0,
    show_default=True,
    type=int,
    help="Seed for all randomness.",
)
def sample_dpp(
    dataset,
    label_column,
    no_labels,
    kernel_matrix,
    n_samples,
    summary,
    dump_dir,
    workers,
    seed,
    **opts,
):
    """Draw samples from the DPP over a dataset's features or a given L."""
    if (dataset is None) == (kernel_matrix is None):
        raise click.UsageError("Give exactly one of --dataset and --kernel-matrix.")
    try:
        if kernel_matrix is not None:
            ensemble = load_kernel_matrix(kernel_matrix)
        else:
            d = _load(dataset, label_column, no_labels)
            ensemble = build_similarity(d.values, _kernel(opts))
    except (KernelError, ValueError) as e:
        raise click.ClickException(str(e)) from e
    if opts["k_max"] is not None and opts["k_max"] > ensemble.size:
        raise click.UsageError(f"--k-max cannot exceed the {ensemble.size} items.")
    if dump_dir is not None:
        for path in dump_kernels(ensemble, dump_dir):
            logger.info("Wrote %s", path)
    samples = sample_many(ensemble, n_samples, seed, opts["k_max"], workers)
    if summary:
        counts = Counter(s.items for s in samples)
        for items, count in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])):
            click.echo(f"{list(items)}\t{count / n_samples:.6f}\t{count}")
    else:
        for s in samples:
            click.echo(f"{list(s.items)}\t{s.log_prob:.6f}")


@cli.command()
@click.option(
    "--output",
    required=True,
    type=click.Path(dir_okay=False, path_type=Path),
    help="CSV file to write.",
)
@click.option(
    "--n",
    "n_instances",
    type=click.IntRange(min=4),
    default=200,
    show_default=True,
    help="Instances.",
)
@click.option(
    "--informative",
    type=click.IntRange(min=1),
    default=5,
    show_default=True,
    help="Label-dependent features.",
)
@click.option(
    "--noise",
    type=click.IntRange(min=0),
    default=95,
    show_default=True,
    help="Label-independent features.",
)
@click.option(
    "--shift",
    type=click.FloatRange(min=1.0),
    default=1.5,
    show_default=True,
    help="Half the distance between class means.",
)
@click.option(
    "--seed",
    default=0,
    show_default=True,
    type=int,
    help="Seed for all randomness.",
)
def synth(output, n_instances, informative, noise, shift, seed):
    """Write a synthetic binary dataset with known informative features."""
    d = make_synthetic(n_instances, informative, noise, seed, shift)
    output.parent.mkdir(parents=True, exist_ok=True)
    d.to_csv(output)
    click.echo(f"Wrote {d.n} x {d.n_features} dataset to {output}")
