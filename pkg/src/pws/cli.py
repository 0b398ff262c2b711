"""Command-line entry points.

Exit codes: 0 success, 2 validation/config error, 3 stage failure (run
directory stays resumable), 4 backend exhaustion.
"""

from __future__ import annotations

import json
import logging
import os
import sys
from pathlib import Path

import click

from . import analysis, pipeline
from .data import load_dataset, read_vote_matrix
from .errors import BackendError, StageError, ValidationError

EXIT_VALIDATION = 2
EXIT_STAGE = 3
EXIT_BACKEND = 4


def _configure_logging():
    level = os.environ.get("PWS_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))


def _load_config(config_path: str, **overrides) -> pipeline.RunConfig:
    cache_override = os.environ.get("PWS_CACHE_DIR")
    if cache_override and "cache_dir" not in overrides:
        overrides["cache_dir"] = Path(cache_override)
    return pipeline.RunConfig.from_toml(config_path, **overrides)


def _run_guarded(fn):
    try:
        return fn()
    except ValidationError as e:
        click.echo(f"validation error: {e}", err=True)
        sys.exit(EXIT_VALIDATION)
    except BackendError as e:
        click.echo(f"backend error: {e}", err=True)
        sys.exit(EXIT_BACKEND)
    except StageError as e:
        if isinstance(e.__cause__, BackendError):
            click.echo(f"backend error: {e}", err=True)
            sys.exit(EXIT_BACKEND)
        if isinstance(e.__cause__, ValidationError):
            click.echo(f"validation error: {e}", err=True)
            sys.exit(EXIT_VALIDATION)
        click.echo(f"stage error: {e}", err=True)
        sys.exit(EXIT_STAGE)


@click.group()
def main():
    """Prompted weak supervision pipeline."""
    _configure_logging()


config_option = click.option(
    "--config", "config_path", required=True, type=click.Path(exists=True)
)
cache_option = click.option("--cache-dir", default=None, type=click.Path())


def _overrides(cache_dir, seed_list=None, label_model=None):
    overrides = {}
    if cache_dir:
        overrides["cache_dir"] = Path(cache_dir)
    if seed_list:
        overrides["seeds"] = tuple(int(s) for s in seed_list.split(","))
    if label_model:
        overrides["label_model"] = label_model
    return overrides


@main.command()
@config_option
def validate(config_path):
    """Check dataset, suite, and backend wiring without querying."""

    def run():
        config = _load_config(config_path)
        dataset, suite = pipeline.validate_config(config)
        sizes = {name: len(examples) for name, examples in dataset.splits.items()}
        click.echo(
            f"ok: {len(suite.lfs)} labeling functions over splits {sizes}"
        )

    _run_guarded(run)


def _stage_command(name: str, stop_after: str, help_text: str):
    @main.command(name=name, help=help_text)
    @config_option
    @cache_option
    @click.option("--seed-list", default=None)
    @click.option("--label-model", type=click.Choice(list(pipeline.LABEL_MODELS)), default=None)
    def command(config_path, cache_dir, seed_list, label_model):
        def run():
            config = _load_config(
                config_path, **_overrides(cache_dir, seed_list, label_model)
            )
            record = pipeline.run_pipeline(config, stop_after=stop_after)
            click.echo(f"run {record.run_id}: {stop_after} complete")

        _run_guarded(run)

    return command


_stage_command("query", "query", "Apply the suite to the query split, producing votes.")
_stage_command("calibrate", "calibrate", "Estimate content-free calibration weights.")
_stage_command("label", "label", "Denoise votes into soft labels.")
_stage_command("train", "train", "Train end models, one per seed.")
_stage_command("eval", "eval", "Evaluate trained models on the gold split.")


@main.command()
@config_option
@cache_option
@click.option("--seed-list", default=None)
@click.option("--label-model", type=click.Choice(list(pipeline.LABEL_MODELS)), default=None)
def run(config_path, cache_dir, seed_list, label_model):
    """Run the full pipeline, resuming any incomplete stages."""

    def go():
        config = _load_config(
            config_path, **_overrides(cache_dir, seed_list, label_model)
        )
        run_dir = Path(config.out_root) / config.run_id()
        already = pipeline.RunRecord.load_or_create(config.run_id(), run_dir)
        if run_dir.exists() and already.is_complete():
            click.echo(f"run {config.run_id()}: up to date")
            return
        record = pipeline.run_pipeline(config)
        click.echo(f"run {record.run_id}: complete -> {record.directory}")

    _run_guarded(go)


@main.command()
@click.argument("kind", type=click.Choice(["stats", "diversity", "calibration"]))
@click.option("--matrix", "matrix_path", required=True, type=click.Path(exists=True))
@click.option("--cal-matrix", "cal_matrix_path", default=None, type=click.Path(exists=True))
@click.option("--dataset", "dataset_path", required=True, type=click.Path(exists=True))
@click.option("--split", default="train")
@click.option("--out", "out_dir", required=True, type=click.Path())
def report(kind, matrix_path, cal_matrix_path, dataset_path, split, out_dir):
    """Write analytics for an existing vote matrix."""

    def go():
        import numpy as np

        from . import pngplot

        dataset = load_dataset(dataset_path)
        matrix = read_vote_matrix(matrix_path)
        gold = dataset.gold_labels(split)
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        if kind == "stats":
            stats = analysis.lf_stats(matrix, gold)
            pipeline.write_stats_report(stats, out, accuracy_note=True)
            click.echo(f"wrote {out / 'lf_stats.csv'}")
        elif kind == "diversity":
            stats = analysis.lf_stats(matrix, gold)
            order = analysis.sort_by_polarity(stats)
            names = [matrix.lf_names[i] for i in order]
            for measure in analysis.MEASURES:
                grid = analysis.diversity_matrix(matrix, gold, measure)
                display = grid[np.ix_(order, order)]
                pipeline._write_matrix_csv(
                    out / f"diversity_{measure}.csv", names, display
                )
                pngplot.heatmap_png(display, out / f"diversity_{measure}.png")
            click.echo(f"wrote diversity reports under {out}")
        else:
            if not cal_matrix_path:
                raise ValidationError("calibration report needs --cal-matrix")
            deltas = analysis.calibration_delta_report(
                matrix, read_vote_matrix(cal_matrix_path), gold
            )
            pipeline.write_delta_report(deltas, out)
            click.echo(f"wrote {out / 'calibration_deltas.csv'}")

    _run_guarded(go)


@main.command()
@click.option("--zero-shot", "zs_path", required=True, type=click.Path(exists=True))
@click.option("--prompted", "pws_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", default=None, type=click.Path())
def compare(zs_path, pws_path, out_path):
    """Run two configs and print a side-by-side metric table."""

    def go():
        table = pipeline.compare(
            pipeline.RunConfig.from_toml(zs_path),
            pipeline.RunConfig.from_toml(pws_path),
        )
        click.echo(pipeline.render_comparison(table))
        if out_path:
            Path(out_path).write_text(json.dumps(table, indent=2, sort_keys=True) + "\n")

    _run_guarded(go)


@main.command()
@config_option
@click.option("--host", default="127.0.0.1")
@click.option("--port", default=8765, type=int)
@click.option("--assets", default=None, type=click.Path())
def serve(config_path, host, port, assets):
    """Serve the console API (and static console assets, if built)."""

    def go():
        from .service import ServiceConfig, serve_forever

        config = _load_config(config_path)
        service_config = ServiceConfig.from_run_config(
            config, assets_dir=Path(assets) if assets else None
        )
        serve_forever(service_config, host=host, port=port)

    _run_guarded(go)


@main.command("synth-fixture")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--train", "n_train", default=2400, type=int)
@click.option("--valid", "n_valid", default=240, type=int)
@click.option("--test", "n_test", default=600, type=int)
@click.option("--seed", default=None, type=int)
def synth_fixture(out_dir, n_train, n_valid, n_test, seed):
    """Materialize the synthetic spam fixture (dataset, rulebook, suites)."""
    from .fixtures import synth

    kwargs = {}
    if seed is not None:
        kwargs["seed"] = seed
    paths = synth.write_fixture(out_dir, n_train, n_valid, n_test, **kwargs)
    for name, path in paths.items():
        click.echo(f"{name}: {path}")


if __name__ == "__main__":
    main()
