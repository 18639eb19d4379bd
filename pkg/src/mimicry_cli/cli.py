"""Command-Line Interface using Click.

Main CLI commands for the emotional mimicry intensity toolkit:
synthesize data, train a branch, predict, evaluate, fuse and compare reports.
"""

import sys
from pathlib import Path

import click
from rich.console import Console
from rich.markup import escape

from mimicry_cli.models.config import RunConfig
from mimicry_cli.run_logger import DEFAULT_LOG_FILE, configure_run_logging, get_logger

console = Console()
logger = get_logger(__name__)

LOG_LEVELS = ("debug", "info", "warning", "error")


def _fail(command: str, error: Exception) -> None:
    logger.error("Command failed", command=command, error_type=type(error).__name__, error=str(error))
    console.print(f"[red]✗ {type(error).__name__}: {escape(str(error))}[/red]")
    sys.exit(1)


def _start(command: str, **fields) -> RunConfig:
    run = RunConfig(command=command, **fields)
    logger.info("Command started", **run.model_dump(mode="json", exclude_none=True))
    return run


def _parse_weights(_ctx: click.Context, _param: click.Parameter, value: str | None) -> tuple[float, float] | None:
    if value is None:
        return None
    try:
        w_v, w_a = (float(part) for part in value.split(","))
    except ValueError as e:
        raise click.BadParameter("expected two comma-separated numbers, e.g. 0.4,0.6") from e
    return w_v, w_a


manifest_option = click.option(
    "--manifest",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    required=True,
    help="Manifest CSV indexing the samples",
)
config_option = click.option(
    "--config",
    "config_path",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    help="TOML config with [model] and [train] sections",
)
seed_option = click.option("--seed", type=click.IntRange(min=0), help="Seed for initialization and shuffling")
split_option = click.option(
    "--split",
    type=click.Choice(["train", "validation", "test"]),
    default="test",
    show_default=True,
    help="Manifest split",
)


@click.group()
@click.version_option(package_name="mimicry-intensity-cli")
@click.option(
    "--log-file",
    type=click.Path(dir_okay=False, path_type=Path),
    default=DEFAULT_LOG_FILE,
    show_default=True,
    help="JSON-lines run log",
)
@click.option(
    "--log-level",
    type=click.Choice(LOG_LEVELS),
    default="info",
    show_default=True,
    help="Minimum level written to the run log",
)
def main(log_file: Path, log_level: str):
    """Emotional mimicry intensity estimation.

    Per-modality regression of six emotion intensities from pre-extracted
    visual (ResNet + action unit) and audio (Wav2Vec2) feature sequences,
    with late fusion of the two branches.

    \b
    Examples:
        # Synthetic desk-scale dataset
        mimicry-cli synth --seed 7 --out data/

        # Train the visual branch
        mimicry-cli train --modality visual --manifest data/manifest.csv \\
            --config configs/desk.toml --out runs/visual

        # Predict, evaluate, fuse
        mimicry-cli predict --checkpoint runs/visual/best.ckpt \\
            --manifest data/manifest.csv --split test --out runs/visual/test.csv
        mimicry-cli eval --predictions runs/visual/test.csv \\
            --manifest data/manifest.csv --split test --out runs/visual
        mimicry-cli fuse --visual runs/visual/test.csv --audio runs/audio/test.csv \\
            --out runs/fused/test.csv
    """
    configure_run_logging(log_file, log_level)


@main.command()
@click.option(
    "--train", "n_train", type=click.IntRange(min=0), default=64, show_default=True, help="Train samples"
)
@click.option(
    "--validation",
    "n_validation",
    type=click.IntRange(min=0),
    default=32,
    show_default=True,
    help="Validation samples",
)
@click.option("--test", "n_test", type=click.IntRange(min=0), default=32, show_default=True, help="Test samples")
@click.option("--seed", type=click.IntRange(min=0), default=0, show_default=True, help="Generator seed")
@click.option(
    "--signal",
    type=click.FloatRange(0.0, 1.0),
    default=1.0,
    show_default=True,
    help="Planted signal strength (0: labels independent of features)",
)
@click.option("--visual-len", type=(int, int), default=(16, 48), show_default=True, help="Raw frame range")
@click.option("--audio-len", type=(int, int), default=(16, 48), show_default=True, help="Raw window range")
@click.option(
    "--out",
    "out_dir",
    type=click.Path(file_okay=False, path_type=Path),
    required=True,
    help="Directory for the manifest and feature files",
)
def synth(
    n_train: int,
    n_validation: int,
    n_test: int,
    seed: int,
    signal: float,
    visual_len: tuple[int, int],
    audio_len: tuple[int, int],
    out_dir: Path,
):
    """Generate a synthetic dataset with a planted signal.

    \b
    Examples:
        mimicry-cli synth --train 64 --validation 32 --test 32 --seed 7 --out data/
        mimicry-cli synth --signal 0 --out null-data/
    """
    from mimicry_cli.output_formatter import counts_table
    from mimicry_cli.synthetic import MANIFEST_NAME, SyntheticSpec, generate_synthetic_dataset

    try:
        _start("synth", out_dir=out_dir, seed=seed)
        spec = SyntheticSpec(
            counts={"train": n_train, "validation": n_validation, "test": n_test},
            seed=seed,
            signal_strength=signal,
            visual_len_range=visual_len,
            audio_len_range=audio_len,
        )
        console.print("[cyan]Writing synthetic dataset...[/cyan]")
        manifest = generate_synthetic_dataset(spec, out_dir)
    except Exception as e:
        _fail("synth", e)
        return

    console.print(counts_table(manifest.counts()))
    console.print(f"[green]✓ Manifest written to: {out_dir / MANIFEST_NAME}[/green]")


@main.command()
@click.option("--modality", type=click.Choice(["visual", "audio"]), required=True, help="Branch to train")
@manifest_option
@config_option
@click.option("--set", "overrides", multiple=True, metavar="SECTION.KEY=VALUE", help="Config override (repeatable)")
@seed_option
@click.option("--resume", type=click.Path(exists=True, dir_okay=False, path_type=Path), help="Continue from a checkpoint")
@click.option(
    "--out",
    "out_dir",
    type=click.Path(file_okay=False, path_type=Path),
    required=True,
    help="Directory for checkpoints, epoch log and validation report",
)
def train(
    modality: str,
    manifest: Path,
    config_path: Path | None,
    overrides: tuple[str, ...],
    seed: int | None,
    resume: Path | None,
    out_dir: Path,
):
    """Train one branch; writes best.ckpt, last.ckpt, epochs.csv and a validation report.

    \b
    Examples:
        mimicry-cli train --modality audio --manifest data/manifest.csv \\
            --config configs/desk.toml --out runs/audio
        mimicry-cli train --modality visual --manifest data/manifest.csv \\
            --set model.visual_channels='["aus"]' --out runs/visual-aus
    """
    from mimicry_cli.checkpoint import load_checkpoint
    from mimicry_cli.config_loader import load_run_config
    from mimicry_cli.dataset import load_manifest
    from mimicry_cli.model import build_branch
    from mimicry_cli.output_formatter import print_report, write_eval_report
    from mimicry_cli.trainer import train_branch

    try:
        run = _start(
            "train",
            manifest_path=manifest,
            config_path=config_path,
            out_dir=out_dir,
            seed=seed,
            overrides=overrides,
        )
        config = load_run_config(run)
        data = load_manifest(run.manifest_path)
        model = build_branch(config.model, modality)  # type: ignore[arg-type]
        console.print(
            f"[cyan]{modality} branch: {model.parameter_count()} parameters, "
            f"{len(model.blocks)} transformer block(s), "
            f"receptive field {model.tcn.receptive_field}[/cyan]"
        )
        checkpoint = load_checkpoint(resume) if resume is not None else None
        console.print("[cyan]Training...[/cyan]")
        result = train_branch(model, data, config.train, out_dir=run.out_dir, resume=checkpoint)
        write_eval_report(result.best_report, run.out_dir, stem="validation_report")
    except Exception as e:
        _fail("train", e)
        return

    print_report(result.best_report, title=f"Validation ({modality}, best epoch {result.best.best_epoch})")
    console.print(
        f"[green]✓ Trained {len(result.history)} epoch(s), stopped by {result.stop_reason}; "
        f"checkpoints in {out_dir}[/green]"
    )


@main.command()
@click.option(
    "--checkpoint",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    required=True,
    help="Trained branch checkpoint (best.ckpt or last.ckpt)",
)
@manifest_option
@split_option
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), required=True, help="Prediction CSV")
def predict(checkpoint: Path, manifest: Path, split: str, out: Path):
    """Write one prediction per sample of a split.

    \b
    Examples:
        mimicry-cli predict --checkpoint runs/audio/best.ckpt \\
            --manifest data/manifest.csv --split test --out runs/audio/test.csv
    """
    from mimicry_cli.checkpoint import load_checkpoint, restore_branch
    from mimicry_cli.dataset import load_manifest
    from mimicry_cli.models.records import PredictionRecord
    from mimicry_cli.output_formatter import write_predictions
    from mimicry_cli.trainer import predict_split

    try:
        _start("predict", manifest_path=manifest)
        state = load_checkpoint(checkpoint)
        model = restore_branch(state)
        data = load_manifest(manifest)
        predictions = predict_split(model, data, split, state.train.batch_size)
        records = [
            PredictionRecord(sample_id=sample_id, source=model.modality, values=tuple(float(v) for v in row))
            for sample_id, row in zip(predictions.sample_ids, predictions.values)
        ]
        write_predictions(records, out)
    except Exception as e:
        _fail("predict", e)
        return

    console.print(f"[green]✓ {len(records)} {state.modality} prediction(s) written to: {out}[/green]")


@main.command(name="eval")
@click.option(
    "--predictions",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    required=True,
    help="Prediction CSV to score",
)
@manifest_option
@split_option
@click.option(
    "--out",
    "out_dir",
    type=click.Path(file_okay=False, path_type=Path),
    required=True,
    help="Directory for the report .txt and .csv",
)
@click.option("--name", default="report", show_default=True, help="Report file stem")
def evaluate(predictions: Path, manifest: Path, split: str, out_dir: Path, name: str):
    """Score a prediction file against a split's labels.

    \b
    Examples:
        mimicry-cli eval --predictions runs/fused/test.csv \\
            --manifest data/manifest.csv --split test --out runs/fused
    """
    from mimicry_cli.dataset import load_manifest
    from mimicry_cli.metrics import evaluate_predictions
    from mimicry_cli.output_formatter import print_report, read_predictions, write_eval_report

    try:
        _start("eval", manifest_path=manifest, out_dir=out_dir)
        source, records = read_predictions(predictions)
        data = load_manifest(manifest, check_files=False)
        report = evaluate_predictions(records, data, split)
        text_path, csv_path = write_eval_report(report, out_dir, stem=name)
    except Exception as e:
        _fail("eval", e)
        return

    print_report(report, title=f"{source} predictions on {split}")
    console.print(f"[green]✓ Report written to: {text_path} and {csv_path}[/green]")


@main.command()
@click.option(
    "--visual",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    required=True,
    help="Visual branch prediction CSV",
)
@click.option(
    "--audio",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    required=True,
    help="Audio branch prediction CSV",
)
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), required=True, help="Fused prediction CSV")
@click.option(
    "--weights",
    callback=_parse_weights,
    metavar="W_VISUAL,W_AUDIO",
    help="Weighted fusion instead of the plain mean (weights sum to 1)",
)
def fuse(visual: Path, audio: Path, out: Path, weights: tuple[float, float] | None):
    """Average visual and audio predictions sample by sample.

    \b
    Examples:
        mimicry-cli fuse --visual runs/visual/test.csv --audio runs/audio/test.csv \\
            --out runs/fused/test.csv
        mimicry-cli fuse --visual v.csv --audio a.csv --weights 0.3,0.7 --out f.csv
    """
    from mimicry_cli.fusion import IdSetMismatchError, late_fuse
    from mimicry_cli.output_formatter import read_predictions, write_predictions

    try:
        _start("fuse")
        _, visual_records = read_predictions(visual)
        _, audio_records = read_predictions(audio)
        fused = late_fuse(visual_records, audio_records, weights)
        write_predictions(fused, out)
    except IdSetMismatchError as e:
        console.print(f"[red]✗ Only in {visual}: {', '.join(e.only_first) or '-'}[/red]")
        console.print(f"[red]✗ Only in {audio}: {', '.join(e.only_second) or '-'}[/red]")
        _fail("fuse", e)
        return
    except Exception as e:
        _fail("fuse", e)
        return

    console.print(f"[green]✓ {len(fused)} fused prediction(s) written to: {out}[/green]")


@main.command()
@click.argument("reports", nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path))
def report(reports: tuple[Path, ...]):
    """Compare several evaluation reports side by side.

    \b
    Examples:
        mimicry-cli report runs/visual/report.txt runs/audio/report.txt runs/fused/report.txt
    """
    from mimicry_cli.output_formatter import read_eval_report, report_table

    try:
        _start("report")
        loaded = {}
        for path in reports:
            label = f"{path.parent.name}/{path.stem}" if path.parent.name else path.stem
            loaded[label] = read_eval_report(path)
    except Exception as e:
        _fail("report", e)
        return

    console.print(report_table(loaded, title="Mean Pearson correlation by run"))


if __name__ == "__main__":
    main()
