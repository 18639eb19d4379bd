"""Output Formatter for Predictions, Reports and Epoch Logs.

Text artifacts are written with ``repr`` floats so they read back to the exact
same binary values, which keeps repeated runs byte-identical.

Formats:

    predictions   "# source=<visual|audio|fused>" then CSV
                  sample_id,admiration,...,joy
    report (txt)  key=value lines
    report (csv)  dimension,rho,mse; one row per emotion then a "mean" row
    epoch log     CSV epoch,train_loss,val_mean_rho,lr
"""

import csv
import io
from collections.abc import Iterable, Mapping, Sequence
from pathlib import Path

from pydantic import ValidationError
from rich.console import Console
from rich.table import Table

from mimicry_cli.models.records import (
    EMOTIONS,
    EpochLogRow,
    EvalReport,
    PredictionRecord,
    PredictionSource,
)
from mimicry_cli.run_logger import get_logger

logger = get_logger(__name__)
console = Console()

PREDICTION_COLUMNS: tuple[str, ...] = ("sample_id", *EMOTIONS)
EPOCH_LOG_COLUMNS: tuple[str, ...] = ("epoch", "train_loss", "val_mean_rho", "lr")
REPORT_CSV_COLUMNS: tuple[str, ...] = ("dimension", "rho", "mse")
SOURCE_PREFIX = "# source="


class OutputFormatError(ValueError):
    """Raised when a prediction, report or log file cannot be parsed."""


def _write_text(path: str | Path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        path.write_text(text, encoding="utf-8", newline="")
    except PermissionError as e:
        logger.error("Permission denied writing to file", filepath=str(path), error=str(e))
        raise
    logger.info("Output written to file", filepath=str(path), bytes=len(text))
    return path


def _csv_text(header: Sequence[str], rows: Iterable[Sequence[object]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buffer.getvalue()


# Predictions


def write_predictions(records: Sequence[PredictionRecord], path: str | Path) -> Path:
    """Write one prediction file; every record must share one source."""
    sources = {record.source for record in records}
    if len(sources) > 1:
        raise OutputFormatError(f"Prediction file mixes sources: {sorted(sources)}")
    if not records:
        raise OutputFormatError("Refusing to write an empty prediction file")
    (source,) = sources
    body = _csv_text(
        PREDICTION_COLUMNS,
        ([record.sample_id, *(repr(v) for v in record.values)] for record in records),
    )
    return _write_text(path, f"{SOURCE_PREFIX}{source}\n{body}")


def read_predictions(path: str | Path) -> tuple[PredictionSource, list[PredictionRecord]]:
    """Read a prediction file.

    Returns:
        (source, records in file order)

    Raises:
        OutputFormatError: Missing source line, wrong header or bad values
    """
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith(SOURCE_PREFIX):
        raise OutputFormatError(f"{path}: first line must be '{SOURCE_PREFIX}<modality>'")
    source = lines[0].removeprefix(SOURCE_PREFIX).strip()

    reader = csv.reader(lines[1:])
    header = next(reader, None)
    if tuple(header or ()) != PREDICTION_COLUMNS:
        raise OutputFormatError(f"{path}: header must be {','.join(PREDICTION_COLUMNS)}")
    try:
        records = [
            PredictionRecord(sample_id=row[0], source=source, values=tuple(float(v) for v in row[1:]))
            for row in reader
            if row
        ]
    except (ValidationError, ValueError) as e:
        raise OutputFormatError(f"{path}: invalid prediction row: {e}") from e
    if not records:
        raise OutputFormatError(f"{path}: no predictions")
    return source, records  # type: ignore[return-value]


# Evaluation reports


def format_report_text(report: EvalReport) -> str:
    lines = [f"n_samples={report.n_samples}", f"mean_rho={report.mean_rho!r}"]
    lines += [f"rho.{name}={report.per_dim_rho[name]!r}" for name in EMOTIONS]
    lines += [f"mse.{name}={report.per_dim_mse[name]!r}" for name in EMOTIONS]
    lines.append(f"overall_mse={report.overall_mse!r}")
    lines.append(f"zero_variance_dims={','.join(report.zero_variance_dims)}")
    return "\n".join(lines) + "\n"


def format_report_csv(report: EvalReport) -> str:
    rows: list[list[str]] = [
        [name, repr(report.per_dim_rho[name]), repr(report.per_dim_mse[name])] for name in EMOTIONS
    ]
    rows.append(["mean", repr(report.mean_rho), repr(report.overall_mse)])
    return _csv_text(REPORT_CSV_COLUMNS, rows)


def write_eval_report(report: EvalReport, out_dir: str | Path, stem: str = "report") -> tuple[Path, Path]:
    """Write ``<stem>.txt`` (key=value) and ``<stem>.csv``."""
    out_dir = Path(out_dir)
    text_path = _write_text(out_dir / f"{stem}.txt", format_report_text(report))
    csv_path = _write_text(out_dir / f"{stem}.csv", format_report_csv(report))
    return text_path, csv_path


def read_eval_report(path: str | Path) -> EvalReport:
    """Parse a key=value report file.

    Raises:
        OutputFormatError: Missing keys or invalid values
    """
    path = Path(path)
    fields: dict[str, str] = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise OutputFormatError(f"{path}: malformed line {line!r}")
        fields[key.strip()] = value.strip()
    try:
        dims = fields.get("zero_variance_dims", "")
        return EvalReport(
            per_dim_rho={name: float(fields[f"rho.{name}"]) for name in EMOTIONS},
            mean_rho=float(fields["mean_rho"]),
            per_dim_mse={name: float(fields[f"mse.{name}"]) for name in EMOTIONS},
            overall_mse=float(fields["overall_mse"]),
            n_samples=int(fields["n_samples"]),
            zero_variance_dims=tuple(d for d in dims.split(",") if d),
        )
    except KeyError as e:
        raise OutputFormatError(f"{path}: missing key {e.args[0]!r}") from e
    except (ValidationError, ValueError) as e:
        raise OutputFormatError(f"{path}: invalid report: {e}") from e


# Epoch log


def write_epoch_log(history: Sequence[EpochLogRow], path: str | Path) -> Path:
    rows = ([row.epoch, repr(row.train_loss), repr(row.val_mean_rho), repr(row.lr)] for row in history)
    return _write_text(path, _csv_text(EPOCH_LOG_COLUMNS, rows))


def read_epoch_log(path: str | Path) -> list[EpochLogRow]:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        if tuple(reader.fieldnames or ()) != EPOCH_LOG_COLUMNS:
            raise OutputFormatError(f"{path}: header must be {','.join(EPOCH_LOG_COLUMNS)}")
        try:
            return [
                EpochLogRow(
                    epoch=int(raw["epoch"]),
                    train_loss=float(raw["train_loss"]),
                    val_mean_rho=float(raw["val_mean_rho"]),
                    lr=float(raw["lr"]),
                )
                for raw in reader
            ]
        except (ValidationError, ValueError) as e:
            raise OutputFormatError(f"{path}: invalid epoch row: {e}") from e


# Console tables


def report_table(reports: Mapping[str, EvalReport], title: str = "Evaluation") -> Table:
    """One column per run: per-emotion rho, mean rho and overall MSE."""
    table = Table(title=title)
    table.add_column("dimension", style="cyan")
    for name in reports:
        table.add_column(name, justify="right")
    for emotion in EMOTIONS:
        table.add_row(emotion, *(f"{r.per_dim_rho[emotion]:.4f}" for r in reports.values()))
    table.add_row("mean rho", *(f"[bold]{r.mean_rho:.4f}[/bold]" for r in reports.values()))
    table.add_row("overall mse", *(f"{r.overall_mse:.4f}" for r in reports.values()))
    table.add_row("samples", *(str(r.n_samples) for r in reports.values()))
    return table


def counts_table(counts: Mapping[str, int], title: str = "Samples per split") -> Table:
    table = Table(title=title)
    table.add_column("split", style="cyan")
    table.add_column("samples", justify="right")
    for split, n in counts.items():
        table.add_row(split, str(n))
    table.add_row("[bold]total[/bold]", f"[bold]{sum(counts.values())}[/bold]")
    return table


def print_report(report: EvalReport, title: str = "Evaluation") -> None:
    console.print(report_table({"value": report}, title=title))
    if report.zero_variance_dims:
        console.print(
            f"[yellow]⚠ Zero variance in {', '.join(report.zero_variance_dims)}; rho reported as 0[/yellow]"
        )
