"""Unit tests for console tables and report formatting."""

import pytest

from mimicry_cli.models.records import EMOTIONS, EvalReport
from mimicry_cli.output_formatter import (
    counts_table,
    format_report_csv,
    format_report_text,
    print_report,
    report_table,
)

pytestmark = pytest.mark.unit


def make_report(rho=0.5, zero=()):
    return EvalReport(
        per_dim_rho={name: rho for name in EMOTIONS},
        mean_rho=rho,
        per_dim_mse={name: 0.02 for name in EMOTIONS},
        overall_mse=0.02,
        n_samples=8,
        zero_variance_dims=zero,
    )


def test_report_table_has_one_column_per_run():
    table = report_table({"visual": make_report(0.4), "audio": make_report(0.2)})
    assert [column.header for column in table.columns] == ["dimension", "visual", "audio"]
    assert table.row_count == len(EMOTIONS) + 3


def test_counts_table_adds_total_row():
    table = counts_table({"train": 10, "validation": 6, "test": 6})
    assert table.row_count == 4


def test_print_report(capsys):
    print_report(make_report(0.25), title="Validation")
    captured = capsys.readouterr()
    assert "Validation" in captured.out
    assert "0.2500" in captured.out
    assert "Zero variance" not in captured.out


def test_print_report_warns_on_zero_variance(capsys):
    print_report(make_report(0.0, zero=("joy",)))
    assert "Zero variance in joy" in capsys.readouterr().out


def test_text_and_csv_agree_on_mean():
    report = make_report(0.125)
    assert "mean_rho=0.125\n" in format_report_text(report)
    assert format_report_csv(report).endswith("mean,0.125,0.02\n")
