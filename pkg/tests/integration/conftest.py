"""Fixtures for running the CLI end to end inside a temporary directory."""

from collections.abc import Callable

import pytest
from click.testing import CliRunner, Result

from mimicry_cli.cli import main

# Small enough that two epochs take a few seconds on one core
TINY_OVERRIDES = (
    "model.d_model=8",
    "model.num_heads=2",
    "model.tcn_layers=2",
    "model.max_visual_len=8",
    "model.max_audio_len=8",
    "model.ffn_hidden=8",
    "train.batch_size=4",
    "train.max_epochs=2",
)


@pytest.fixture
def tiny() -> list[str]:
    """``--set`` arguments for the tiny two-epoch architecture."""
    return [arg for override in TINY_OVERRIDES for arg in ("--set", override)]


@pytest.fixture
def cli(tmp_path, monkeypatch) -> Callable[..., Result]:
    """Invoke ``mimicry-cli`` with the working directory set to ``tmp_path``."""
    monkeypatch.chdir(tmp_path)
    runner = CliRunner()

    def invoke(*args: object) -> Result:
        return runner.invoke(main, ["--log-file", "run.log", *map(str, args)])

    return invoke


@pytest.fixture
def dataset(cli):
    """8/4/4 synthetic samples under ``data/``."""
    result = cli(
        "synth", "--train", 8, "--validation", 4, "--test", 4, "--seed", 3,
        "--visual-len", 6, 12, "--audio-len", 6, 12, "--out", "data",
    )
    assert result.exit_code == 0, result.output
    return "data/manifest.csv"


@pytest.fixture
def trained(cli, dataset, tiny):
    """Both branches trained for two epochs under ``visual/`` and ``audio/``."""
    for modality in ("visual", "audio"):
        result = cli("train", "--modality", modality, "--manifest", dataset, *tiny, "--out", modality)
        assert result.exit_code == 0, result.output
    return dataset
