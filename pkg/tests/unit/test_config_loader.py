"""Unit tests for TOML config loading and command-line overrides."""

from pathlib import Path

import pytest
from pydantic import ValidationError

from mimicry_cli.config_loader import ConfigError, load_experiment_config, load_run_config, parse_override
from mimicry_cli.models.config import AUS_DIM, ModelConfig, RunConfig

pytestmark = pytest.mark.unit

CONFIG_DIR = Path(__file__).resolve().parents[2] / "configs"


@pytest.mark.parametrize(
    "override, expected",
    [
        ("train.learning_rate=1e-3", ("train", "learning_rate", 1e-3)),
        ("train.batch_size=16", ("train", "batch_size", 16)),
        ("model.visual_channels=[\"aus\"]", ("model", "visual_channels", ["aus"])),
        ("model.precision=float64", ("model", "precision", "float64")),
        ("model.precision=\"float64\"", ("model", "precision", "float64")),
        (" train.seed = 4 ", ("train", "seed", 4)),
    ],
)
def test_parse_override(override, expected):
    assert parse_override(override) == expected


@pytest.mark.parametrize("override", ["learning_rate=1", "train.lr", "optim.lr=1", "train.=3"])
def test_parse_override_rejects_malformed(override):
    with pytest.raises(ConfigError):
        parse_override(override)


def test_defaults_without_file():
    config = load_experiment_config()
    assert config.model.d_model == 128
    assert config.model.dilations == (1, 2, 4, 8, 16)
    assert config.train.learning_rate == 3e-5
    assert config.train.batch_size == 128


@pytest.mark.parametrize("name", ["desk.toml", "full.toml"])
def test_presets_load(name):
    config = load_experiment_config(CONFIG_DIR / name)
    assert config.model.visual_in_dim == 546
    assert config.train.lr_factor == 0.5


def test_overrides_apply_in_order(tmp_path):
    path = tmp_path / "exp.toml"
    path.write_text("[train]\nbatch_size = 8\n")
    config = load_experiment_config(path, ["train.batch_size=4", "train.batch_size=2"])
    assert config.train.batch_size == 2


def test_seed_sets_both_seeds():
    config = load_experiment_config(overrides=["model.seed=1", "train.seed=2"], seed=9)
    assert (config.model.seed, config.train.seed) == (9, 9)


def test_run_config_supplies_file_overrides_and_seed():
    run = RunConfig(
        command="train",
        config_path=CONFIG_DIR / "desk.toml",
        overrides=("train.patience=3",),
        seed=5,
    )
    config = load_run_config(run)
    assert config == load_experiment_config(CONFIG_DIR / "desk.toml", ["train.patience=3"], seed=5)
    assert config.train.patience == 3
    assert (config.model.seed, config.train.seed) == (5, 5)


def test_channel_override_shrinks_visual_input():
    config = load_experiment_config(overrides=['model.visual_channels=["aus"]'])
    assert config.model.visual_in_dim == AUS_DIM


def test_channel_order_enforced():
    with pytest.raises(ConfigError, match="resnet before aus"):
        load_experiment_config(overrides=['model.visual_channels=["aus", "resnet"]'])


@pytest.mark.parametrize(
    "text, message",
    [
        ("[optim]\nlr = 1\n", "unknown section"),
        ("[train]\nlearning_rte = 1e-3\n", "Invalid configuration"),
        ("[train\nbatch_size = 1\n", "exp.toml"),
        ("model = 3\n", "must be a table"),
        ("[model]\nd_model = 30\nnum_heads = 4\n", "divisible"),
    ],
)
def test_bad_files_raise_config_error(tmp_path, text, message):
    path = tmp_path / "exp.toml"
    path.write_text(text)
    with pytest.raises(ConfigError, match=message):
        load_experiment_config(path)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_experiment_config(tmp_path / "absent.toml")


def test_model_config_is_frozen():
    config = ModelConfig()
    with pytest.raises(ValidationError):
        config.d_model = 4  # type: ignore[misc]
