"""Unit tests for the synthetic dataset generator.

The ridge checks fit a closed-form linear model on per-sequence mean
features; they establish that the planted signal is learnable (or absent)
before any neural model is involved.
"""

import numpy as np
import pytest
from pydantic import ValidationError

from mimicry_cli.dataset import SequenceStore, load_manifest
from mimicry_cli.feature_io import FeatureModality
from mimicry_cli.metrics import mean_rho
from mimicry_cli.synthetic import MANIFEST_NAME, SyntheticSpec, generate_synthetic_dataset

pytestmark = pytest.mark.unit


def mean_features(manifest, split):
    store = SequenceStore(manifest)
    rows = manifest.split_rows(split)
    features = np.array(
        [
            np.concatenate([store.get(row, m).values.mean(axis=0) for m in FeatureModality])
            for row in rows
        ],
        dtype=np.float64,
    )
    labels = np.array([row.labels.values for row in rows])
    return features, labels


def ridge_rho(manifest, penalty=1.0):
    x_train, y_train = mean_features(manifest, "train")
    x_test, y_test = mean_features(manifest, "test")
    x_mean, y_mean = x_train.mean(axis=0), y_train.mean(axis=0)
    xc = x_train - x_mean
    # dual form: the feature width exceeds the sample count
    alpha = np.linalg.solve(xc @ xc.T + penalty * np.eye(len(xc)), y_train - y_mean)
    predictions = (x_test - x_mean) @ (xc.T @ alpha) + y_mean
    return mean_rho(y_test, predictions).mean_rho


def test_counts_and_unique_ids(tmp_path):
    spec = SyntheticSpec(counts={"train": 32, "validation": 16, "test": 16}, seed=1)
    manifest = generate_synthetic_dataset(spec, tmp_path)
    assert manifest.counts() == {"train": 32, "validation": 16, "test": 16}
    ids = [row.sample_id for row in manifest.rows]
    assert len(set(ids)) == 64
    assert load_manifest(tmp_path / MANIFEST_NAME).rows == manifest.rows


def test_same_seed_gives_identical_files(tmp_path):
    spec = SyntheticSpec(counts={"train": 4, "validation": 2, "test": 2}, seed=5)
    generate_synthetic_dataset(spec, tmp_path / "a")
    generate_synthetic_dataset(spec, tmp_path / "b")
    files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
    assert files_a == files_b
    assert len(files_a) == 8 * 3 + 1
    for relative in files_a:
        assert (tmp_path / "a" / relative).read_bytes() == (tmp_path / "b" / relative).read_bytes()


def test_different_seed_changes_labels(tmp_path):
    counts = {"train": 4, "validation": 2, "test": 2}
    first = generate_synthetic_dataset(SyntheticSpec(counts=counts, seed=1), tmp_path / "a")
    second = generate_synthetic_dataset(SyntheticSpec(counts=counts, seed=2), tmp_path / "b")
    assert [r.labels for r in first.rows] != [r.labels for r in second.rows]


def test_lengths_respect_ranges(tmp_path):
    spec = SyntheticSpec(
        counts={"train": 10, "validation": 0, "test": 0},
        seed=2,
        visual_len_range=(3, 5),
        audio_len_range=(7, 7),
    )
    manifest = generate_synthetic_dataset(spec, tmp_path)
    store = SequenceStore(manifest)
    for row in manifest.rows:
        resnet = store.get(row, FeatureModality.VISUAL_RESNET)
        aus = store.get(row, FeatureModality.VISUAL_AUS)
        assert 3 <= resnet.length <= 5
        assert resnet.length == aus.length
        assert store.get(row, FeatureModality.AUDIO_W2V).length == 7


def test_labels_lie_in_unit_interval(tmp_path):
    manifest = generate_synthetic_dataset(SyntheticSpec(counts={"train": 20}, seed=3), tmp_path)
    labels = np.array([row.labels.values for row in manifest.rows])
    assert labels.shape == (20, 6)
    assert np.all((labels > 0) & (labels < 1))


def test_planted_signal_is_linearly_recoverable(tmp_path):
    spec = SyntheticSpec(counts={"train": 64, "test": 32}, seed=7, signal_strength=1.0)
    assert ridge_rho(generate_synthetic_dataset(spec, tmp_path)) >= 0.8


def test_null_signal_is_not_recoverable(tmp_path):
    spec = SyntheticSpec(counts={"train": 64, "test": 32}, seed=7, signal_strength=0.0)
    assert abs(ridge_rho(generate_synthetic_dataset(spec, tmp_path))) < 0.3


@pytest.mark.parametrize(
    "overrides",
    [
        {"signal_strength": 1.5},
        {"counts": {"dev": 3}},
        {"counts": {"train": -1}},
        {"visual_len_range": (5, 2)},
        {"audio_len_range": (0, 4)},
    ],
)
def test_invalid_specs_rejected(overrides):
    with pytest.raises(ValidationError):
        SyntheticSpec(**overrides)
