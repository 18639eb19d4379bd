"""Unit tests for the MSE loss, split inference and the training loop."""

import numpy as np
import pytest

from mimicry_cli import trainer
from mimicry_cli.autodiff import ShapeError, Tape, Tensor
from mimicry_cli.checkpoint import CheckpointError, load_checkpoint, snapshot_parameters
from mimicry_cli.dataset import EmptySplitError, make_batches
from mimicry_cli.model import build_branch
from mimicry_cli.models.config import TrainConfig
from mimicry_cli.optimizer import NonFiniteGradientError, OptimizerState, adam_step
from mimicry_cli.output_formatter import read_epoch_log
from mimicry_cli.trainer import (
    BEST_CHECKPOINT,
    EPOCH_LOG,
    LAST_CHECKPOINT,
    TrainingAbortedError,
    mse_loss,
    predict_split,
    train_branch,
)

pytestmark = pytest.mark.unit


class TestMseLoss:
    def test_zero_at_target(self, float64):
        target = np.random.default_rng(0).uniform(size=(3, 6))
        pred = Tensor(target.copy(), requires_grad=True)
        with Tape() as tape:
            loss = mse_loss(pred, Tensor(target))
        tape.backward(loss)
        assert loss.item() == 0.0
        assert np.array_equal(pred.grad, np.zeros((3, 6)))

    def test_single_deviation(self, float64):
        pred = Tensor([[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]])
        assert mse_loss(pred, Tensor(np.zeros((1, 6)))).item() == pytest.approx(1 / 6, abs=1e-15)

    def test_gradient_is_scaled_difference(self, float64):
        rng = np.random.default_rng(1)
        pred = Tensor(rng.standard_normal((4, 6)), requires_grad=True)
        target = rng.standard_normal((4, 6))
        with Tape() as tape:
            loss = mse_loss(pred, Tensor(target))
        tape.backward(loss)
        assert np.allclose(pred.grad, 2 * (pred.data - target) / 24, rtol=0, atol=1e-15)

    def test_gradient_matches_finite_differences(self, float64, gradcheck):
        rng = np.random.default_rng(2)
        pred = Tensor(rng.standard_normal((2, 6)), requires_grad=True, name="pred")
        target = Tensor(rng.standard_normal((2, 6)))
        gradcheck(lambda: mse_loss(pred, target), [pred], rtol=1e-6, atol=1e-9)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            mse_loss(Tensor(np.zeros((2, 6))), Tensor(np.zeros((3, 6))))

    def test_agrees_with_reported_mse(self, float64):
        from mimicry_cli.metrics import mse

        rng = np.random.default_rng(3)
        y, yhat = rng.uniform(size=(5, 6)), rng.uniform(size=(5, 6))
        _, overall = mse(y, yhat)
        assert mse_loss(Tensor(yhat), Tensor(y)).item() == pytest.approx(overall, abs=1e-9)


def batch_loss(model, batch):
    return mse_loss(model.forward_batch(batch), Tensor(batch.labels, dtype=model.dtype)).item()


def test_small_step_decreases_loss_on_fixed_batch(tiny_model_config, small_dataset):
    """Ten random initializations: one Adam step at lr 1e-6 lowers the batch loss."""
    _, manifest = small_dataset
    batch = make_batches(manifest, "train", 4, seed=0, branches=("visual",), lengths={"visual": 8})[0]
    for seed in range(10):
        model = build_branch(tiny_model_config.model_copy(update={"seed": seed}), "visual")
        registry = model.parameter_registry()
        before = batch_loss(model, batch)
        with Tape() as tape:
            loss = mse_loss(model.forward_batch(batch), Tensor(batch.labels, dtype=model.dtype))
        tape.backward(loss)
        adam_step(registry, {n: p.grad for n, p in registry.items()}, OptimizerState(lr=1e-6))
        assert batch_loss(model, batch) < before


def test_fixed_batch_loss_is_reproducible(desk_model_config, small_dataset):
    _, manifest = small_dataset
    batch = make_batches(manifest, "train", 4, seed=1, branches=("audio",), lengths={"audio": 12})[0]
    first = batch_loss(build_branch(desk_model_config, "audio"), batch)
    second = batch_loss(build_branch(desk_model_config, "audio"), batch)
    assert first == second


def test_predict_split_keeps_manifest_order(desk_model_config, small_dataset):
    _, manifest = small_dataset
    model = build_branch(desk_model_config, "audio")
    predictions = predict_split(model, manifest, "test", batch_size=4)
    assert predictions.sample_ids == tuple(r.sample_id for r in manifest.split_rows("test"))
    assert predictions.values.shape == (6, 6)
    assert predictions.values.dtype == np.float64
    assert np.array_equal(predictions.labels, [r.labels.values for r in manifest.split_rows("test")])


def test_predict_split_independent_of_batch_size(tiny_model_config, small_dataset):
    _, manifest = small_dataset
    model = build_branch(tiny_model_config, "audio")
    whole = predict_split(model, manifest, "validation", batch_size=6).values
    pieces = predict_split(model, manifest, "validation", batch_size=1).values
    assert np.allclose(whole, pieces, rtol=0, atol=1e-12)


class TestTrainBranch:
    def test_writes_artifacts_and_tracks_best(self, desk_model_config, quick_train_config, small_dataset, tmp_path):
        _, manifest = small_dataset
        model = build_branch(desk_model_config, "visual")
        result = train_branch(model, manifest, quick_train_config, out_dir=tmp_path)

        assert [row.epoch for row in result.history] == [1, 2, 3]
        assert result.stop_reason == "max_epochs"
        assert result.best_rho == max(row.val_mean_rho for row in result.history)
        assert result.best_report.mean_rho == result.best_rho
        assert result.history[result.best.best_epoch - 1].val_mean_rho == result.best_rho
        assert result.last.epoch == 3

        assert read_epoch_log(tmp_path / EPOCH_LOG) == result.history
        assert load_checkpoint(tmp_path / BEST_CHECKPOINT).best_epoch == result.best.best_epoch
        assert load_checkpoint(tmp_path / LAST_CHECKPOINT).epoch == 3

    def test_parameters_change_during_training(self, desk_model_config, quick_train_config, small_dataset):
        _, manifest = small_dataset
        model = build_branch(desk_model_config, "audio")
        before = snapshot_parameters(model)
        result = train_branch(model, manifest, quick_train_config)
        after = snapshot_parameters(model)
        assert any(not np.array_equal(before[n], after[n]) for n in before)
        assert all(np.array_equal(after[n], result.last.params[n]) for n in after)

    def test_zero_learning_rate_freezes_parameters(self, desk_model_config, small_dataset):
        _, manifest = small_dataset
        model = build_branch(desk_model_config, "audio")
        before = snapshot_parameters(model)
        config = TrainConfig(learning_rate=0.0, batch_size=4, max_epochs=3)
        result = train_branch(model, manifest, config)
        assert len(result.history) == 3
        after = snapshot_parameters(model)
        assert all(np.array_equal(before[n], after[n]) for n in before)

    def test_stops_once_learning_rate_falls_below_floor(self, desk_model_config, small_dataset):
        _, manifest = small_dataset
        config = TrainConfig(
            learning_rate=1e-30, lr_floor=1e-31, patience=1, batch_size=5, max_epochs=40
        )
        result = train_branch(build_branch(desk_model_config, "audio"), manifest, config)
        assert result.stop_reason == "lr_floor"
        assert len(result.history) < 40
        lrs = [row.lr for row in result.history]
        assert all(later <= earlier for earlier, later in zip(lrs, lrs[1:]))

    def test_rerun_is_identical(self, desk_model_config, quick_train_config, small_dataset):
        _, manifest = small_dataset
        first = train_branch(build_branch(desk_model_config, "audio"), manifest, quick_train_config)
        second = train_branch(build_branch(desk_model_config, "audio"), manifest, quick_train_config)
        assert first.history == second.history
        assert all(np.array_equal(first.last.params[n], second.last.params[n]) for n in first.last.params)

    def test_resume_matches_uninterrupted_run(self, desk_model_config, small_dataset, tmp_path):
        _, manifest = small_dataset
        full_config = TrainConfig(learning_rate=1e-3, batch_size=4, max_epochs=4, seed=2)
        full = train_branch(build_branch(desk_model_config, "visual"), manifest, full_config, out_dir=tmp_path / "a")

        half_config = full_config.model_copy(update={"max_epochs": 2})
        train_branch(build_branch(desk_model_config, "visual"), manifest, half_config, out_dir=tmp_path / "b")
        checkpoint = load_checkpoint(tmp_path / "b" / LAST_CHECKPOINT)
        resumed = train_branch(
            build_branch(desk_model_config, "visual"),
            manifest,
            full_config,
            out_dir=tmp_path / "b",
            resume=checkpoint,
        )

        assert resumed.history == full.history
        assert resumed.best_rho == full.best_rho
        assert resumed.best.best_epoch == full.best.best_epoch
        assert all(np.array_equal(resumed.last.params[n], full.last.params[n]) for n in full.last.params)
        assert (tmp_path / "a" / EPOCH_LOG).read_bytes() == (tmp_path / "b" / EPOCH_LOG).read_bytes()

    def test_resume_after_first_epoch_without_out_dir(self, desk_model_config, small_dataset):
        _, manifest = small_dataset
        full_config = TrainConfig(learning_rate=1e-3, batch_size=4, max_epochs=4, seed=2)
        full = train_branch(build_branch(desk_model_config, "visual"), manifest, full_config)

        first = train_branch(
            build_branch(desk_model_config, "visual"), manifest, full_config.model_copy(update={"max_epochs": 1})
        )
        resumed = train_branch(build_branch(desk_model_config, "visual"), manifest, full_config, resume=first.last)

        assert resumed.history == full.history
        assert resumed.best.best_epoch == full.best.best_epoch
        assert resumed.best_report == full.best_report
        assert all(np.array_equal(resumed.best.params[n], full.best.params[n]) for n in full.best.params)

    def test_resume_without_best_checkpoint_is_refused(self, desk_model_config, small_dataset, tmp_path):
        _, manifest = small_dataset
        config = TrainConfig(learning_rate=1e-3, batch_size=4, max_epochs=2, seed=2)
        half = train_branch(build_branch(desk_model_config, "visual"), manifest, config)
        stale = half.last.model_copy(update={"best_epoch": 1})
        longer = config.model_copy(update={"max_epochs": 4})
        with pytest.raises(CheckpointError, match="best.ckpt"):
            train_branch(build_branch(desk_model_config, "visual"), manifest, longer, resume=stale)
        with pytest.raises(CheckpointError, match="best.ckpt"):
            train_branch(build_branch(desk_model_config, "visual"), manifest, longer, out_dir=tmp_path, resume=stale)

    def test_resume_rejects_other_branch(self, desk_model_config, quick_train_config, small_dataset):
        _, manifest = small_dataset
        audio = train_branch(build_branch(desk_model_config, "audio"), manifest, quick_train_config)
        with pytest.raises(CheckpointError):
            train_branch(build_branch(desk_model_config, "visual"), manifest, quick_train_config, resume=audio.last)

    def test_needs_two_validation_samples(self, desk_model_config, quick_train_config, small_dataset):
        _, manifest = small_dataset
        rows = manifest.split_rows("train") + manifest.split_rows("validation")[:1]
        with pytest.raises(EmptySplitError):
            train_branch(
                build_branch(desk_model_config, "audio"),
                manifest.model_copy(update={"rows": rows}),
                quick_train_config,
            )

    def test_nan_loss_aborts_with_last_good_checkpoint(
        self, desk_model_config, quick_train_config, small_dataset, monkeypatch
    ):
        _, manifest = small_dataset
        real = trainer.mse_loss
        calls = []

        def poisoned(pred, target):
            calls.append(1)
            # 10 train samples in batches of 4: three batches per epoch
            if len(calls) > 3:
                return Tensor(np.array(np.nan))
            return real(pred, target)

        monkeypatch.setattr(trainer, "mse_loss", poisoned)
        with pytest.raises(TrainingAbortedError) as exc_info:
            train_branch(build_branch(desk_model_config, "audio"), manifest, quick_train_config)
        assert exc_info.value.last_good is not None
        assert exc_info.value.last_good.epoch == 1

    def test_non_finite_gradient_aborts(self, desk_model_config, quick_train_config, small_dataset, monkeypatch):
        _, manifest = small_dataset

        def exploding(params, grads, state):
            raise NonFiniteGradientError("Non-finite gradient", diagnostics={"head.w1": 3})

        monkeypatch.setattr(trainer, "adam_step", exploding)
        with pytest.raises(TrainingAbortedError) as exc_info:
            train_branch(build_branch(desk_model_config, "audio"), manifest, quick_train_config)
        assert exc_info.value.last_good is None
        assert isinstance(exc_info.value.__cause__, NonFiniteGradientError)

    def test_prefetch_and_parallel_loading_give_same_history(self, desk_model_config, small_dataset):
        _, manifest = small_dataset
        serial = TrainConfig(learning_rate=1e-3, batch_size=4, max_epochs=2)
        parallel = serial.model_copy(update={"prefetch": 2, "load_workers": 4})
        a = train_branch(build_branch(desk_model_config, "audio"), manifest, serial)
        b = train_branch(build_branch(desk_model_config, "audio"), manifest, parallel)
        assert a.history == b.history
