"""Training Loop for One Branch.

Coordinates batching, forward/backward passes, Adam updates, validation,
plateau scheduling and checkpointing for a single modality.

Each epoch: shuffled train batches -> MSE loss -> backward -> adam_step, then
validation mean rho drives both model selection and the learning-rate
schedule. Training stops at ``max_epochs`` or once lr drops below the floor.
"""

import math
import warnings
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict

from mimicry_cli.autodiff import ShapeError, Tape, Tensor, mean_all, mul, sub
from mimicry_cli.checkpoint import (
    Checkpoint,
    CheckpointError,
    load_checkpoint,
    restore_branch,
    save_checkpoint,
    snapshot_parameters,
)
from mimicry_cli.dataset import EmptySplitError, Manifest, SequenceStore, iter_batches, prefetch_batches
from mimicry_cli.metrics import ZeroVarianceWarning, mean_rho
from mimicry_cli.model import BranchModel
from mimicry_cli.models.config import TrainConfig
from mimicry_cli.models.records import EpochLogRow, EvalReport
from mimicry_cli.optimizer import NonFiniteGradientError, OptimizerState, adam_step
from mimicry_cli.output_formatter import write_epoch_log
from mimicry_cli.run_logger import get_logger
from mimicry_cli.scheduler import SchedulerState, scheduler_update

logger = get_logger(__name__)

BEST_CHECKPOINT = "best.ckpt"
LAST_CHECKPOINT = "last.ckpt"
EPOCH_LOG = "epochs.csv"

StopReason = Literal["max_epochs", "lr_floor"]


class TrainingAbortedError(RuntimeError):
    """Raised when the loss or a gradient turns non-finite.

    ``last_good`` is the checkpoint of the last completed epoch, if any.
    """

    def __init__(self, message: str, last_good: Checkpoint | None):
        super().__init__(message)
        self.last_good = last_good


class SplitPredictions(BaseModel):
    """Model outputs for one split in manifest order."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    sample_ids: tuple[str, ...]
    values: np.ndarray
    labels: np.ndarray


class TrainingResult(BaseModel):
    """Outcome of train_branch."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    best: Checkpoint
    last: Checkpoint
    best_report: EvalReport
    history: list[EpochLogRow]
    stop_reason: StopReason

    @property
    def best_rho(self) -> float:
        return self.best.best_rho


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean over all cells of the squared difference."""
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss: prediction {pred.shape} and target {target.shape} differ")
    diff = sub(pred, target)
    return mean_all(mul(diff, diff))


def predict_split(
    model: BranchModel,
    manifest: Manifest,
    split: str,
    batch_size: int,
    store: SequenceStore | None = None,
) -> SplitPredictions:
    """Run inference over a split in manifest order.

    Raises:
        UnknownSplitError: For unknown split names
        EmptySplitError: If the split has no samples
    """
    ids: list[str] = []
    outputs: list[np.ndarray] = []
    labels: list[np.ndarray] = []
    for batch in iter_batches(
        manifest,
        split,
        batch_size,
        seed=0,
        branches=(model.modality,),
        lengths={model.modality: model.max_len},
        visual_channels=model.config.visual_channels,
        store=store,
    ):
        ids.extend(batch.sample_ids)
        outputs.append(model.predict_batch(batch))
        labels.append(batch.labels)
    return SplitPredictions(
        sample_ids=tuple(ids),
        values=np.concatenate(outputs),
        labels=np.concatenate(labels),
    )


def _evaluate(predictions: SplitPredictions) -> EvalReport:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ZeroVarianceWarning)
        return mean_rho(predictions.labels, predictions.values)


def _snapshot(
    model: BranchModel,
    config: TrainConfig,
    optimizer: OptimizerState,
    scheduler: SchedulerState,
    epoch: int,
    best_epoch: int,
    history: list[EpochLogRow],
) -> Checkpoint:
    return Checkpoint(
        modality=model.modality,
        model=model.config,
        train=config,
        params=snapshot_parameters(model),
        optimizer=optimizer.model_copy(update={"m": dict(optimizer.m), "v": dict(optimizer.v)}),
        scheduler=scheduler,
        epoch=epoch,
        best_epoch=best_epoch,
        best_rho=scheduler.best,
        history=list(history),
    )


def _check_splits(manifest: Manifest) -> None:
    if not manifest.split_rows("train"):
        raise EmptySplitError("Training needs a nonempty train split")
    if len(manifest.split_rows("validation")) < 2:
        raise EmptySplitError("Training needs at least 2 validation samples")


def _restorable_best(resume: Checkpoint, out_path: Path | None) -> Checkpoint | None:
    """Best checkpoint to carry into a resumed run, or None before any epoch.

    Raises:
        CheckpointError: If the best epoch recorded in ``resume`` is not
            ``resume`` itself and no matching best.ckpt is in ``out_path``
    """
    if resume.best_epoch == 0:
        return None
    if resume.best_epoch == resume.epoch:
        return resume
    path = out_path / BEST_CHECKPOINT if out_path is not None else None
    if path is None or not path.is_file():
        raise CheckpointError(
            f"Resuming after epoch {resume.epoch} needs the best.ckpt of epoch {resume.best_epoch}; "
            "pass the original output directory"
        )
    best = load_checkpoint(path)
    if best.best_epoch != resume.best_epoch or best.modality != resume.modality or best.model != resume.model:
        raise CheckpointError(f"{path} does not hold the best epoch {resume.best_epoch} of the resumed run")
    return best


def train_branch(
    model: BranchModel,
    manifest: Manifest,
    config: TrainConfig,
    out_dir: str | Path | None = None,
    resume: Checkpoint | None = None,
) -> TrainingResult:
    """Train one branch and keep the checkpoint with the best validation mean rho.

    Args:
        model: Freshly built branch (its parameters are updated in place)
        manifest: Dataset index with nonempty train and validation splits
        config: Optimizer and loop settings
        out_dir: If given, receives best.ckpt, last.ckpt and epochs.csv after
            every epoch
        resume: Checkpoint of a previous run to continue from

    Returns:
        TrainingResult with the best and last checkpoints and the epoch log

    Raises:
        EmptySplitError: Train split empty or fewer than 2 validation samples
        CheckpointError: Resume checkpoint from a different branch or config, or
            its best epoch cannot be restored
        TrainingAbortedError: Non-finite loss or gradient
    """
    _check_splits(manifest)
    out_path = Path(out_dir) if out_dir is not None else None
    modality = model.modality

    store = SequenceStore(manifest)
    if config.load_workers > 1:
        store.preload(
            manifest.split_rows("train") + manifest.split_rows("validation"),
            model.feature_modalities,
            config.load_workers,
        )

    optimizer = OptimizerState(
        lr=config.learning_rate, beta1=config.beta1, beta2=config.beta2, eps=config.adam_eps
    )
    scheduler = SchedulerState(lr=config.learning_rate, patience=config.patience, factor=config.lr_factor)
    history: list[EpochLogRow] = []
    start_epoch = 1
    best: Checkpoint | None = None
    best_report: EvalReport | None = None
    last: Checkpoint | None = None

    if resume is not None:
        if resume.modality != modality or resume.model != model.config:
            raise CheckpointError("Resume checkpoint was written for a different branch configuration")
        restored = restore_branch(resume)
        for param, stored in zip(model.parameters(), restored.parameters()):
            param.data = stored.data
        optimizer = resume.optimizer.model_copy(update={"m": dict(resume.optimizer.m), "v": dict(resume.optimizer.v)})
        scheduler = resume.scheduler
        history = list(resume.history)
        start_epoch = resume.epoch + 1
        last = resume
        best = _restorable_best(resume, out_path)
        if best is not None:
            best_model = restore_branch(best)
            best_report = _evaluate(predict_split(best_model, manifest, "validation", config.batch_size, store))
        logger.info("Training resumed", modality=modality, epoch=resume.epoch)

    registry = model.parameter_registry()
    logger.info(
        "Training started",
        modality=modality,
        parameters=model.parameter_count(),
        train_samples=len(manifest.split_rows("train")),
        validation_samples=len(manifest.split_rows("validation")),
        max_epochs=config.max_epochs,
        lr=scheduler.lr,
    )

    stop_reason: StopReason = "max_epochs"
    for epoch in range(start_epoch, config.max_epochs + 1):
        if scheduler.below_floor(config.lr_floor):
            stop_reason = "lr_floor"
            break
        lr = scheduler.lr
        optimizer.lr = lr
        total_loss = 0.0
        seen = 0
        batches = iter_batches(
            manifest,
            "train",
            config.batch_size,
            config.seed,
            epoch=epoch,
            branches=(modality,),
            lengths={modality: model.max_len},
            visual_channels=model.config.visual_channels,
            store=store,
        )
        for batch in prefetch_batches(batches, config.prefetch):
            with Tape() as tape:
                pred = model.forward_batch(batch)
                loss = mse_loss(pred, Tensor(batch.labels, dtype=model.dtype))
            loss_value = loss.item()
            if not math.isfinite(loss_value):
                logger.error("Training aborted", reason="non-finite loss", epoch=epoch, loss=loss_value)
                raise TrainingAbortedError(f"Loss became {loss_value} in epoch {epoch}", last)

            model.zero_grad()
            tape.backward(loss)
            try:
                adam_step(registry, {name: p.grad for name, p in registry.items()}, optimizer)
            except NonFiniteGradientError as e:
                logger.error("Training aborted", reason="non-finite gradient", epoch=epoch, diagnostics=e.diagnostics)
                raise TrainingAbortedError(f"Epoch {epoch}: {e}", last) from e
            total_loss += loss_value * batch.size
            seen += batch.size

        predictions = predict_split(model, manifest, "validation", config.batch_size, store)
        report = _evaluate(predictions)
        row = EpochLogRow(epoch=epoch, train_loss=total_loss / seen, val_mean_rho=report.mean_rho, lr=lr)
        history.append(row)
        logger.info(
            "Epoch finished",
            modality=modality,
            epoch=epoch,
            train_loss=row.train_loss,
            val_mean_rho=row.val_mean_rho,
            lr=lr,
        )

        improved = report.mean_rho > scheduler.best
        scheduler, _ = scheduler_update(scheduler, report.mean_rho)
        best_epoch = epoch if improved else (best.best_epoch if best is not None else 0)
        last = _snapshot(model, config, optimizer, scheduler, epoch, best_epoch, history)
        if improved:
            best = last
            best_report = report
            logger.info("New best checkpoint", modality=modality, epoch=epoch, val_mean_rho=report.mean_rho)

        if out_path is not None:
            if improved:
                save_checkpoint(last, out_path / BEST_CHECKPOINT)
            save_checkpoint(last, out_path / LAST_CHECKPOINT)
            write_epoch_log(history, out_path / EPOCH_LOG)

        if scheduler.below_floor(config.lr_floor):
            stop_reason = "lr_floor"
            break

    if last is None:
        raise TrainingAbortedError(f"No epoch was run; max_epochs is {config.max_epochs}", None)
    if best is None or best_report is None:
        best = last
        best_report = _evaluate(predict_split(model, manifest, "validation", config.batch_size, store))

    logger.info(
        "Training finished",
        modality=modality,
        epochs=len(history),
        best_epoch=best.best_epoch,
        best_val_mean_rho=best.best_rho,
        stop_reason=stop_reason,
    )
    return TrainingResult(
        best=best,
        last=last,
        best_report=best_report,
        history=history,
        stop_reason=stop_reason,
    )
