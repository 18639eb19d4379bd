"""Late Fusion of Per-Modality Predictions.

The fused prediction is the per-sample, per-emotion mean of the visual and
audio predictions. An optional weight pair (summing to 1) replaces the
plain average.
"""

from collections.abc import Sequence

from mimicry_cli.models.records import PredictionRecord
from mimicry_cli.run_logger import get_logger

logger = get_logger(__name__)

WEIGHT_SUM_TOLERANCE = 1e-9


class FusionError(ValueError):
    """Raised when two prediction sets cannot be fused."""


class IdSetMismatchError(FusionError):
    """The two inputs cover different samples."""

    def __init__(self, only_first: Sequence[str], only_second: Sequence[str]):
        self.only_first = sorted(only_first)
        self.only_second = sorted(only_second)
        super().__init__(
            f"Sample ids differ: {len(self.only_first)} only in first input "
            f"{self.only_first[:10]}, {len(self.only_second)} only in second input {self.only_second[:10]}"
        )

    @property
    def symmetric_difference(self) -> list[str]:
        return sorted(self.only_first + self.only_second)


class DuplicateSampleIdError(FusionError):
    """A sample id occurs more than once within one input."""


def _index(records: Sequence[PredictionRecord], label: str) -> dict[str, PredictionRecord]:
    indexed: dict[str, PredictionRecord] = {}
    for record in records:
        if record.sample_id in indexed:
            raise DuplicateSampleIdError(f"Duplicate sample id {record.sample_id!r} in {label} predictions")
        indexed[record.sample_id] = record
    return indexed


def late_fuse(
    visual: Sequence[PredictionRecord],
    audio: Sequence[PredictionRecord],
    weights: tuple[float, float] | None = None,
) -> list[PredictionRecord]:
    """Average two prediction sets sample by sample.

    Args:
        visual: Visual branch predictions (defines output order)
        audio: Audio branch predictions
        weights: Optional (w_visual, w_audio) summing to 1; default is the
            plain mean

    Returns:
        Fused records (source "fused") in ``visual`` order

    Raises:
        DuplicateSampleIdError: A sample id repeats within one input
        IdSetMismatchError: The inputs cover different sample ids
        FusionError: Invalid weights
    """
    if weights is not None:
        w_v, w_a = weights
        if w_v < 0 or w_a < 0 or abs(w_v + w_a - 1.0) > WEIGHT_SUM_TOLERANCE:
            raise FusionError(f"Fusion weights must be non-negative and sum to 1, got {weights}")

    first = _index(visual, "first")
    second = _index(audio, "second")
    if first.keys() != second.keys():
        raise IdSetMismatchError(first.keys() - second.keys(), second.keys() - first.keys())

    fused: list[PredictionRecord] = []
    for record in visual:
        other = second[record.sample_id].values
        if weights is None:
            values = tuple((v + a) / 2.0 for v, a in zip(record.values, other))
        else:
            values = tuple(w_v * v + w_a * a for v, a in zip(record.values, other))
        fused.append(PredictionRecord(sample_id=record.sample_id, source="fused", values=values))

    logger.info("Fusion completed", samples=len(fused), weighted=weights is not None)
    return fused
