"""Sample Manifest, Length Normalization and Batching.

The manifest is a UTF-8 CSV indexing every sample: id, split, three feature
file paths (relative to the manifest's directory) and six labels.

Batches pad or subsample each sequence to a fixed length with a validity mask.
Training order is a pure function of (sample ids, seed, epoch); validation and
test splits keep manifest order.
"""

import asyncio
import csv
import queue
import threading
from collections.abc import Iterable, Iterator, Sequence
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from tenacity import (
    retry,
    retry_if_exception_type,
    stop_after_attempt,
    wait_exponential,
)

from mimicry_cli.feature_io import FeatureModality, FeatureSequence, read_feature_file
from mimicry_cli.models.config import Modality
from mimicry_cli.models.records import EMOTIONS, LabelVector
from mimicry_cli.run_logger import get_logger

logger = get_logger(__name__)

Split = Literal["train", "validation", "test"]
SPLITS: tuple[str, ...] = ("train", "validation", "test")

MANIFEST_COLUMNS: tuple[str, ...] = (
    "sample_id",
    "split",
    "visual_resnet_path",
    "visual_aus_path",
    "audio_path",
    *EMOTIONS,
)

CHANNEL_MODALITIES: dict[str, FeatureModality] = {
    "resnet": FeatureModality.VISUAL_RESNET,
    "aus": FeatureModality.VISUAL_AUS,
}


class ManifestError(ValueError):
    """Raised when a manifest is malformed or inconsistent."""


class UnknownSplitError(ManifestError):
    """Raised for a split name outside train/validation/test."""


class EmptySplitError(ManifestError):
    """Raised when a requested split has no samples."""


class AlignmentError(ValueError):
    """Raised when the visual channels of one sample have different lengths."""


class ManifestRow(BaseModel):
    """One sample of the manifest."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    sample_id: str = Field(min_length=1)
    split: Split
    visual_resnet_path: Path
    visual_aus_path: Path
    audio_path: Path
    labels: LabelVector

    def path_for(self, modality: FeatureModality) -> Path:
        if modality is FeatureModality.VISUAL_RESNET:
            return self.visual_resnet_path
        if modality is FeatureModality.VISUAL_AUS:
            return self.visual_aus_path
        return self.audio_path


class Manifest(BaseModel):
    """Index of samples; feature paths are relative to ``root``."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    root: Path
    rows: tuple[ManifestRow, ...]

    @model_validator(mode="after")
    def check_unique_ids(self) -> "Manifest":
        seen: dict[str, str] = {}
        for row in self.rows:
            if row.sample_id in seen:
                where = seen[row.sample_id]
                if where != row.split:
                    raise ValueError(
                        f"sample id {row.sample_id!r} appears in splits {where} and {row.split}"
                    )
                raise ValueError(f"duplicate sample id {row.sample_id!r}")
            seen[row.sample_id] = row.split
        return self

    def split_rows(self, split: str) -> list[ManifestRow]:
        """Rows of one split in manifest order.

        Raises:
            UnknownSplitError: For names outside train/validation/test
        """
        if split not in SPLITS:
            raise UnknownSplitError(f"Unknown split {split!r}; expected one of {', '.join(SPLITS)}")
        return [row for row in self.rows if row.split == split]

    def resolve(self, path: Path) -> Path:
        return path if path.is_absolute() else self.root / path

    def counts(self) -> dict[str, int]:
        return {split: len(self.split_rows(split)) for split in SPLITS}


def load_manifest(path: str | Path, check_files: bool = True) -> Manifest:
    """Load and validate a manifest CSV.

    Args:
        path: Manifest file
        check_files: Require every referenced feature file to exist

    Returns:
        Validated Manifest

    Raises:
        ManifestError: Wrong header, bad label, duplicate id, missing file
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        if tuple(reader.fieldnames or ()) != MANIFEST_COLUMNS:
            raise ManifestError(
                f"Manifest header must be {','.join(MANIFEST_COLUMNS)}, got {reader.fieldnames}"
            )
        raw_rows = list(reader)

    try:
        rows = tuple(
            ManifestRow(
                sample_id=raw["sample_id"],
                split=raw["split"],
                visual_resnet_path=Path(raw["visual_resnet_path"]),
                visual_aus_path=Path(raw["visual_aus_path"]),
                audio_path=Path(raw["audio_path"]),
                labels=LabelVector(values=tuple(float(raw[name]) for name in EMOTIONS)),
            )
            for raw in raw_rows
        )
        manifest = Manifest(root=path.parent, rows=rows)
    except (ValidationError, ValueError) as e:
        raise ManifestError(f"Invalid manifest {path}: {e}") from e

    if check_files:
        missing = [
            str(manifest.resolve(p))
            for row in manifest.rows
            for p in (row.visual_resnet_path, row.visual_aus_path, row.audio_path)
            if not manifest.resolve(p).is_file()
        ]
        if missing:
            raise ManifestError(f"Manifest references {len(missing)} missing file(s), first: {missing[0]}")

    logger.info("Manifest loaded", path=path, **manifest.counts())
    return manifest


def write_manifest(manifest: Manifest, path: str | Path) -> None:
    """Write a manifest CSV; labels use the shortest exact decimal form."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(MANIFEST_COLUMNS)
        for row in manifest.rows:
            writer.writerow(
                [
                    row.sample_id,
                    row.split,
                    row.visual_resnet_path.as_posix(),
                    row.visual_aus_path.as_posix(),
                    row.audio_path.as_posix(),
                    *(repr(v) for v in row.labels.values),
                ]
            )


def normalize_length(seq: FeatureSequence, target_len: int) -> tuple[np.ndarray, np.ndarray]:
    """Bring a sequence to exactly ``target_len`` frames.

    Longer sequences keep frames ``floor(i * T_raw / target_len)``; shorter ones
    are zero-padded at the end with mask False on the padding.

    Returns:
        (matrix [target_len x dim], boolean mask [target_len])
    """
    if target_len < 1:
        raise ValueError(f"target length must be positive, got {target_len}")
    raw_len = seq.length
    if raw_len < 1:
        raise ValueError(f"Sequence {seq.sample_id} is empty")

    if raw_len >= target_len:
        indices = (np.arange(target_len, dtype=np.int64) * raw_len) // target_len
        return seq.values[indices].copy(), np.ones(target_len, dtype=bool)

    matrix = np.zeros((target_len, seq.values.shape[1]), dtype=seq.values.dtype)
    matrix[:raw_len] = seq.values
    mask = np.zeros(target_len, dtype=bool)
    mask[:raw_len] = True
    return matrix, mask


@retry(
    retry=retry_if_exception_type((TimeoutError, InterruptedError, BlockingIOError)),
    stop=stop_after_attempt(3),
    wait=wait_exponential(multiplier=0.05, max=1),
    reraise=True,
)
def read_with_retry(path: Path, sample_id: str) -> FeatureSequence:
    """Read a feature file, retrying transient OS errors (shared filesystems)."""
    return read_feature_file(path, sample_id)


async def load_sequences_async(
    requests: Sequence[tuple[Path, str]],
    workers: int = 4,
) -> list[FeatureSequence]:
    """Read many feature files concurrently.

    Args:
        requests: (path, sample_id) pairs
        workers: Maximum reads in flight

    Returns:
        Sequences in the order of ``requests``
    """
    semaphore = asyncio.Semaphore(max(1, workers))

    async def load(path: Path, sample_id: str) -> FeatureSequence:
        async with semaphore:
            return await asyncio.to_thread(read_with_retry, path, sample_id)

    return list(await asyncio.gather(*(load(path, sid) for path, sid in requests)))


def _expect_modality(path: Path, sequence: FeatureSequence, modality: FeatureModality) -> FeatureSequence:
    if sequence.modality is not modality:
        raise ManifestError(f"{path} holds {sequence.modality.label} features, manifest expects {modality.label}")
    return sequence


class SequenceStore:
    """Cache of decoded feature sequences keyed by resolved path."""

    def __init__(self, manifest: Manifest):
        self.manifest = manifest
        self._cache: dict[Path, FeatureSequence] = {}
        self._lock = threading.Lock()

    def get(self, row: ManifestRow, modality: FeatureModality) -> FeatureSequence:
        path = self.manifest.resolve(row.path_for(modality))
        with self._lock:
            cached = self._cache.get(path)
        if cached is None:
            cached = _expect_modality(path, read_with_retry(path, row.sample_id), modality)
            with self._lock:
                self._cache[path] = cached
        return cached

    def preload(
        self,
        rows: Sequence[ManifestRow],
        modalities: Sequence[FeatureModality],
        workers: int,
    ) -> None:
        """Read all files for ``rows`` up front, ``workers`` at a time.

        Raises:
            ManifestError: If a file holds another modality than its column names
        """
        pending = [
            (self.manifest.resolve(row.path_for(m)), row.sample_id, m)
            for row in rows
            for m in modalities
            if self.manifest.resolve(row.path_for(m)) not in self._cache
        ]
        if not pending:
            return
        sequences = asyncio.run(load_sequences_async([(path, sid) for path, sid, _ in pending], workers))
        checked = [_expect_modality(path, seq, m) for (path, _, m), seq in zip(pending, sequences)]
        with self._lock:
            for (path, _, _), seq in zip(pending, checked):
                self._cache[path] = seq


class Batch(BaseModel):
    """Padded per-modality arrays for a group of samples."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    sample_ids: tuple[str, ...]
    features: dict[str, np.ndarray] = Field(description="modality label -> [B, T, dim]")
    masks: dict[str, np.ndarray] = Field(description="branch -> [B, T] validity")
    labels: np.ndarray = Field(description="[B, 6] float64")

    @property
    def size(self) -> int:
        return len(self.sample_ids)


def batch_order(rows: Sequence[ManifestRow], split: str, seed: int, epoch: int = 0) -> list[ManifestRow]:
    """Sample order for one epoch: shuffled by (seed, epoch) for train only."""
    if split != "train":
        return list(rows)
    permutation = np.random.default_rng([seed, epoch]).permutation(len(rows))
    return [rows[i] for i in permutation]


def branch_modalities(branch: Modality, visual_channels: Sequence[str]) -> list[FeatureModality]:
    if branch == "audio":
        return [FeatureModality.AUDIO_W2V]
    return [CHANNEL_MODALITIES[c] for c in visual_channels]


def _assemble(
    rows: Sequence[ManifestRow],
    store: SequenceStore,
    branches: Sequence[Modality],
    lengths: dict[str, int],
    visual_channels: Sequence[str],
) -> Batch:
    features: dict[str, np.ndarray] = {}
    masks: dict[str, np.ndarray] = {}
    for branch in branches:
        branch_mask: np.ndarray | None = None
        raw_lengths: list[int] | None = None
        for modality in branch_modalities(branch, visual_channels):
            sequences = [store.get(row, modality) for row in rows]
            seq_lengths = [seq.length for seq in sequences]
            if raw_lengths is not None and seq_lengths != raw_lengths:
                bad = next(i for i, (a, b) in enumerate(zip(raw_lengths, seq_lengths)) if a != b)
                raise AlignmentError(
                    f"Sample {rows[bad].sample_id}: visual channels have {raw_lengths[bad]} "
                    f"and {seq_lengths[bad]} frames"
                )
            raw_lengths = seq_lengths
            normalized = [normalize_length(seq, lengths[branch]) for seq in sequences]
            features[modality.label] = np.stack([matrix for matrix, _ in normalized])
            branch_mask = np.stack([mask for _, mask in normalized])
        assert branch_mask is not None
        masks[branch] = branch_mask
    labels = np.array([row.labels.values for row in rows], dtype=np.float64)
    return Batch(
        sample_ids=tuple(row.sample_id for row in rows),
        features=features,
        masks=masks,
        labels=labels,
    )


def iter_batches(
    manifest: Manifest,
    split: str,
    batch_size: int,
    seed: int,
    *,
    epoch: int = 0,
    branches: Sequence[Modality] = ("visual", "audio"),
    lengths: dict[str, int] | None = None,
    visual_channels: Sequence[str] = ("resnet", "aus"),
    store: SequenceStore | None = None,
) -> Iterator[Batch]:
    """Lazily assemble the batches of one epoch.

    Raises:
        UnknownSplitError: For unknown split names
        EmptySplitError: If the split has no samples
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be positive, got {batch_size}")
    rows = manifest.split_rows(split)
    if not rows:
        raise EmptySplitError(f"Split {split!r} has no samples")
    lengths = lengths or {"visual": 300, "audio": 300}
    store = store or SequenceStore(manifest)
    ordered = batch_order(rows, split, seed, epoch)
    for start in range(0, len(ordered), batch_size):
        yield _assemble(ordered[start : start + batch_size], store, branches, lengths, visual_channels)


def make_batches(
    manifest: Manifest,
    split: str,
    batch_size: int,
    seed: int,
    **kwargs,
) -> list[Batch]:
    """All batches of one epoch; the final partial batch is kept."""
    return list(iter_batches(manifest, split, batch_size, seed, **kwargs))


class _ProducerFailure:
    def __init__(self, error: BaseException):
        self.error = error


def prefetch_batches(batches: Iterable[Batch], depth: int) -> Iterator[Batch]:
    """Assemble batches in a producer thread, at most ``depth`` ahead.

    Order matches iterating ``batches`` directly. ``depth <= 0`` iterates
    in the calling thread.
    """
    if depth <= 0:
        yield from batches
        return

    buffer: queue.Queue = queue.Queue(maxsize=depth)
    done = object()
    stop = threading.Event()

    def put(item: object) -> bool:
        while not stop.is_set():
            try:
                buffer.put(item, timeout=0.1)
                return True
            except queue.Full:
                continue
        return False

    def produce() -> None:
        try:
            for batch in batches:
                if not put(batch):
                    return
        except BaseException as e:  # re-raised in the consumer
            put(_ProducerFailure(e))
            return
        put(done)

    producer = threading.Thread(target=produce, name="batch-prefetch", daemon=True)
    producer.start()
    try:
        while True:
            item = buffer.get()
            if item is done:
                break
            if isinstance(item, _ProducerFailure):
                raise item.error
            yield item
    finally:
        stop.set()
        producer.join(timeout=1.0)
