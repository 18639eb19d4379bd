"""Feature File Codec.

Binary per-sample feature matrices, little-endian throughout:

    offset  size  field
    0       4     magic b"EMIF"
    4       4     version (u32) = 1
    8       1     modality code (u8): 1 visual_resnet, 2 visual_aus, 3 audio_w2v
    9       3     reserved, zero
    12      4     rows (u32)
    16      4     cols (u32)
    20      ...   rows * cols float32, row-major

Reads are all-or-nothing: any inconsistency raises before a sequence exists.
"""

import struct
from enum import Enum
from pathlib import Path
from typing import Any

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from mimicry_cli.models.config import AUDIO_DIM, AUS_DIM, RESNET_DIM

MAGIC = b"EMIF"
FORMAT_VERSION = 1
HEADER = struct.Struct("<4sIB3xII")
PAYLOAD_DTYPE = np.dtype("<f4")


class FeatureModality(Enum):
    """Feature channels with their on-disk code and per-frame width."""

    VISUAL_RESNET = ("visual_resnet", 1, RESNET_DIM)
    VISUAL_AUS = ("visual_aus", 2, AUS_DIM)
    AUDIO_W2V = ("audio_w2v", 3, AUDIO_DIM)

    def __init__(self, label: str, code: int, dim: int):
        self.label = label
        self.code = code
        self.dim = dim

    @classmethod
    def from_code(cls, code: int) -> "FeatureModality":
        for modality in cls:
            if modality.code == code:
                return modality
        raise UnknownModalityError(f"Unknown modality code: {code}")

    @classmethod
    def from_label(cls, label: str) -> "FeatureModality":
        for modality in cls:
            if modality.label == label:
                return modality
        raise UnknownModalityError(f"Unknown modality: {label!r}")


class FeatureFileError(ValueError):
    """Base class for feature file failures."""


class BadMagicError(FeatureFileError):
    """File does not start with the feature file magic."""


class UnsupportedVersionError(FeatureFileError):
    """File declares a format version this reader does not know."""


class UnknownModalityError(FeatureFileError):
    """File declares a modality code outside the known set."""


class ModalityDimensionError(FeatureFileError):
    """Column count contradicts the declared modality."""


class NonFiniteValueError(FeatureFileError):
    """Payload contains NaN or infinity."""


class TruncatedFileError(FeatureFileError):
    """File is shorter or longer than its header promises."""


class FeatureSequence(BaseModel):
    """One sample's per-frame feature matrix for a single modality."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    sample_id: str = Field(min_length=1)
    modality: FeatureModality
    values: np.ndarray = Field(description="T_raw x dim float32 matrix")

    @field_validator("values", mode="before")
    @classmethod
    def as_float32_matrix(cls, values: Any) -> np.ndarray:
        array = np.array(values, dtype=np.float32)
        if array.ndim != 2:
            raise ValueError(f"feature values must be a matrix, got shape {array.shape}")
        if not np.all(np.isfinite(array)):
            raise ValueError("feature values must be finite")
        array.flags.writeable = False
        return array

    @model_validator(mode="after")
    def check_dim(self) -> "FeatureSequence":
        if self.values.shape[1] != self.modality.dim:
            raise ValueError(
                f"{self.modality.label} features must have {self.modality.dim} columns, "
                f"got {self.values.shape[1]}"
            )
        return self

    @property
    def length(self) -> int:
        return int(self.values.shape[0])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FeatureSequence):
            return NotImplemented
        return (
            self.sample_id == other.sample_id
            and self.modality is other.modality
            and self.values.shape == other.values.shape
            and bool(np.array_equal(self.values, other.values))
        )


def encode_feature_sequence(seq: FeatureSequence) -> bytes:
    """Serialize a sequence to the feature file byte layout."""
    rows, cols = seq.values.shape
    header = HEADER.pack(MAGIC, FORMAT_VERSION, seq.modality.code, rows, cols)
    return header + np.ascontiguousarray(seq.values, dtype=PAYLOAD_DTYPE).tobytes()


def decode_feature_sequence(raw: bytes, sample_id: str) -> FeatureSequence:
    """Parse feature file bytes.

    Args:
        raw: Complete file contents
        sample_id: Identifier attached to the returned sequence

    Returns:
        Decoded FeatureSequence

    Raises:
        TruncatedFileError: Header or payload shorter/longer than declared
        BadMagicError: Wrong magic bytes
        UnsupportedVersionError: Version other than 1
        UnknownModalityError: Modality code outside 1..3
        ModalityDimensionError: Column count contradicts modality
        NonFiniteValueError: NaN or infinity in payload
    """
    if len(raw) < HEADER.size:
        raise TruncatedFileError(f"File has {len(raw)} bytes, header needs {HEADER.size}")
    magic, version, code, rows, cols = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise BadMagicError(f"Bad magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"Unsupported feature file version {version}")
    modality = FeatureModality.from_code(code)
    if cols != modality.dim:
        raise ModalityDimensionError(
            f"{modality.label} declares {cols} columns, expected {modality.dim}"
        )
    if rows < 1:
        raise TruncatedFileError("Feature file declares zero rows")

    expected = HEADER.size + rows * cols * PAYLOAD_DTYPE.itemsize
    if len(raw) != expected:
        raise TruncatedFileError(f"File has {len(raw)} bytes, header declares {expected}")

    values = np.frombuffer(raw, dtype=PAYLOAD_DTYPE, offset=HEADER.size).reshape(rows, cols)
    if not np.all(np.isfinite(values)):
        raise NonFiniteValueError(f"Non-finite values in {modality.label} features of {sample_id}")
    return FeatureSequence(sample_id=sample_id, modality=modality, values=values)


def read_feature_file(path: str | Path, sample_id: str | None = None) -> FeatureSequence:
    """Read a feature file.

    Args:
        path: File path
        sample_id: Identifier for the sequence (default: file stem)

    Returns:
        FeatureSequence with the exact stored values
    """
    path = Path(path)
    return decode_feature_sequence(path.read_bytes(), sample_id or path.stem)


def write_feature_file(seq: FeatureSequence, path: str | Path) -> None:
    """Write a feature file; the same sequence always yields the same bytes."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_feature_sequence(seq))
