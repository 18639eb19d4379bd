"""Checkpoint Container.

Binary layout, little-endian:

    magic b"EMIC" (4 bytes), version u32 = 1, then sections until end of file:
        name length u16, name (UTF-8), payload length u64, payload

Sections:

    config                  JSON {"modality", "model", "train"}
    param/<name>            array blob
    adam/m/<name>           array blob (first moment)
    adam/v/<name>           array blob (second moment)
    optimizer               JSON {"lr", "beta1", "beta2", "eps", "t"}
    scheduler               JSON scheduler state
    progress                JSON {"epoch", "best_epoch", "best_rho"}
    rng                     JSON {"shuffle_seed", "next_epoch"}
    history                 JSON list of per-epoch log rows

Array blob: dtype code u8 (1 float32, 2 float64), ndim u8, ndim x u32 dims,
then the raw little-endian values in C order.
"""

import json
import os
import struct
from pathlib import Path
from typing import Any

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from mimicry_cli.model import BranchModel, build_branch
from mimicry_cli.models.config import Modality, ModelConfig, TrainConfig
from mimicry_cli.models.records import EpochLogRow
from mimicry_cli.optimizer import OptimizerState
from mimicry_cli.run_logger import get_logger
from mimicry_cli.scheduler import SchedulerState

logger = get_logger(__name__)

MAGIC = b"EMIC"
FORMAT_VERSION = 1
PREAMBLE = struct.Struct("<4sI")
NAME_LENGTH = struct.Struct("<H")
PAYLOAD_LENGTH = struct.Struct("<Q")
ARRAY_HEADER = struct.Struct("<BB")
DIM = struct.Struct("<I")

DTYPE_CODES: dict[int, np.dtype] = {1: np.dtype("<f4"), 2: np.dtype("<f8")}


class CheckpointError(ValueError):
    """Raised when a checkpoint cannot be read or does not fit a model."""


class Checkpoint(BaseModel):
    """Everything needed to predict with, or resume training of, one branch."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    modality: Modality
    model: ModelConfig
    train: TrainConfig
    params: dict[str, np.ndarray]
    optimizer: OptimizerState
    scheduler: SchedulerState
    epoch: int = Field(ge=0, description="Epochs completed")
    best_epoch: int = Field(0, ge=0)
    best_rho: float = float("-inf")
    history: list[EpochLogRow] = Field(default_factory=list)


def _dtype_code(dtype: np.dtype) -> int:
    for code, known in DTYPE_CODES.items():
        if np.dtype(dtype).newbyteorder("<") == known:
            return code
    raise CheckpointError(f"Unsupported array dtype {dtype}")


def encode_array(array: np.ndarray) -> bytes:
    code = _dtype_code(array.dtype)
    little = np.ascontiguousarray(array, dtype=DTYPE_CODES[code])
    dims = b"".join(DIM.pack(n) for n in little.shape)
    return ARRAY_HEADER.pack(code, little.ndim) + dims + little.tobytes()


def decode_array(payload: bytes, name: str) -> np.ndarray:
    if len(payload) < ARRAY_HEADER.size:
        raise CheckpointError(f"Array section {name!r} is truncated")
    code, ndim = ARRAY_HEADER.unpack_from(payload)
    if code not in DTYPE_CODES:
        raise CheckpointError(f"Array section {name!r} has unknown dtype code {code}")
    offset = ARRAY_HEADER.size
    if len(payload) < offset + ndim * DIM.size:
        raise CheckpointError(f"Array section {name!r} is truncated")
    shape = tuple(DIM.unpack_from(payload, offset + i * DIM.size)[0] for i in range(ndim))
    offset += ndim * DIM.size
    dtype = DTYPE_CODES[code]
    expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    if len(payload) - offset != expected:
        raise CheckpointError(f"Array section {name!r} holds {len(payload) - offset} bytes, expected {expected}")
    return np.frombuffer(payload, dtype=dtype, offset=offset).reshape(shape).astype(dtype.newbyteorder("="))


def _json(value: Any) -> bytes:
    return json.dumps(value, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _section(name: str, payload: bytes) -> bytes:
    encoded = name.encode("utf-8")
    return NAME_LENGTH.pack(len(encoded)) + encoded + PAYLOAD_LENGTH.pack(len(payload)) + payload


def encode_checkpoint(checkpoint: Checkpoint) -> bytes:
    """Serialize a checkpoint; equal checkpoints give equal bytes."""
    parts = [PREAMBLE.pack(MAGIC, FORMAT_VERSION)]
    parts.append(
        _section(
            "config",
            _json(
                {
                    "modality": checkpoint.modality,
                    "model": checkpoint.model.model_dump(mode="json"),
                    "train": checkpoint.train.model_dump(mode="json"),
                }
            ),
        )
    )
    for name, array in checkpoint.params.items():
        parts.append(_section(f"param/{name}", encode_array(array)))
    for kind, moments in (("m", checkpoint.optimizer.m), ("v", checkpoint.optimizer.v)):
        for name, array in moments.items():
            parts.append(_section(f"adam/{kind}/{name}", encode_array(array)))
    parts.append(_section("optimizer", _json(checkpoint.optimizer.hyperparameters())))
    parts.append(_section("scheduler", _json(checkpoint.scheduler.model_dump(mode="python"))))
    parts.append(
        _section(
            "progress",
            _json(
                {"epoch": checkpoint.epoch, "best_epoch": checkpoint.best_epoch, "best_rho": checkpoint.best_rho}
            ),
        )
    )
    parts.append(
        _section("rng", _json({"shuffle_seed": checkpoint.train.seed, "next_epoch": checkpoint.epoch + 1}))
    )
    parts.append(_section("history", _json([row.model_dump() for row in checkpoint.history])))
    return b"".join(parts)


def _read_sections(raw: bytes) -> list[tuple[str, bytes]]:
    if len(raw) < PREAMBLE.size:
        raise CheckpointError("File is too short to be a checkpoint")
    magic, version = PREAMBLE.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError(f"Bad magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"Unsupported checkpoint version {version}")

    sections: list[tuple[str, bytes]] = []
    offset = PREAMBLE.size
    while offset < len(raw):
        if offset + NAME_LENGTH.size > len(raw):
            raise CheckpointError("Truncated section header")
        (name_len,) = NAME_LENGTH.unpack_from(raw, offset)
        offset += NAME_LENGTH.size
        name_end = offset + name_len
        if name_end + PAYLOAD_LENGTH.size > len(raw):
            raise CheckpointError("Truncated section header")
        try:
            name = raw[offset:name_end].decode("utf-8")
        except UnicodeDecodeError as e:
            raise CheckpointError(f"Section name at offset {offset} is not UTF-8") from e
        (payload_len,) = PAYLOAD_LENGTH.unpack_from(raw, name_end)
        offset = name_end + PAYLOAD_LENGTH.size
        if offset + payload_len > len(raw):
            raise CheckpointError(f"Section {name!r} is truncated")
        sections.append((name, raw[offset : offset + payload_len]))
        offset += payload_len
    return sections


def decode_checkpoint(raw: bytes) -> Checkpoint:
    """Parse checkpoint bytes.

    Raises:
        CheckpointError: On any structural or content problem
    """
    sections = _read_sections(raw)
    named: dict[str, bytes] = {}
    params: dict[str, np.ndarray] = {}
    moments: dict[str, dict[str, np.ndarray]] = {"m": {}, "v": {}}
    for name, payload in sections:
        if name.startswith("param/"):
            params[name.removeprefix("param/")] = decode_array(payload, name)
        elif name.startswith("adam/m/") or name.startswith("adam/v/"):
            kind, _, param_name = name.removeprefix("adam/").partition("/")
            moments[kind][param_name] = decode_array(payload, name)
        else:
            named[name] = payload

    missing = {"config", "optimizer", "scheduler", "progress", "history"} - set(named)
    if missing:
        raise CheckpointError(f"Checkpoint lacks section(s): {', '.join(sorted(missing))}")

    try:
        config = json.loads(named["config"])
        optimizer = json.loads(named["optimizer"])
        progress = json.loads(named["progress"])
        return Checkpoint(
            modality=config["modality"],
            model=ModelConfig.model_validate(config["model"]),
            train=TrainConfig.model_validate(config["train"]),
            params=params,
            optimizer=OptimizerState(**optimizer, m=moments["m"], v=moments["v"]),
            scheduler=SchedulerState.model_validate(json.loads(named["scheduler"])),
            epoch=progress["epoch"],
            best_epoch=progress["best_epoch"],
            best_rho=progress["best_rho"],
            history=[EpochLogRow.model_validate(row) for row in json.loads(named["history"])],
        )
    except (KeyError, TypeError, json.JSONDecodeError, ValidationError) as e:
        raise CheckpointError(f"Invalid checkpoint contents: {e}") from e


def save_checkpoint(checkpoint: Checkpoint, path: str | Path) -> None:
    """Write a checkpoint atomically (temp file, then rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode_checkpoint(checkpoint))
    os.replace(tmp, path)
    logger.info("Checkpoint saved", path=path, epoch=checkpoint.epoch, modality=checkpoint.modality)


def load_checkpoint(path: str | Path) -> Checkpoint:
    """Read a checkpoint.

    Raises:
        CheckpointError: Bad magic, version, truncation or invalid contents
    """
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"Checkpoint not found: {path}")
    return decode_checkpoint(path.read_bytes())


def snapshot_parameters(model: BranchModel) -> dict[str, np.ndarray]:
    """Copy a model's parameter values in registry order."""
    return {name: p.data.copy() for name, p in model.named_parameters()}


def restore_branch(checkpoint: Checkpoint) -> BranchModel:
    """Rebuild the branch recorded in a checkpoint with its stored weights.

    Raises:
        CheckpointError: If stored parameter names or shapes do not match
    """
    model = build_branch(checkpoint.model, checkpoint.modality)
    registry = model.parameter_registry()
    if list(registry) != list(checkpoint.params):
        missing = sorted(set(registry) - set(checkpoint.params))
        extra = sorted(set(checkpoint.params) - set(registry))
        raise CheckpointError(
            f"Checkpoint parameters do not match the {checkpoint.modality} branch "
            f"(missing: {missing or 'none'}, unexpected: {extra or 'none'})"
        )
    for name, param in registry.items():
        stored = checkpoint.params[name]
        if stored.shape != param.shape:
            raise CheckpointError(f"Parameter {name!r} has shape {stored.shape}, model expects {param.shape}")
        param.data = stored.astype(param.dtype, copy=True)
    return model
