"""Pydantic Data Models.

Configuration and record types shared across the toolkit.
"""

from mimicry_cli.models.config import ExperimentConfig, ModelConfig, RunConfig, TrainConfig
from mimicry_cli.models.records import (
    EMOTIONS,
    EpochLogRow,
    EvalReport,
    LabelVector,
    PredictionRecord,
)

__all__ = [
    "EMOTIONS",
    "ModelConfig",
    "TrainConfig",
    "ExperimentConfig",
    "RunConfig",
    "LabelVector",
    "PredictionRecord",
    "EvalReport",
    "EpochLogRow",
]
