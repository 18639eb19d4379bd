"""Record Models.

Labels, per-sample predictions, evaluation reports and the per-epoch log row.
"""

import math
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

EMOTIONS: tuple[str, ...] = (
    "admiration",
    "amusement",
    "determination",
    "empathic_pain",
    "excitement",
    "joy",
)

PredictionSource = Literal["visual", "audio", "fused"]


class LabelVector(BaseModel):
    """Six self-reported emotion intensities, each in [0, 1]."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    values: tuple[float, float, float, float, float, float] = Field(
        description="Intensities in EMOTIONS order"
    )

    @field_validator("values")
    @classmethod
    def check_range(cls, values: tuple[float, ...]) -> tuple[float, ...]:
        for name, v in zip(EMOTIONS, values):
            if not (math.isfinite(v) and 0.0 <= v <= 1.0):
                raise ValueError(f"label '{name}' must lie in [0, 1], got {v}")
        return values


class PredictionRecord(BaseModel):
    """One sample's 6-dimensional intensity prediction."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    sample_id: str = Field(min_length=1)
    source: PredictionSource
    values: tuple[float, float, float, float, float, float]

    @field_validator("values")
    @classmethod
    def check_finite(cls, values: tuple[float, ...]) -> tuple[float, ...]:
        if not all(math.isfinite(v) for v in values):
            raise ValueError("prediction values must be finite")
        return values


class EvalReport(BaseModel):
    """Mean Pearson correlation across the six emotions plus MSE."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    per_dim_rho: dict[str, float]
    mean_rho: float
    per_dim_mse: dict[str, float]
    overall_mse: float
    n_samples: int = Field(ge=2)
    zero_variance_dims: tuple[str, ...] = ()

    @model_validator(mode="after")
    def check_components(self) -> "EvalReport":
        if tuple(self.per_dim_rho) != EMOTIONS or tuple(self.per_dim_mse) != EMOTIONS:
            raise ValueError("report must cover exactly the six emotions in order")
        for name, rho in self.per_dim_rho.items():
            if not -1.0 <= rho <= 1.0:
                raise ValueError(f"rho for '{name}' outside [-1, 1]: {rho}")
        expected = sum(self.per_dim_rho.values()) / len(EMOTIONS)
        if abs(self.mean_rho - expected) > 1e-12:
            raise ValueError(f"mean_rho {self.mean_rho} is not the mean of the per-dimension values")
        return self


class EpochLogRow(BaseModel):
    """One line of the per-epoch training log."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    epoch: int = Field(ge=1)
    train_loss: float
    val_mean_rho: float
    lr: float = Field(ge=0)
