"""Configuration Models.

Architecture, optimizer and invocation settings. Unknown keys are rejected
everywhere so that a typo in a config file is an error, never a silent default.
"""

from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, model_validator

RESNET_DIM = 512
AUS_DIM = 34
AUDIO_DIM = 768
OUTPUT_DIM = 6

VISUAL_CHANNEL_DIMS: dict[str, int] = {"resnet": RESNET_DIM, "aus": AUS_DIM}

VisualChannel = Literal["resnet", "aus"]
Modality = Literal["visual", "audio"]


class ModelConfig(BaseModel):
    """Architecture hyperparameters for both branches."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    d_model: int = Field(128, gt=0, description="Feature width after the first TCN layer")
    num_heads: int = Field(4, gt=0, description="Attention heads per encoder block")
    num_encoder_blocks: int = Field(2, ge=0, description="Transformer blocks on the visual branch")
    tcn_layers: int = Field(5, gt=0, description="Causal convolution layers")
    kernel_size: int = Field(3, gt=0, description="Taps per convolution")
    dilations: tuple[int, ...] | None = Field(
        None, description="Dilation per TCN layer (default: 1, 2, 4, ...)"
    )
    visual_channels: tuple[VisualChannel, ...] = Field(
        ("resnet", "aus"), description="Visual feature channels, concatenated in this order"
    )
    visual_in_dim: int = Field(RESNET_DIM + AUS_DIM, description="Width of the concatenated visual input")
    audio_in_dim: int = Field(AUDIO_DIM, description="Width of the acoustic input")
    max_visual_len: int = Field(300, gt=0, description="Frames per visual sequence after length normalization")
    max_audio_len: int = Field(300, gt=0, description="Windows per audio sequence after length normalization")
    ffn_hidden: int = Field(64, gt=0, description="Hidden width of the regression head")
    output_dim: Literal[6] = Field(OUTPUT_DIM, description="Emotion dimensions predicted")
    layer_norm_eps: float = Field(1e-5, gt=0)
    precision: Literal["float32", "float64"] = Field("float32", description="Parameter dtype")
    seed: int = Field(0, ge=0, description="Parameter initialization seed")

    @model_validator(mode="before")
    @classmethod
    def fill_derived_defaults(cls, data: object) -> object:
        """Default dilation schedule is 2**i per layer; visual_in_dim follows the channels."""
        if not isinstance(data, dict):
            return data
        if data.get("dilations") is None:
            layers = data.get("tcn_layers", cls.model_fields["tcn_layers"].default)
            if isinstance(layers, int) and layers > 0:
                data = {**data, "dilations": tuple(2**i for i in range(layers))}
        channels = data.get("visual_channels")
        if "visual_in_dim" not in data and channels:
            try:
                data = {**data, "visual_in_dim": sum(VISUAL_CHANNEL_DIMS[c] for c in channels)}
            except (KeyError, TypeError):
                pass  # reported by field validation
        return data

    @model_validator(mode="after")
    def check_consistency(self) -> "ModelConfig":
        """Validate cross-field invariants.

        Raises:
            ValueError: If any invariant is violated
        """
        if self.d_model % self.num_heads != 0:
            raise ValueError(
                f"d_model ({self.d_model}) must be divisible by num_heads ({self.num_heads})"
            )
        if self.dilations is None or len(self.dilations) != self.tcn_layers:
            raise ValueError("dilations must list exactly one value per TCN layer")
        if any(d < 1 for d in self.dilations):
            raise ValueError("dilations must be positive")
        if not self.visual_channels or len(set(self.visual_channels)) != len(self.visual_channels):
            raise ValueError("visual_channels must be a non-empty list without repeats")
        if list(self.visual_channels) != [c for c in VISUAL_CHANNEL_DIMS if c in self.visual_channels]:
            raise ValueError("visual_channels must list resnet before aus")
        expected = sum(VISUAL_CHANNEL_DIMS[c] for c in self.visual_channels)
        if self.visual_in_dim != expected:
            raise ValueError(
                f"visual_in_dim ({self.visual_in_dim}) must equal the selected channel widths ({expected})"
            )
        if self.audio_in_dim != AUDIO_DIM:
            raise ValueError(f"audio_in_dim must be {AUDIO_DIM}")
        return self

    @property
    def receptive_field(self) -> int:
        """Past steps that can influence one TCN output, the current step included."""
        assert self.dilations is not None
        return 1 + sum((self.kernel_size - 1) * d for d in self.dilations)

    def input_dim(self, modality: Modality) -> int:
        return self.visual_in_dim if modality == "visual" else self.audio_in_dim

    def max_len(self, modality: Modality) -> int:
        return self.max_visual_len if modality == "visual" else self.max_audio_len


class TrainConfig(BaseModel):
    """Optimizer, schedule and loop settings."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    learning_rate: float = Field(3e-5, ge=0)
    batch_size: int = Field(128, gt=0)
    max_epochs: int = Field(100, gt=0)
    patience: int = Field(10, gt=0, description="Epochs without improvement before halving lr")
    lr_factor: float = Field(0.5, gt=0, lt=1)
    lr_floor: float = Field(1e-7, ge=0, description="Training stops once lr falls below this")
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    adam_eps: float = Field(1e-8, ge=0)
    seed: int = Field(0, ge=0, description="Shuffle seed")
    prefetch: int = Field(0, ge=0, description="Batches assembled ahead in a producer thread (0: off)")
    load_workers: int = Field(1, gt=0, description="Concurrent feature file reads")


class ExperimentConfig(BaseModel):
    """Contents of a config file: a [model] and a [train] section."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)


class RunConfig(BaseModel):
    """One CLI invocation."""

    model_config = ConfigDict(extra="forbid")

    command: Literal["synth", "train", "predict", "eval", "fuse", "report"]
    manifest_path: Path | None = None
    config_path: Path | None = None
    out_dir: Path | None = None
    seed: int | None = Field(None, ge=0)
    overrides: tuple[str, ...] = ()
