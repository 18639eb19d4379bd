"""Branch Models.

Visual branch: concatenated ResNet/AU channels -> TCN -> Transformer encoder
blocks -> masked mean pool -> FFN head. Acoustic branch: TCN -> pool -> head.
Both predict the six emotion intensities without any output activation.
"""

from collections.abc import Sequence

import numpy as np

from mimicry_cli.autodiff import Tensor, concat, default_dtype, reshape
from mimicry_cli.dataset import AlignmentError, Batch, branch_modalities, normalize_length
from mimicry_cli.feature_io import FeatureModality, FeatureSequence
from mimicry_cli.layers import (
    FfnHead,
    Module,
    NamedParameters,
    TcnEncoder,
    TransformerEncoderBlock,
    masked_mean_pool,
)
from mimicry_cli.models.config import AUS_DIM, RESNET_DIM, Modality, ModelConfig


class ModalityMismatchError(ValueError):
    """Raised when features of the wrong modality reach a branch."""


def concat_visual_channels(resnet: Tensor, aus: Tensor) -> Tensor:
    """Concatenate ResNet and AU features along the feature axis, ResNet first.

    Args:
        resnet: ``[..., T, 512]``
        aus: ``[..., T, 34]``

    Returns:
        ``[..., T, 546]``

    Raises:
        AlignmentError: If the two channels disagree on length
    """
    if resnet.shape[-1] != RESNET_DIM or aus.shape[-1] != AUS_DIM:
        raise ModalityMismatchError(
            f"expected [..., {RESNET_DIM}] and [..., {AUS_DIM}], got {resnet.shape} and {aus.shape}"
        )
    if resnet.shape[:-1] != aus.shape[:-1]:
        raise AlignmentError(
            f"visual channels are not aligned: resnet has {resnet.shape[-2]} frames, "
            f"aus has {aus.shape[-2]}"
        )
    return concat([resnet, aus], axis=-1)


class BranchModel(Module):
    """One modality's regression model with an ordered parameter registry."""

    def __init__(self, config: ModelConfig, modality: Modality):
        if modality not in ("visual", "audio"):
            raise ModalityMismatchError(f"Unknown branch modality {modality!r}")
        self.config = config
        self.modality: Modality = modality
        assert config.dilations is not None

        rng = np.random.default_rng(config.seed)
        with default_dtype(config.precision) as dtype:
            self.dtype = dtype
            self.tcn = TcnEncoder(
                config.input_dim(modality), config.d_model, config.kernel_size, config.dilations, rng
            )
            block_count = config.num_encoder_blocks if modality == "visual" else 0
            self.blocks = [
                TransformerEncoderBlock(config.d_model, config.num_heads, rng, config.layer_norm_eps)
                for _ in range(block_count)
            ]
            self.head = FfnHead(config.d_model, config.ffn_hidden, rng, config.output_dim)

    @property
    def max_len(self) -> int:
        return self.config.max_len(self.modality)

    @property
    def feature_modalities(self) -> list[FeatureModality]:
        return branch_modalities(self.modality, self.config.visual_channels)

    def named_parameters(self, prefix: str = "") -> NamedParameters:
        yield from self.tcn.named_parameters(f"{prefix}tcn.")
        for i, block in enumerate(self.blocks):
            yield from block.named_parameters(f"{prefix}blocks.{i}.")
        yield from self.head.named_parameters(f"{prefix}head.")

    def parameter_registry(self) -> dict[str, Tensor]:
        """Parameters by name, in a stable order."""
        return dict(self.named_parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def forward(self, x: Tensor, mask: np.ndarray) -> Tensor:
        """Predict ``[B, 6]`` from ``[B, T, d_in]`` inputs and a ``[B, T]`` mask."""
        if x.ndim != 3 or x.shape[-1] != self.config.input_dim(self.modality):
            raise ModalityMismatchError(
                f"{self.modality} branch expects [B, T, {self.config.input_dim(self.modality)}], got {x.shape}"
            )
        hidden = self.tcn.forward(x)
        for block in self.blocks:
            hidden = block.forward(hidden, mask)
        return self.head.forward(masked_mean_pool(hidden, mask))

    def batch_inputs(self, batch: Batch) -> tuple[Tensor, np.ndarray]:
        """Build the branch input tensor and mask from a batch."""
        try:
            arrays = [batch.features[m.label] for m in self.feature_modalities]
            mask = batch.masks[self.modality]
        except KeyError as e:
            raise ModalityMismatchError(f"batch lacks {e.args[0]} features for the {self.modality} branch") from e
        tensors = [Tensor(a, dtype=self.dtype) for a in arrays]
        if len(tensors) == 2:
            return concat_visual_channels(*tensors), mask
        return tensors[0], mask

    def forward_batch(self, batch: Batch) -> Tensor:
        x, mask = self.batch_inputs(batch)
        return self.forward(x, mask)

    def predict_batch(self, batch: Batch) -> np.ndarray:
        """Inference-mode predictions ``[B, 6]`` as float64."""
        return self.forward_batch(batch).numpy().astype(np.float64)


def build_branch(config: ModelConfig, modality: Modality) -> BranchModel:
    """Build a branch; the same config and seed give bit-identical parameters."""
    return BranchModel(config, modality)


def branch_forward(model: BranchModel, sequences: Sequence[FeatureSequence]) -> Tensor:
    """Predict one sample's six intensities from its raw feature sequences.

    Args:
        model: Branch to run
        sequences: The branch's feature channels (visual: the configured
            ResNet/AU channels; audio: the Wav2Vec2 sequence)

    Returns:
        Tensor of shape ``[6]``

    Raises:
        ModalityMismatchError: Missing, extra or wrong-modality sequences
        AlignmentError: Visual channels of different raw lengths
    """
    by_modality = {seq.modality: seq for seq in sequences}
    expected = model.feature_modalities
    if len(by_modality) != len(sequences) or set(by_modality) != set(expected):
        raise ModalityMismatchError(
            f"{model.modality} branch needs {[m.label for m in expected]}, "
            f"got {[seq.modality.label for seq in sequences]}"
        )
    lengths = {by_modality[m].length for m in expected}
    if len(lengths) != 1:
        raise AlignmentError(f"visual channels are not aligned: frame counts {sorted(lengths)}")

    tensors: list[Tensor] = []
    mask: np.ndarray | None = None
    for modality in expected:
        matrix, mask = normalize_length(by_modality[modality], model.max_len)
        tensors.append(Tensor(matrix[None], dtype=model.dtype))
    assert mask is not None
    x = concat_visual_channels(*tensors) if len(tensors) == 2 else tensors[0]
    out = model.forward(x, mask[None])
    return reshape(out, (model.config.output_dim,))


def parameter_count(model: Module) -> int:
    """Total number of scalars across a model's parameter registry."""
    return model.parameter_count()


def conv_parameter_count(in_dim: int, out_dim: int, kernel_size: int) -> int:
    return out_dim * in_dim * kernel_size + out_dim


def block_parameter_count(d_model: int) -> int:
    hidden = TransformerEncoderBlock.FFN_MULTIPLIER * d_model
    attention = 4 * (d_model * d_model + d_model)
    norms = 4 * d_model
    feed_forward = d_model * hidden + hidden + hidden * d_model + d_model
    return attention + norms + feed_forward


def head_parameter_count(in_dim: int, hidden_dim: int, out_dim: int = 6) -> int:
    return in_dim * hidden_dim + hidden_dim + hidden_dim * out_dim + out_dim


def expected_parameter_count(config: ModelConfig, modality: Modality) -> int:
    """Closed-form parameter count of a branch built from ``config``."""
    d, k = config.d_model, config.kernel_size
    tcn = conv_parameter_count(config.input_dim(modality), d, k) + (config.tcn_layers - 1) * conv_parameter_count(d, d, k)
    blocks = config.num_encoder_blocks * block_parameter_count(d) if modality == "visual" else 0
    return tcn + blocks + head_parameter_count(d, config.ffn_hidden, config.output_dim)
