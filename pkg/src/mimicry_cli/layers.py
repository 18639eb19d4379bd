"""Neural Building Blocks.

Dilated causal convolution, the TCN stack, multi-head self-attention, the
pre-norm Transformer encoder block, the two-layer regression head and masked
temporal pooling. All layers map ``[..., T, d_in] -> [..., T, d_out]`` with T
unchanged; layers that mix positions take a ``[..., T]`` validity mask.

Initialization: He-uniform for ReLU-facing weights (convolutions, feed-forward
layers), Xavier-uniform for attention projections, zero biases, unit
layer-norm gains.
"""

import math
from collections.abc import Iterator, Sequence

import numpy as np

from mimicry_cli.autodiff import (
    Tensor,
    add,
    add_bias,
    causal_conv1d,
    get_default_dtype,
    layer_norm,
    masked_mean,
    matmul,
    relu,
    reshape,
    scale,
    softmax,
    transpose,
)

NamedParameters = Iterator[tuple[str, Tensor]]


class LayerContractError(ValueError):
    """Raised when a layer receives input that violates its contract."""


def _he_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _xavier_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def _param(values: np.ndarray, name: str) -> Tensor:
    return Tensor(values, requires_grad=True, name=name, dtype=get_default_dtype())


def _check_mask(x: Tensor, mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != x.shape[:-1]:
        raise LayerContractError(f"mask shape {mask.shape} does not match input {x.shape}")
    if not np.all(mask.any(axis=-1)):
        raise LayerContractError("every sequence needs at least one valid position")
    return mask


class Module:
    """Container of named parameters."""

    def named_parameters(self, prefix: str = "") -> NamedParameters:
        raise NotImplementedError

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())


class CausalConv1dLayer(Module):
    """One dilated causal convolution, ``weight`` is ``[out_dim, in_dim, kernel_size]``."""

    def __init__(
        self,
        in_dim: int,
        out_dim: int,
        kernel_size: int,
        dilation: int,
        rng: np.random.Generator,
    ):
        if dilation < 1 or kernel_size < 1:
            raise LayerContractError("kernel_size and dilation must be positive")
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.kernel_size = kernel_size
        self.dilation = dilation
        fan_in = in_dim * kernel_size
        self.weight = _param(_he_uniform(rng, (out_dim, in_dim, kernel_size), fan_in), "weight")
        self.bias = _param(np.zeros(out_dim), "bias")

    def named_parameters(self, prefix: str = "") -> NamedParameters:
        yield f"{prefix}weight", self.weight
        yield f"{prefix}bias", self.bias

    def forward(self, x: Tensor) -> Tensor:
        """Length-preserving causal convolution (no activation)."""
        if x.ndim < 2 or x.shape[-1] != self.in_dim:
            raise LayerContractError(f"conv expects feature width {self.in_dim}, got input {x.shape}")
        return causal_conv1d(x, self.weight, self.bias, self.dilation)


class TcnEncoder(Module):
    """Stack of causal convolutions, each followed by ReLU, without residuals.

    The first layer projects ``in_dim -> d_model``; the rest keep ``d_model``.
    """

    def __init__(
        self,
        in_dim: int,
        d_model: int,
        kernel_size: int,
        dilations: Sequence[int],
        rng: np.random.Generator,
    ):
        if not dilations:
            raise LayerContractError("TCN needs at least one layer")
        self.layers = [
            CausalConv1dLayer(in_dim if i == 0 else d_model, d_model, kernel_size, d, rng)
            for i, d in enumerate(dilations)
        ]

    @property
    def receptive_field(self) -> int:
        return 1 + sum((layer.kernel_size - 1) * layer.dilation for layer in self.layers)

    def named_parameters(self, prefix: str = "") -> NamedParameters:
        for i, layer in enumerate(self.layers):
            yield from layer.named_parameters(f"{prefix}{i}.")

    def forward(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = relu(layer.forward(x))
        return x


class MultiHeadSelfAttention(Module):
    """Scaled dot-product self-attention over ``num_heads`` heads."""

    def __init__(self, d_model: int, num_heads: int, rng: np.random.Generator):
        if d_model % num_heads != 0:
            raise LayerContractError(f"d_model {d_model} not divisible by num_heads {num_heads}")
        self.d_model = d_model
        self.num_heads = num_heads
        self.head_dim = d_model // num_heads
        shape = (d_model, d_model)
        self.w_query = _param(_xavier_uniform(rng, shape, d_model, d_model), "w_query")
        self.b_query = _param(np.zeros(d_model), "b_query")
        self.w_key = _param(_xavier_uniform(rng, shape, d_model, d_model), "w_key")
        self.b_key = _param(np.zeros(d_model), "b_key")
        self.w_value = _param(_xavier_uniform(rng, shape, d_model, d_model), "w_value")
        self.b_value = _param(np.zeros(d_model), "b_value")
        self.w_out = _param(_xavier_uniform(rng, shape, d_model, d_model), "w_out")
        self.b_out = _param(np.zeros(d_model), "b_out")

    def named_parameters(self, prefix: str = "") -> NamedParameters:
        for name in (
            "w_query", "b_query", "w_key", "b_key", "w_value", "b_value", "w_out", "b_out"
        ):
            yield f"{prefix}{name}", getattr(self, name)

    def _split_heads(self, x: Tensor) -> Tensor:
        batch, steps, _ = x.shape
        return transpose(reshape(x, (batch, steps, self.num_heads, self.head_dim)), (0, 2, 1, 3))

    def _attend(self, x: Tensor, mask: np.ndarray) -> tuple[Tensor, Tensor]:
        batch, steps, _ = x.shape
        query = self._split_heads(add_bias(matmul(x, self.w_query), self.b_query))
        key = self._split_heads(add_bias(matmul(x, self.w_key), self.b_key))
        value = self._split_heads(add_bias(matmul(x, self.w_value), self.b_value))

        scores = scale(matmul(query, transpose(key, (0, 1, 3, 2))), 1.0 / math.sqrt(self.head_dim))
        weights = softmax(scores, axis=-1, mask=mask[:, None, None, :])
        context = transpose(matmul(weights, value), (0, 2, 1, 3))
        merged = reshape(context, (batch, steps, self.d_model))
        return add_bias(matmul(merged, self.w_out), self.b_out), weights

    def forward(self, x: Tensor, mask: np.ndarray) -> Tensor:
        """Attend over valid key positions; ``x`` is ``[B, T, d_model]``."""
        out, _ = self._attend(x, mask)
        return out


class TransformerEncoderBlock(Module):
    """Pre-norm encoder block: ``h = x + MHA(LN(x))``, ``out = h + FFN(LN(h))``.

    The position-wise feed-forward layer has hidden width ``4 * d_model`` and ReLU.
    No positional encoding is added; the TCN in front already encodes order.
    """

    FFN_MULTIPLIER = 4

    def __init__(self, d_model: int, num_heads: int, rng: np.random.Generator, eps: float = 1e-5):
        self.d_model = d_model
        self.eps = eps
        hidden = self.FFN_MULTIPLIER * d_model
        self.norm1_gamma = _param(np.ones(d_model), "norm1_gamma")
        self.norm1_beta = _param(np.zeros(d_model), "norm1_beta")
        self.attention = MultiHeadSelfAttention(d_model, num_heads, rng)
        self.norm2_gamma = _param(np.ones(d_model), "norm2_gamma")
        self.norm2_beta = _param(np.zeros(d_model), "norm2_beta")
        self.ff_w1 = _param(_he_uniform(rng, (d_model, hidden), d_model), "ff_w1")
        self.ff_b1 = _param(np.zeros(hidden), "ff_b1")
        self.ff_w2 = _param(_he_uniform(rng, (hidden, d_model), hidden), "ff_w2")
        self.ff_b2 = _param(np.zeros(d_model), "ff_b2")

    @property
    def num_heads(self) -> int:
        return self.attention.num_heads

    def named_parameters(self, prefix: str = "") -> NamedParameters:
        yield f"{prefix}norm1_gamma", self.norm1_gamma
        yield f"{prefix}norm1_beta", self.norm1_beta
        yield from self.attention.named_parameters(f"{prefix}attention.")
        yield f"{prefix}norm2_gamma", self.norm2_gamma
        yield f"{prefix}norm2_beta", self.norm2_beta
        yield f"{prefix}ff_w1", self.ff_w1
        yield f"{prefix}ff_b1", self.ff_b1
        yield f"{prefix}ff_w2", self.ff_w2
        yield f"{prefix}ff_b2", self.ff_b2

    def _prepare(self, x: Tensor, mask: np.ndarray) -> tuple[Tensor, np.ndarray, bool]:
        if x.ndim not in (2, 3) or x.shape[-1] != self.d_model:
            raise LayerContractError(f"encoder block expects [..., T, {self.d_model}], got {x.shape}")
        single = x.ndim == 2
        mask = np.asarray(mask, dtype=bool)
        if single:
            x = reshape(x, (1,) + x.shape)
            mask = mask[None]
        return x, _check_mask(x, mask), single

    def forward(self, x: Tensor, mask: np.ndarray) -> Tensor:
        """Apply the block to ``[T, d]`` or ``[B, T, d]`` input.

        Masked positions never influence any valid position's output.

        Raises:
            LayerContractError: On width mismatch, mask shape mismatch, or a
                fully masked sequence
        """
        batched, mask, single = self._prepare(x, mask)
        normed = layer_norm(batched, self.norm1_gamma, self.norm1_beta, self.eps)
        hidden = add(batched, self.attention.forward(normed, mask))
        normed = layer_norm(hidden, self.norm2_gamma, self.norm2_beta, self.eps)
        expanded = relu(add_bias(matmul(normed, self.ff_w1), self.ff_b1))
        out = add(hidden, add_bias(matmul(expanded, self.ff_w2), self.ff_b2))
        return reshape(out, out.shape[1:]) if single else out

    def attention_weights(self, x: Tensor, mask: np.ndarray) -> np.ndarray:
        """Attention weights ``[B, heads, T, T]`` (``[heads, T, T]`` for 2-D input)."""
        batched, mask, single = self._prepare(x, mask)
        normed = layer_norm(batched, self.norm1_gamma, self.norm1_beta, self.eps)
        _, weights = self.attention._attend(normed, mask)
        values = weights.numpy()
        return values[0] if single else values


class FfnHead(Module):
    """``ReLU(x W1 + b1) W2 + b2`` mapping a pooled vector to the six intensities."""

    def __init__(self, in_dim: int, hidden_dim: int, rng: np.random.Generator, out_dim: int = 6):
        self.in_dim = in_dim
        self.hidden_dim = hidden_dim
        self.out_dim = out_dim
        self.w1 = _param(_he_uniform(rng, (in_dim, hidden_dim), in_dim), "w1")
        self.b1 = _param(np.zeros(hidden_dim), "b1")
        self.w2 = _param(_he_uniform(rng, (hidden_dim, out_dim), hidden_dim), "w2")
        self.b2 = _param(np.zeros(out_dim), "b2")

    def named_parameters(self, prefix: str = "") -> NamedParameters:
        yield f"{prefix}w1", self.w1
        yield f"{prefix}b1", self.b1
        yield f"{prefix}w2", self.w2
        yield f"{prefix}b2", self.b2

    def forward(self, pooled: Tensor) -> Tensor:
        if pooled.ndim not in (1, 2) or pooled.shape[-1] != self.in_dim:
            raise LayerContractError(f"head expects width {self.in_dim}, got {pooled.shape}")
        single = pooled.ndim == 1
        x = reshape(pooled, (1, self.in_dim)) if single else pooled
        hidden = relu(add_bias(matmul(x, self.w1), self.b1))
        out = add_bias(matmul(hidden, self.w2), self.b2)
        return reshape(out, (self.out_dim,)) if single else out


def masked_mean_pool(x: Tensor, mask: np.ndarray) -> Tensor:
    """Average ``[..., T, d]`` over valid time positions only.

    Raises:
        LayerContractError: If a sequence has no valid position
    """
    if x.ndim < 2:
        raise LayerContractError(f"pooling expects [..., T, d], got {x.shape}")
    return masked_mean(x, _check_mask(x, mask))
