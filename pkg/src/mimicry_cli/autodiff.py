"""Dense Tensors with Tape-Based Reverse-Mode Differentiation.

Every differentiable operation executed while a :class:`Tape` is active is
recorded together with the state its backward rule needs. ``Tape.backward``
replays the records in reverse execution order and accumulates gradients into
``Tensor.grad``.

Outside an active tape the same operations run as plain forward computations
(inference mode): nothing is recorded and outputs never require gradients.

Shapes are strict. Elementwise operations require identical shapes; the only
broadcasts are the explicit ones (``add_bias`` along the feature axis and the
boolean masks of ``softmax`` / ``masked_mean``). Nothing broadcasts along time.
"""

from __future__ import annotations

import contextlib
import contextvars
from collections.abc import Callable, Iterator, Sequence
from dataclasses import dataclass
from typing import Any

import numpy as np

BackwardFn = Callable[[np.ndarray], tuple[np.ndarray | None, ...]]

_DEFAULT_DTYPE: contextvars.ContextVar[np.dtype] = contextvars.ContextVar(
    "mimicry_default_dtype", default=np.dtype(np.float32)
)
_ACTIVE_TAPE: contextvars.ContextVar[Tape | None] = contextvars.ContextVar(
    "mimicry_active_tape", default=None
)

_SUPPORTED_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


class ShapeError(ValueError):
    """Raised when operand shapes violate an operation's contract."""


class MaskError(ValueError):
    """Raised when a mask leaves a reduction with no valid position."""


class TapeError(RuntimeError):
    """Raised on misuse of the computation tape."""


def get_default_dtype() -> np.dtype:
    """Return the dtype new tensors are created with."""
    return _DEFAULT_DTYPE.get()


@contextlib.contextmanager
def default_dtype(dtype: Any) -> Iterator[np.dtype]:
    """Temporarily change the dtype used for new tensors.

    Training runs at float32; gradient-check suites wrap model construction in
    ``default_dtype(np.float64)``.

    Args:
        dtype: ``np.float32`` or ``np.float64`` (or their names)

    Yields:
        The active dtype
    """
    resolved = np.dtype(dtype)
    if resolved not in _SUPPORTED_DTYPES:
        raise ValueError(f"Unsupported tensor dtype: {resolved}")
    token = _DEFAULT_DTYPE.set(resolved)
    try:
        yield resolved
    finally:
        _DEFAULT_DTYPE.reset(token)


class Tensor:
    """Dense n-dimensional array with optional gradient tracking.

    ``data`` is never mutated in place by this module; optimizers rebind it.
    ``grad`` is populated by :meth:`Tape.backward` and has the shape of ``data``.
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "tape")

    def __init__(
        self,
        data: Any,
        requires_grad: bool = False,
        name: str | None = None,
        dtype: Any = None,
    ):
        self.data: np.ndarray = np.array(data, dtype=dtype or get_default_dtype())
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self.tape: Tape | None = None

    @classmethod
    def _wrap(cls, data: np.ndarray, requires_grad: bool) -> Tensor:
        out = cls.__new__(cls)
        out.data = data
        out.requires_grad = requires_grad
        out.grad = None
        out.name = None
        out.tape = None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        """Return a copy of the values."""
        return self.data.copy()

    def item(self) -> float:
        if self.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def __add__(self, other: Tensor) -> Tensor:
        return add(self, other)

    def __sub__(self, other: Tensor) -> Tensor:
        return sub(self, other)

    def __mul__(self, other: Tensor | float) -> Tensor:
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self) -> Tensor:
        return scale(self, -1.0)

    def __matmul__(self, other: Tensor) -> Tensor:
        return matmul(self, other)

    def __repr__(self) -> str:
        label = f"{self.name}, " if self.name else ""
        return f"Tensor({label}shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"


@dataclass
class _Record:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: BackwardFn


class Tape:
    """Ordered record of executed differentiable operations.

    Usage::

        with Tape() as tape:
            loss = mse_loss(model.forward(x, mask), target)
        tape.backward(loss)

    A tape can be replayed once. A second ``backward`` raises :class:`TapeError`
    instead of accumulating gradients twice.
    """

    def __init__(self) -> None:
        self._records: list[_Record] = []
        self._consumed = False
        self._token: contextvars.Token | None = None

    def __enter__(self) -> Tape:
        if self._token is not None:
            raise TapeError("Tape is already active")
        if self._consumed:
            raise TapeError("Cannot record on a consumed tape")
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *exc_info: object) -> None:
        if self._token is not None:
            _ACTIVE_TAPE.reset(self._token)
            self._token = None

    def __len__(self) -> int:
        return len(self._records)

    @property
    def consumed(self) -> bool:
        return self._consumed

    @property
    def ops(self) -> list[str]:
        """Names of the recorded operations in execution order."""
        return [record.op for record in self._records]

    def _record(self, record: _Record) -> None:
        if self._consumed:
            raise TapeError("Cannot record on a consumed tape")
        self._records.append(record)

    def backward(self, loss: Tensor) -> None:
        """Populate gradients of ``loss`` for every tracked tensor on this tape.

        Args:
            loss: Single-element tensor produced by an operation on this tape

        Raises:
            ShapeError: If loss is not a scalar
            TapeError: If the tape was already replayed or loss is not on it
        """
        if loss.size != 1:
            raise ShapeError(f"backward() needs a scalar loss, got shape {loss.shape}")
        if self._consumed:
            raise TapeError("Tape already consumed by a previous backward pass")
        if loss.tape is not self:
            raise TapeError("Loss is not connected to this tape")

        loss.grad = np.ones_like(loss.data)
        for record in reversed(self._records):
            upstream = record.output.grad
            if upstream is None:
                continue
            for tensor, grad in zip(record.inputs, record.backward(upstream)):
                if grad is None or not tensor.requires_grad:
                    continue
                _accumulate(tensor, grad)

        self._consumed = True
        # saved activations are no longer needed
        self._records.clear()


def backward(loss: Tensor) -> None:
    """Replay the tape that produced ``loss``.

    Raises:
        ShapeError: If loss is not a scalar
        TapeError: If loss was not recorded on a tape, or the tape is consumed
    """
    if loss.size != 1:
        raise ShapeError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if loss.tape is None:
        raise TapeError("Loss is not connected to a recorded tape")
    loss.tape.backward(loss)


def _accumulate(tensor: Tensor, grad: np.ndarray) -> None:
    if grad.shape != tensor.shape:
        raise ShapeError(f"Gradient shape {grad.shape} does not match tensor shape {tensor.shape}")
    grad = grad.astype(tensor.dtype, copy=False)
    tensor.grad = grad.copy() if tensor.grad is None else tensor.grad + grad


def _emit(op: str, inputs: Sequence[Tensor], data: np.ndarray, backward_fn: BackwardFn) -> Tensor:
    tape = _ACTIVE_TAPE.get()
    tracked = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor._wrap(data, requires_grad=tracked)
    if tracked:
        assert tape is not None
        tape._record(_Record(op=op, inputs=tuple(inputs), output=out, backward=backward_fn))
        out.tape = tape
    return out


def _require_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


# Elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape("add", a, b)
    return _emit("add", (a, b), a.data + b.data, lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape("sub", a, b)
    return _emit("sub", (a, b), a.data - b.data, lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape("mul", a, b)
    a_data, b_data = a.data, b.data
    return _emit("mul", (a, b), a_data * b_data, lambda g: (g * b_data, g * a_data))


def scale(x: Tensor, factor: float) -> Tensor:
    """Multiply by a constant."""
    c = x.dtype.type(factor)
    return _emit("scale", (x,), x.data * c, lambda g: (g * c,))


def add_bias(x: Tensor, bias: Tensor) -> Tensor:
    """Add a feature-axis bias vector to every position of ``x``."""
    if bias.ndim != 1 or x.ndim < 1 or bias.shape[0] != x.shape[-1]:
        raise ShapeError(f"add_bias: bias {bias.shape} does not match feature axis of {x.shape}")
    width = bias.shape[0]
    return _emit(
        "add_bias",
        (x, bias),
        x.data + bias.data,
        lambda g: (g, g.reshape(-1, width).sum(axis=0)),
    )


def relu(x: Tensor) -> Tensor:
    """Elementwise ``max(0, x)``; the gradient at exactly 0 is 0."""
    positive = x.data > 0
    out = np.where(positive, x.data, x.dtype.type(0))
    return _emit("relu", (x,), out, lambda g: (g * positive,))


# Linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes.

    Supported forms: ``[..., m, k] @ [k, n]`` (shared right operand) and
    ``[..., m, k] @ [..., k, n]`` with identical leading axes.

    Raises:
        ShapeError: Naming both shapes when the forms or inner extents disagree
    """
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs matrices, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    shared_right = b.ndim == 2
    if not shared_right and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul batch axes differ: {a.shape} @ {b.shape}")

    a_data, b_data = a.data, b.data

    def backward_fn(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        grad_a = g @ np.swapaxes(b_data, -1, -2)
        if shared_right:
            k, n = b_data.shape
            grad_b = a_data.reshape(-1, k).T @ g.reshape(-1, n)
        else:
            grad_b = np.swapaxes(a_data, -1, -2) @ g
        return grad_a, grad_b

    return _emit("matmul", (a, b), a_data @ b_data, backward_fn)


def causal_conv1d(x: Tensor, weight: Tensor, bias: Tensor, dilation: int) -> Tensor:
    """Dilated causal 1-D convolution along the time axis.

    ``y[t] = bias + sum_j weight[:, :, j] @ x[t - (k - 1 - j) * dilation]`` with
    out-of-range inputs treated as zero, so the output keeps the input length
    and position ``t`` only sees inputs at times ``<= t``.

    Args:
        x: ``[..., T, in_dim]``
        weight: ``[out_dim, in_dim, kernel_size]``
        bias: ``[out_dim]``
        dilation: Positive tap spacing

    Returns:
        ``[..., T, out_dim]``
    """
    if dilation < 1:
        raise ShapeError(f"dilation must be positive, got {dilation}")
    if weight.ndim != 3 or x.ndim < 2 or weight.shape[1] != x.shape[-1]:
        raise ShapeError(f"causal_conv1d: weight {weight.shape} does not match input {x.shape}")
    out_dim, in_dim, kernel_size = weight.shape
    if bias.shape != (out_dim,):
        raise ShapeError(f"causal_conv1d: bias {bias.shape} does not match out_dim {out_dim}")

    x_data, w_data = x.data, weight.data
    steps = x_data.shape[-2]
    shifts = [((kernel_size - 1 - j) * dilation, j) for j in range(kernel_size)]

    out = np.broadcast_to(bias.data, x_data.shape[:-1] + (out_dim,)).copy()
    for shift, j in shifts:
        if shift >= steps:
            continue
        out[..., shift:, :] += x_data[..., : steps - shift, :] @ w_data[:, :, j].T

    def backward_fn(g: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        grad_x = np.zeros_like(x_data)
        grad_w = np.zeros_like(w_data)
        for shift, j in shifts:
            if shift >= steps:
                continue
            g_part = g[..., shift:, :]
            grad_x[..., : steps - shift, :] += g_part @ w_data[:, :, j]
            x_part = x_data[..., : steps - shift, :]
            grad_w[:, :, j] += g_part.reshape(-1, out_dim).T @ x_part.reshape(-1, in_dim)
        return grad_x, grad_w, g.reshape(-1, out_dim).sum(axis=0)

    return _emit("causal_conv1d", (x, weight, bias), out, backward_fn)


# Normalization


def softmax(x: Tensor, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Numerically stable softmax along ``axis``.

    Args:
        x: Logits
        axis: Normalized axis
        mask: Optional boolean array broadcastable to ``x``; False positions get
            a logit of minus infinity, so their weight and gradient are exactly 0

    Raises:
        MaskError: If a slice along ``axis`` has no valid position
    """
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"softmax axis {axis} invalid for shape {x.shape}")
    logits = x.data if mask is None else np.where(mask, x.data, -np.inf)
    peak = np.max(logits, axis=axis, keepdims=True)
    if not np.all(np.isfinite(peak)):
        raise MaskError("softmax slice has no valid position")
    exps = np.exp(logits - peak)
    probs = exps / exps.sum(axis=axis, keepdims=True)

    def backward_fn(g: np.ndarray) -> tuple[np.ndarray]:
        return (probs * (g - (g * probs).sum(axis=axis, keepdims=True)),)

    return _emit("softmax", (x,), probs, backward_fn)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each position over the feature axis, then apply ``gamma``/``beta``.

    A zero-variance row normalizes to exactly zero before the affine map.
    """
    width = x.shape[-1] if x.ndim else 0
    if gamma.shape != (width,) or beta.shape != (width,):
        raise ShapeError(
            f"layer_norm: gamma {gamma.shape} / beta {beta.shape} do not match feature axis of {x.shape}"
        )
    x_data, g_data = x.data, gamma.data
    centered = x_data - x_data.mean(axis=-1, keepdims=True)
    variance = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(variance + x.dtype.type(eps))
    normed = np.where(variance > 0, centered * inv_std, x.dtype.type(0))
    out = normed * g_data + beta.data

    def backward_fn(g: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        g_normed = g * g_data
        grad_x = (inv_std / width) * (
            width * g_normed
            - g_normed.sum(axis=-1, keepdims=True)
            - normed * (g_normed * normed).sum(axis=-1, keepdims=True)
        )
        grad_gamma = (g * normed).reshape(-1, width).sum(axis=0)
        grad_beta = g.reshape(-1, width).sum(axis=0)
        return grad_x, grad_gamma, grad_beta

    return _emit("layer_norm", (x, gamma, beta), out, backward_fn)


# Structure


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    """Concatenate along ``axis``; all other extents must agree."""
    if not tensors:
        raise ShapeError("concat needs at least one tensor")
    first = tensors[0]
    axis = axis % first.ndim
    for t in tensors[1:]:
        if t.ndim != first.ndim or any(
            t.shape[i] != first.shape[i] for i in range(first.ndim) if i != axis
        ):
            raise ShapeError(f"concat: shape {t.shape} incompatible with {first.shape} on axis {axis}")
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward_fn(g: np.ndarray) -> tuple[np.ndarray, ...]:
        return tuple(np.split(g, bounds, axis=axis))

    return _emit("concat", tuple(tensors), np.concatenate([t.data for t in tensors], axis=axis), backward_fn)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    original = x.shape
    return _emit("reshape", (x,), x.data.reshape(tuple(shape)), lambda g: (g.reshape(original),))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _emit("transpose", (x,), np.transpose(x.data, axes), lambda g: (np.transpose(g, inverse),))


# Reductions


def sum_all(x: Tensor) -> Tensor:
    shape, dtype = x.shape, x.dtype
    return _emit("sum", (x,), np.asarray(x.data.sum()), lambda g: (np.full(shape, g, dtype=dtype),))


def mean_all(x: Tensor) -> Tensor:
    shape, dtype, count = x.shape, x.dtype, x.size
    return _emit("mean", (x,), np.asarray(x.data.mean()), lambda g: (np.full(shape, g / count, dtype=dtype),))


def masked_mean(x: Tensor, mask: np.ndarray) -> Tensor:
    """Mean over the time axis restricted to valid positions.

    Args:
        x: ``[..., T, d]``
        mask: Boolean ``[..., T]``; invalid rows never enter the result

    Returns:
        ``[..., d]``

    Raises:
        MaskError: If any sequence has no valid position
    """
    mask = np.asarray(mask, dtype=bool)
    if x.ndim < 2 or mask.shape != x.shape[:-1]:
        raise ShapeError(f"masked_mean: mask {mask.shape} does not match {x.shape}")
    weights = mask[..., None]
    counts = weights.sum(axis=-2).astype(x.dtype)
    if np.any(counts == 0):
        raise MaskError("masked_mean over a sequence with no valid position")
    out = np.where(weights, x.data, x.dtype.type(0)).sum(axis=-2) / counts

    def backward_fn(g: np.ndarray) -> tuple[np.ndarray]:
        return (np.where(weights, (g / counts)[..., None, :], x.dtype.type(0)),)

    return _emit("masked_mean", (x,), out, backward_fn)
