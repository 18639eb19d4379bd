"""Adam Optimizer.

Bias-corrected Adam over a named parameter registry. Moments are kept per
parameter name so they can be checkpointed alongside the weights.
"""

from collections.abc import Mapping

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from mimicry_cli.autodiff import Tensor


class NonFiniteGradientError(FloatingPointError):
    """Raised when a gradient holds NaN or infinity; no parameter is updated."""

    def __init__(self, message: str, diagnostics: dict[str, int]):
        super().__init__(message)
        self.diagnostics = diagnostics


class OptimizerState(BaseModel):
    """First/second moments, step count and hyperparameters."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    lr: float = Field(3e-5, ge=0)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    eps: float = Field(1e-8, ge=0)
    t: int = Field(0, ge=0, description="Steps taken")
    m: dict[str, np.ndarray] = Field(default_factory=dict)
    v: dict[str, np.ndarray] = Field(default_factory=dict)

    def hyperparameters(self) -> dict[str, float | int]:
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps, "t": self.t}


def _check_finite(grads: Mapping[str, np.ndarray]) -> None:
    bad = {name: int(np.size(g) - np.count_nonzero(np.isfinite(g))) for name, g in grads.items()}
    bad = {name: count for name, count in bad.items() if count}
    if bad:
        first = next(iter(bad))
        raise NonFiniteGradientError(
            f"Non-finite gradient in {len(bad)} parameter(s), first {first!r} "
            f"({bad[first]} bad element(s))",
            diagnostics=bad,
        )


def adam_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, np.ndarray | None],
    state: OptimizerState,
) -> OptimizerState:
    """Apply one Adam update in place of ``params[name].data``.

    A missing gradient counts as zero.

    Args:
        params: Named parameters
        grads: Gradients by the same names
        state: Moments and step count; advanced by exactly one step

    Returns:
        The updated state (the same object)

    Raises:
        NonFiniteGradientError: If any gradient is non-finite; nothing changes
        ValueError: On gradient/parameter shape disagreement
    """
    dense: dict[str, np.ndarray] = {}
    for name, param in params.items():
        g = grads.get(name)
        g = np.zeros_like(param.data) if g is None else np.asarray(g)
        if g.shape != param.shape:
            raise ValueError(f"Gradient for {name!r} has shape {g.shape}, parameter has {param.shape}")
        dense[name] = g
    _check_finite(dense)

    state.t += 1
    correction1 = 1.0 - state.beta1**state.t
    correction2 = 1.0 - state.beta2**state.t
    for name, param in params.items():
        g = dense[name].astype(np.float64)
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1.0 - state.beta1) * g if m is None else state.beta1 * m + (1.0 - state.beta1) * g
        v = (1.0 - state.beta2) * g * g if v is None else state.beta2 * v + (1.0 - state.beta2) * g * g
        state.m[name] = m
        state.v[name] = v
        m_hat = m / correction1
        v_hat = v / correction2
        update = state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        param.data = (param.data - update).astype(param.dtype)
    return state
