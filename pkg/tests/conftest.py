"""Shared pytest fixtures and configuration."""

from collections.abc import Callable, Sequence

import numpy as np
import pytest

from mimicry_cli.autodiff import Tape, Tensor, default_dtype
from mimicry_cli.models.config import ModelConfig, TrainConfig
from mimicry_cli.run_logger import configure_run_logging
from mimicry_cli.synthetic import SyntheticSpec, generate_synthetic_dataset


@pytest.fixture(autouse=True)
def run_log(tmp_path):
    """Send structured logs of every test to a temporary file."""
    log_file = tmp_path / "test-run.log"
    configure_run_logging(log_file, "debug")
    return log_file


@pytest.fixture
def float64():
    """Create tensors at 64-bit precision for the duration of a test."""
    with default_dtype(np.float64) as dtype:
        yield dtype


def _check_gradients(
    loss_fn: Callable[[], Tensor],
    tensors: Sequence[Tensor],
    step: float = 1e-6,
    rtol: float = 1e-4,
    atol: float = 1e-7,
    max_elements: int | None = None,
    seed: int = 0,
) -> float:
    """Compare tape gradients of ``loss_fn`` with central finite differences.

    The default ``step`` of 1e-6 keeps perturbations from crossing ReLU kinks
    and softmax curvature in the composed layers; checks whose loss is
    bilinear in its inputs pass ``step=1e-3``.

    Returns:
        The largest relative discrepancy seen
    """
    for t in tensors:
        t.grad = None
    with Tape() as tape:
        loss = loss_fn()
    tape.backward(loss)

    rng = np.random.default_rng(seed)
    worst = 0.0
    for t in tensors:
        assert t.requires_grad, f"{t.name or 'tensor'} must require gradients"
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad
        flat = t.data.reshape(-1)
        indices = np.arange(flat.size)
        if max_elements is not None and flat.size > max_elements:
            indices = rng.choice(flat.size, size=max_elements, replace=False)
        for i in indices:
            original = flat[i]
            flat[i] = original + step
            plus = loss_fn().item()
            flat[i] = original - step
            minus = loss_fn().item()
            flat[i] = original
            numeric = (plus - minus) / (2 * step)
            exact = float(analytic.reshape(-1)[i])
            error = abs(exact - numeric)
            scale = max(abs(exact), abs(numeric))
            assert error <= atol + rtol * scale, (
                f"{t.name or 'tensor'}[{i}]: analytic {exact!r} vs numeric {numeric!r}"
            )
            if scale > 0:
                worst = max(worst, error / scale)
    return worst


@pytest.fixture
def gradcheck():
    """Finite-difference gradient checker (use together with ``float64``)."""
    return _check_gradients


@pytest.fixture
def tiny_model_config():
    """64-bit branch config small enough for exhaustive gradient checks."""
    return ModelConfig(
        d_model=8,
        num_heads=2,
        num_encoder_blocks=2,
        tcn_layers=3,
        kernel_size=3,
        max_visual_len=8,
        max_audio_len=8,
        ffn_hidden=8,
        precision="float64",
        seed=11,
    )


@pytest.fixture
def desk_model_config():
    return ModelConfig(
        d_model=16,
        num_heads=4,
        num_encoder_blocks=2,
        tcn_layers=3,
        kernel_size=3,
        max_visual_len=12,
        max_audio_len=12,
        ffn_hidden=16,
        seed=0,
    )


@pytest.fixture
def quick_train_config():
    return TrainConfig(learning_rate=1e-3, batch_size=4, max_epochs=3, seed=0)


@pytest.fixture
def small_dataset(tmp_path):
    """Synthetic dataset with 10/6/6 samples and raw lengths 6-18."""
    spec = SyntheticSpec(
        counts={"train": 10, "validation": 6, "test": 6},
        seed=3,
        signal_strength=1.0,
        visual_len_range=(6, 18),
        audio_len_range=(6, 18),
    )
    out_dir = tmp_path / "data"
    manifest = generate_synthetic_dataset(spec, out_dir)
    return out_dir / "manifest.csv", manifest
