"""Evaluation Metrics.

Pearson correlation per emotion, its mean across the six emotions, and MSE.
Everything is computed in float64 whatever precision the model ran at.
"""

import warnings
from collections.abc import Sequence

import numpy as np

from mimicry_cli.dataset import Manifest
from mimicry_cli.models.records import EMOTIONS, EvalReport, PredictionRecord
from mimicry_cli.run_logger import get_logger

logger = get_logger(__name__)


class MetricContractError(ValueError):
    """Raised when metric inputs violate shape or size requirements."""


class ZeroVarianceWarning(UserWarning):
    """A correlation was requested for a constant vector; 0.0 is reported."""


# A vector counts as constant when its standard deviation is this small
# relative to max(1, |mean|)
RELATIVE_FLATNESS = 1e-12


def _as_vector(values: object, name: str) -> np.ndarray:
    array = np.asarray(values, dtype=np.float64)
    if array.ndim != 1:
        raise MetricContractError(f"{name} must be a vector, got shape {array.shape}")
    return array


def _as_table(values: object, name: str) -> np.ndarray:
    array = np.asarray(values, dtype=np.float64)
    if array.ndim != 2 or array.shape[1] != len(EMOTIONS):
        raise MetricContractError(f"{name} must be n x {len(EMOTIONS)}, got shape {array.shape}")
    return array


def _is_flat(values: np.ndarray, variance: float) -> bool:
    return bool(np.sqrt(variance) <= RELATIVE_FLATNESS * max(1.0, abs(float(values.mean()))))


def _pearson(y: np.ndarray, yhat: np.ndarray) -> tuple[float, bool]:
    dy = y - y.mean()
    dyhat = yhat - yhat.mean()
    var_y = float(np.mean(dy * dy))
    var_yhat = float(np.mean(dyhat * dyhat))
    if _is_flat(y, var_y) or _is_flat(yhat, var_yhat):
        return 0.0, True
    cov = float(np.mean(dy * dyhat))
    rho = cov / np.sqrt(var_y * var_yhat)
    return float(np.clip(rho, -1.0, 1.0)), False


def pearson(y: object, yhat: object) -> float:
    """Pearson correlation with population normalization.

    Args:
        y: Reference values, n >= 2
        yhat: Predictions, same length

    Returns:
        Correlation in [-1, 1]; 0.0 (with ZeroVarianceWarning) if either
        vector is constant

    Raises:
        MetricContractError: Length mismatch or fewer than two samples
    """
    y_arr = _as_vector(y, "y")
    yhat_arr = _as_vector(yhat, "yhat")
    if y_arr.shape != yhat_arr.shape:
        raise MetricContractError(f"length mismatch: {y_arr.shape[0]} vs {yhat_arr.shape[0]}")
    if y_arr.shape[0] < 2:
        raise MetricContractError(f"pearson needs at least 2 samples, got {y_arr.shape[0]}")
    rho, degenerate = _pearson(y_arr, yhat_arr)
    if degenerate:
        warnings.warn("zero variance in correlation input; reporting 0.0", ZeroVarianceWarning, stacklevel=2)
    return rho


def mse(y: object, yhat: object) -> tuple[dict[str, float], float]:
    """Mean squared error per emotion and over all cells.

    Raises:
        MetricContractError: Shape mismatch
    """
    y_arr = _as_table(y, "Y")
    yhat_arr = _as_table(yhat, "Yhat")
    if y_arr.shape != yhat_arr.shape:
        raise MetricContractError(f"shape mismatch: {y_arr.shape} vs {yhat_arr.shape}")
    if y_arr.shape[0] == 0:
        raise MetricContractError("mse needs at least one sample")
    squared = (y_arr - yhat_arr) ** 2
    per_dim = {name: float(v) for name, v in zip(EMOTIONS, squared.mean(axis=0))}
    return per_dim, float(squared.mean())


def mean_rho(y: object, yhat: object) -> EvalReport:
    """Per-emotion Pearson correlation, its mean, and MSE.

    Args:
        y: n x 6 labels
        yhat: n x 6 predictions

    Returns:
        EvalReport; constant columns contribute 0.0 and are listed in
        ``zero_variance_dims``

    Raises:
        MetricContractError: Shape mismatch or n < 2
    """
    y_arr = _as_table(y, "Y")
    yhat_arr = _as_table(yhat, "Yhat")
    if y_arr.shape != yhat_arr.shape:
        raise MetricContractError(f"shape mismatch: {y_arr.shape} vs {yhat_arr.shape}")
    n = y_arr.shape[0]
    if n < 2:
        raise MetricContractError(f"mean_rho needs at least 2 samples, got {n}")

    per_dim_rho: dict[str, float] = {}
    degenerate: list[str] = []
    for j, name in enumerate(EMOTIONS):
        rho, flat = _pearson(y_arr[:, j], yhat_arr[:, j])
        per_dim_rho[name] = rho
        if flat:
            degenerate.append(name)

    if degenerate:
        logger.warning("Zero-variance Pearson column", dims=degenerate, n_samples=n)
        warnings.warn(
            f"zero variance in column(s) {', '.join(degenerate)}; rho reported as 0.0",
            ZeroVarianceWarning,
            stacklevel=2,
        )

    per_dim_mse, overall_mse = mse(y_arr, yhat_arr)
    logger.info("Evaluation computed", n_samples=n, mean_rho=sum(per_dim_rho.values()) / len(EMOTIONS))
    return EvalReport(
        per_dim_rho=per_dim_rho,
        mean_rho=sum(per_dim_rho.values()) / len(EMOTIONS),
        per_dim_mse=per_dim_mse,
        overall_mse=overall_mse,
        n_samples=n,
        zero_variance_dims=tuple(degenerate),
    )


def evaluate_predictions(
    records: Sequence[PredictionRecord],
    manifest: Manifest,
    split: str,
) -> EvalReport:
    """Score predictions against a split's labels, matched by sample id.

    Raises:
        MetricContractError: Prediction ids differ from the split's ids or repeat
        UnknownSplitError: For unknown split names
    """
    rows = manifest.split_rows(split)
    by_id = {record.sample_id: record for record in records}
    if len(by_id) != len(records):
        raise MetricContractError("Prediction file repeats a sample id")
    expected = {row.sample_id for row in rows}
    if set(by_id) != expected:
        missing = sorted(expected - set(by_id))
        extra = sorted(set(by_id) - expected)
        raise MetricContractError(
            f"Prediction ids do not match split {split!r}: "
            f"{len(missing)} missing {missing[:10]}, {len(extra)} unexpected {extra[:10]}"
        )
    labels = np.array([row.labels.values for row in rows], dtype=np.float64)
    predictions = np.array([by_id[row.sample_id].values for row in rows], dtype=np.float64)
    return mean_rho(labels, predictions)
