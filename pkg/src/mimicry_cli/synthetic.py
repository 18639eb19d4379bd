"""Synthetic Dataset Generator.

Stands in for real extracted features. Each sample draws a latent vector ``z``;
every feature channel carries a fixed linear projection of ``z`` scaled by a
slow per-sample temporal envelope plus frame noise. Labels are a squashed,
noisy linear-plus-tanh function of ``z``:

    u      = W z + 0.3 * tanh(V z)            (standardized per dimension)
    labels = sigmoid(s * u + (0.1 + (1 - s)) * e),   e ~ N(0, 1)

With ``s = 1`` the per-sequence feature means determine the labels up to a
little noise; with ``s = 0`` labels are independent of the features.
"""

from pathlib import Path

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from mimicry_cli.dataset import SPLITS, Manifest, ManifestRow, write_manifest
from mimicry_cli.feature_io import FeatureModality, FeatureSequence, write_feature_file
from mimicry_cli.models.records import EMOTIONS, LabelVector
from mimicry_cli.run_logger import get_logger

logger = get_logger(__name__)

LATENT_DIM = 4
MANIFEST_NAME = "manifest.csv"
FEATURE_DIR = "features"
FILE_SUFFIX = {
    FeatureModality.VISUAL_RESNET: "resnet",
    FeatureModality.VISUAL_AUS: "aus",
    FeatureModality.AUDIO_W2V: "audio",
}


class SyntheticSpec(BaseModel):
    """Shape of a synthetic dataset."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    counts: dict[str, int] = Field(
        default_factory=lambda: {"train": 64, "validation": 32, "test": 32},
        description="Samples per split",
    )
    seed: int = Field(0, ge=0)
    signal_strength: float = Field(1.0, ge=0.0, le=1.0)
    visual_len_range: tuple[int, int] = Field((16, 48), description="Raw visual frames, inclusive")
    audio_len_range: tuple[int, int] = Field((16, 48), description="Raw audio windows, inclusive")
    noise_scale: float = Field(0.5, ge=0.0, description="Per-frame feature noise std")

    @model_validator(mode="after")
    def check_ranges(self) -> "SyntheticSpec":
        unknown = set(self.counts) - set(SPLITS)
        if unknown:
            raise ValueError(f"unknown split(s): {sorted(unknown)}")
        if any(n < 0 for n in self.counts.values()):
            raise ValueError("split counts must be non-negative")
        for name, (low, high) in (
            ("visual_len_range", self.visual_len_range),
            ("audio_len_range", self.audio_len_range),
        ):
            if not 1 <= low <= high:
                raise ValueError(f"{name} must satisfy 1 <= low <= high, got ({low}, {high})")
        return self


def _envelope(rng: np.random.Generator, length: int) -> np.ndarray:
    t = np.arange(length, dtype=np.float64)
    period = rng.uniform(8.0, 24.0)
    phase = rng.uniform(0.0, 2 * np.pi)
    return 1.0 + 0.3 * np.sin(2 * np.pi * t / period + phase)


def _channel(
    rng: np.random.Generator,
    mixing: np.ndarray,
    z: np.ndarray,
    envelope: np.ndarray,
    noise_scale: float,
) -> np.ndarray:
    signal = envelope[:, None] * (mixing @ z)[None, :]
    noise = noise_scale * rng.standard_normal((len(envelope), mixing.shape[0]))
    return (signal + noise).astype(np.float32)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def generate_synthetic_dataset(spec: SyntheticSpec, out_dir: str | Path) -> Manifest:
    """Write feature files and ``manifest.csv`` under ``out_dir``.

    The same SyntheticSpec always produces byte-identical files.

    Args:
        spec: Counts per split, seed, planted signal strength, length ranges
        out_dir: Destination directory (created if missing)

    Returns:
        The manifest that was written
    """
    out_dir = Path(out_dir)
    rng = np.random.default_rng(spec.seed)

    mixing = {
        modality: rng.standard_normal((modality.dim, LATENT_DIM)) / np.sqrt(LATENT_DIM)
        for modality in FeatureModality
    }
    linear = rng.standard_normal((len(EMOTIONS), LATENT_DIM)) / np.sqrt(LATENT_DIM)
    bend = rng.standard_normal((len(EMOTIONS), LATENT_DIM))

    plan = [(split, i) for split in SPLITS for i in range(spec.counts.get(split, 0))]
    latents = rng.standard_normal((len(plan), LATENT_DIM))
    noise = rng.standard_normal((len(plan), len(EMOTIONS)))

    raw_targets = latents @ linear.T + 0.3 * np.tanh(latents @ bend.T)
    if len(plan) > 1:
        spread = raw_targets.std(axis=0)
        raw_targets = (raw_targets - raw_targets.mean(axis=0)) / np.where(spread > 0, spread, 1.0)
    s = spec.signal_strength
    labels = _sigmoid(s * raw_targets + (0.1 + (1.0 - s)) * noise)

    rows: list[ManifestRow] = []
    for k, (split, i) in enumerate(plan):
        sample_id = f"{split}-{i:04d}"
        z = latents[k]
        visual_len = int(rng.integers(spec.visual_len_range[0], spec.visual_len_range[1] + 1))
        audio_len = int(rng.integers(spec.audio_len_range[0], spec.audio_len_range[1] + 1))
        visual_env = _envelope(rng, visual_len)
        audio_env = _envelope(rng, audio_len)

        paths: dict[FeatureModality, Path] = {}
        for modality in FeatureModality:
            env = audio_env if modality is FeatureModality.AUDIO_W2V else visual_env
            values = _channel(rng, mixing[modality], z, env, spec.noise_scale)
            relative = Path(FEATURE_DIR) / f"{sample_id}.{FILE_SUFFIX[modality]}.emif"
            write_feature_file(
                FeatureSequence(sample_id=sample_id, modality=modality, values=values),
                out_dir / relative,
            )
            paths[modality] = relative

        rows.append(
            ManifestRow(
                sample_id=sample_id,
                split=split,
                visual_resnet_path=paths[FeatureModality.VISUAL_RESNET],
                visual_aus_path=paths[FeatureModality.VISUAL_AUS],
                audio_path=paths[FeatureModality.AUDIO_W2V],
                labels=LabelVector(values=tuple(float(v) for v in labels[k])),
            )
        )

    manifest = Manifest(root=out_dir, rows=tuple(rows))
    write_manifest(manifest, out_dir / MANIFEST_NAME)
    logger.info(
        "Synthetic dataset written",
        out_dir=out_dir,
        seed=spec.seed,
        signal_strength=spec.signal_strength,
        **manifest.counts(),
    )
    return manifest
