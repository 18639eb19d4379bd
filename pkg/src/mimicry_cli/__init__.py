"""Emotional Mimicry Intensity CLI.

Per-modality regression of six self-reported emotion intensities from
pre-extracted visual and audio feature sequences, with late fusion.
"""

__version__ = "0.1.0"
__all__ = [
    "autodiff",
    "layers",
    "model",
    "feature_io",
    "dataset",
    "synthetic",
    "metrics",
    "optimizer",
    "scheduler",
    "checkpoint",
    "trainer",
    "fusion",
    "output_formatter",
    "config_loader",
    "run_logger",
    "log_sanitizer",
    "cli",
]
