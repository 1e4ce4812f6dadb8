"""Learn a clean data distribution from corrupted measurements only."""
from .estimator import AmbientGAN
from .measurements import (BlockPixels, Compose, ConvolveNoise, ExtractPatch, GaussianProjection,
                           KeepPatch, PadRotateProject, Uninvertible, apply, apply_inverse,
                           sample_theta)
from .metrics import MetricsRecord, severity_sweep, sliced_wasserstein
from .training import PipelineConfig, train

__all__ = [
    "AmbientGAN", "BlockPixels", "Compose", "ConvolveNoise", "ExtractPatch", "GaussianProjection",
    "KeepPatch", "MetricsRecord", "PadRotateProject", "PipelineConfig", "Uninvertible", "apply",
    "apply_inverse", "sample_theta", "severity_sweep", "sliced_wasserstein", "train",
]

__version__ = "0.1.0"
