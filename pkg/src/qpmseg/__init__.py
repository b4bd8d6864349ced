"""Unsupervised segmentation of cells and nuclei in quantitative phase images."""

__version__ = "0.1.0"

from .core import Config, PhaseImage, Region, phase_to_density, region_from_pixels  # noqa: E402
from .pipeline import RunResult, run_images, run_pipeline  # noqa: E402

__all__ = [
    "Config",
    "PhaseImage",
    "Region",
    "RunResult",
    "phase_to_density",
    "region_from_pixels",
    "run_images",
    "run_pipeline",
]
