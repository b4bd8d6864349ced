"""First pass over a measurement: per-image summary values and the cell threshold."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .core import Config, PhaseImage, QPMSegError

MAD_TO_SIGMA = 1.4826


class EmptyMeasurementError(QPMSegError):
    pass


class DegenerateThresholdError(QPMSegError):
    """All backgrounds are exactly zero, so ``t = 2 |mean background|`` is 0."""


@dataclass(frozen=True)
class ImageStats:
    image_id: str
    phi_min: float
    phi_max: float
    phi_mean: float
    background: float


@dataclass(frozen=True)
class MeasurementStats:
    n_images: int
    mean_background: float
    threshold: float
    per_image: tuple[ImageStats, ...]
    filtered_ids: tuple[str, ...] = ()
    fallback_used: bool = False


def image_stats(img: PhaseImage, bin_width: float = 0.01) -> ImageStats:
    """Minimum, maximum, mean and background (modal) phase of one image.

    The background is the most frequent phase value. Samples are binned
    with width ``bin_width`` starting at the image minimum; the modal bin is
    the most populated one (ties go to the bin whose centre is nearest the
    mean), and the reported value is the median of the samples in it.
    """
    values = img.phase.ravel()
    lo = float(values.min())
    hi = float(values.max())
    # fsum keeps the mean independent of pixel order
    mean = min(max(math.fsum(values.tolist()) / values.size, lo), hi)
    if hi == lo:
        return ImageStats(img.id, lo, hi, mean, lo)

    n_bins = max(int(math.ceil((hi - lo) / bin_width)), 1)
    idx = np.minimum(((values - lo) / bin_width).astype(np.int64), n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins)
    best = np.flatnonzero(counts == counts.max())
    if len(best) > 1:
        centres = lo + (best + 0.5) * bin_width
        best = best[np.argsort(np.abs(centres - mean), kind="stable")]
    background = float(np.median(values[idx == best[0]]))
    return ImageStats(img.id, lo, hi, mean, background)


def filter_artifact_images(
    all_stats: Sequence[ImageStats], cfg: Config
) -> tuple[list[ImageStats], list[ImageStats]]:
    """Split images into (kept, filtered).

    An image is dropped when its minimum reaches -pi (wrapped phase) or its
    background is an outlier against the measurement: farther than
    ``background_sigma_factor`` robust standard deviations from the median
    background. The robust spread is the scaled MAD, floored at one histogram
    bin so quantisation alone never flags an image.
    """
    if len(all_stats) == 0:
        raise EmptyMeasurementError("measurement contains no images")
    backgrounds = np.array([s.background for s in all_stats])
    median = float(np.median(backgrounds))
    mad = float(np.median(np.abs(backgrounds - median)))
    spread = max(MAD_TO_SIGMA * mad, cfg.histogram_bin_width)
    limit = cfg.background_sigma_factor * spread

    kept, filtered = [], []
    for s in all_stats:
        wrapped = s.phi_min <= -math.pi
        outlier = abs(s.background - median) > limit
        (filtered if wrapped or outlier else kept).append(s)
    return kept, filtered


def measurement_threshold(
    kept: Sequence[ImageStats],
    filtered: Iterable[ImageStats] = (),
    fallback: float | None = None,
) -> MeasurementStats:
    """Cell-detection threshold ``t = 2 |mean background|`` over the kept images.

    Raises:
        EmptyMeasurementError: no kept images.
        DegenerateThresholdError: ``t`` is zero and no ``fallback`` was given.
    """
    if len(kept) == 0:
        raise EmptyMeasurementError("no images left after artifact filtering")
    mean_bg = math.fsum(s.background for s in kept) / len(kept)
    t = 2.0 * abs(mean_bg)
    used_fallback = False
    if t == 0.0:
        if fallback is None:
            raise DegenerateThresholdError(
                "all image backgrounds are zero; supply a fallback threshold"
            )
        t, used_fallback = float(fallback), True
    filtered = tuple(filtered)
    return MeasurementStats(
        n_images=len(kept),
        mean_background=mean_bg,
        threshold=t,
        per_image=tuple(kept) + filtered,
        filtered_ids=tuple(s.image_id for s in filtered),
        fallback_used=used_fallback,
    )


def write_stats_csv(path, stats: MeasurementStats) -> None:
    """One row per image: id, phi_min, phi_max, phi_mean, c_b, filtered flag."""
    filtered = set(stats.filtered_ids)
    rows = sorted(stats.per_image, key=lambda s: s.image_id)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["image_id", "phi_min_rad", "phi_max_rad", "phi_mean_rad",
                    "background_rad", "filtered"])
        for s in rows:
            w.writerow([s.image_id, f"{s.phi_min:.9g}", f"{s.phi_max:.9g}",
                        f"{s.phi_mean:.9g}", f"{s.background:.9g}",
                        int(s.image_id in filtered)])
