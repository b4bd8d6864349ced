"""Checks that separate real cells from small fragments, nested contours and debris."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .core import Config, PhaseImage, Region

REJECT_MIN_AREA = "min_area"
REJECT_NESTED = "nested"
REJECT_GRADIENT = "gradient"


@dataclass(frozen=True)
class GradientField:
    magnitude: np.ndarray
    threshold: float


def check_min_area(region: Region, cfg: Config) -> bool:
    """Accept iff the region area is at least ``pi * r_min**2``."""
    return region.area >= cfg.min_area_um2


def _filled_contains(outer: Region, x: int, y: int) -> bool:
    mask, (x0, y0) = outer.local_mask()
    i, j = y - y0, x - x0
    if not (0 <= i < mask.shape[0] and 0 <= j < mask.shape[1]):
        return False
    if mask[i, j]:
        return True
    return bool(ndimage.binary_fill_holes(mask)[i, j])


def _is_nested(inner: Region, outer: Region) -> bool:
    ix0, iy0, ix1, iy1 = inner.bbox
    ox0, oy0, ox1, oy1 = outer.bbox
    if not (ox0 <= ix0 and oy0 <= iy0 and ix1 <= ox1 and iy1 <= oy1):
        return False
    cx, cy = inner.centroid_px
    return _filled_contains(outer, int(round(cx)), int(round(cy)))


def discard_nested(regions: list[Region]) -> list[Region]:
    """Drop every region lying inside another region's contour.

    "Inside" means: bounding box contained in the other's bounding box and the
    centroid falls in the other's area (its pixels plus enclosed holes).
    """
    return [r for i, r in enumerate(regions)
            if not any(_is_nested(r, o) for j, o in enumerate(regions) if i != j)]


def gradient_field(img: PhaseImage, cfg: Config) -> GradientField:
    """Sobel gradient magnitude (radians per pixel) and its detection threshold."""
    phase = img.phase
    gx = ndimage.sobel(phase, axis=1, mode="nearest") / 8.0
    gy = ndimage.sobel(phase, axis=0, mode="nearest") / 8.0
    g = np.hypot(gx, gy)
    return GradientField(g, cfg.gradient_factor * float(g.mean()))


def gradient_check(img: PhaseImage, region: Region, cfg: Config,
                   grad: GradientField | None = None) -> bool:
    """Accept iff enough of the region outline sits on a strong phase edge.

    The outline (dilated by one pixel) is compared against the gradient
    threshold ``gradient_factor * mean(g)``; the region passes when at least
    ``gradient_boundary_fraction`` of those pixels reach it. A constant image
    has no edges and rejects everything.
    """
    if cfg.gradient_boundary_fraction == 0:
        return True
    grad = grad or gradient_field(img, cfg)
    if grad.threshold == 0:
        return False
    x0, y0 = region.bbox[0] - 1, region.bbox[1] - 1
    ring = np.zeros((region.height_px + 2, region.width_px + 2), dtype=bool)
    ring[region.boundary[:, 1] - y0, region.boundary[:, 0] - x0] = True
    ring = ndimage.binary_dilation(ring, structure=np.ones((3, 3), dtype=bool))
    ys, xs = np.nonzero(ring)
    ys, xs = ys + y0, xs + x0
    inside = (ys >= 0) & (ys < img.height) & (xs >= 0) & (xs < img.width)
    g = grad.magnitude[ys[inside], xs[inside]]
    strong = np.count_nonzero(g >= grad.threshold)
    return strong >= cfg.gradient_boundary_fraction * g.size


def run_checks(img: PhaseImage, regions: list[Region], cfg: Config,
               grad: GradientField | None = None
               ) -> tuple[list[Region], list[tuple[Region, str]]]:
    """Apply size, nesting and gradient checks in that order.

    Returns:
        ``(cells, rejects)`` where each reject carries its reason tag.
    """
    if not cfg.plausibility_checks:
        return list(regions), []
    rejects: list[tuple[Region, str]] = []

    sized = []
    for r in regions:
        if check_min_area(r, cfg):
            sized.append(r)
        else:
            rejects.append((r, REJECT_MIN_AREA))

    outer = discard_nested(sized)
    kept_ids = {id(r) for r in outer}
    rejects.extend((r, REJECT_NESTED) for r in sized if id(r) not in kept_ids)

    cells = []
    if outer:
        grad = grad or gradient_field(img, cfg)
    for r in outer:
        if gradient_check(img, r, cfg, grad):
            cells.append(r)
        else:
            rejects.append((r, REJECT_GRADIENT))
    return cells, rejects
