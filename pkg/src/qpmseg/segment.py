"""Coarse cell detection: global threshold, 8-connected labelling, region extraction."""

from __future__ import annotations

import dataclasses

import numpy as np
from scipy import ndimage

from .core import EIGHT_CONNECTED, Config, PhaseImage, Region, region_from_pixels


def binarize(img: PhaseImage, t: float) -> np.ndarray:
    """Foreground where phase >= t."""
    if not t > 0:
        raise ValueError(f"threshold must be positive, got {t}")
    return img.phase >= t


def connected_components(mask: np.ndarray, connectivity: int = 8) -> list[np.ndarray]:
    """Maximal 8-connected foreground components.

    Returns:
        One ``(N, 2)`` array of ``(x, y)`` pixels per component, each in raster
        order; components are ordered by their topmost-then-leftmost pixel.
    """
    if connectivity != 8:
        raise ValueError("only 8-connectivity is supported")
    labels, n = ndimage.label(np.asarray(mask, dtype=bool), structure=EIGHT_CONNECTED)
    comps = []
    for k, sl in enumerate(ndimage.find_objects(labels), start=1):
        if sl is None:
            continue
        ys, xs = np.nonzero(labels[sl] == k)
        comps.append(np.column_stack([xs + sl[1].start, ys + sl[0].start]))
    comps.sort(key=lambda c: (int(c[0, 1]), int(c[0, 0])))
    return comps


def touches_border(region: Region, width: int, height: int) -> bool:
    x0, y0, x1, y1 = region.bbox
    return x0 == 0 or y0 == 0 or x1 == width - 1 or y1 == height - 1


def detect_candidates(img: PhaseImage, t: float, cfg: Config | None = None) -> list[Region]:
    """Threshold the image and return one region per foreground component.

    Regions touching the image edge are kept with ``border=True``.
    """
    cfg = cfg or Config()
    regions = []
    for comp in connected_components(binarize(img, t), cfg.connectivity):
        r = region_from_pixels(comp, img.pixel_size_um)
        if touches_border(r, img.width, img.height):
            r = dataclasses.replace(r, border=True)
        regions.append(r)
    return regions
