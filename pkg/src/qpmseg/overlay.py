"""Diagnostic overlays: phase in grey with cell outline, enclosing circle and bounding box."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image
from skimage.draw import circle_perimeter, rectangle_perimeter

from .core import PhaseImage, Region

BBOX_COLOR = (255, 255, 0)
CIRCLE_COLOR = (0, 255, 255)
CONTOUR_COLOR = (255, 0, 0)
FLAGGED_COLOR = (255, 0, 255)
NUCLEUS_COLOR = (0, 255, 0)


def grayscale(img: PhaseImage) -> np.ndarray:
    phase = img.phase
    lo, hi = float(phase.min()), float(phase.max())
    if hi > lo:
        grey = np.round((phase - lo) / (hi - lo) * 255.0).astype(np.uint8)
    else:
        grey = np.zeros(phase.shape, dtype=np.uint8)
    return np.repeat(grey[:, :, None], 3, axis=2)


def _put(rgb, ys, xs, color):
    h, w = rgb.shape[:2]
    ok = (ys >= 0) & (ys < h) & (xs >= 0) & (xs < w)
    rgb[ys[ok], xs[ok]] = color


def overlay_array(img: PhaseImage, cells: Sequence[Region],
                  nuclei: Sequence[Region | None] | None = None,
                  flagged: Sequence[bool] | None = None) -> np.ndarray:
    """RGB rendering with overlays; the cell outline is drawn last so it stays exact."""
    rgb = grayscale(img)
    nuclei = list(nuclei) if nuclei is not None else [None] * len(cells)
    flagged = list(flagged) if flagged is not None else [False] * len(cells)
    s = img.pixel_size_um
    for cell, nucleus, flag in zip(cells, nuclei, flagged):
        x0, y0, x1, y1 = cell.bbox
        # drawn one pixel outside the box so it never covers cell pixels
        rr, cc = rectangle_perimeter((y0, x0), (y1, x1))
        _put(rgb, np.asarray(rr), np.asarray(cc), BBOX_COLOR)
        (cx, cy), r = cell.enclosing_circle
        rr, cc = circle_perimeter(int(round(cy / s)), int(round(cx / s)), int(round(r / s)))
        _put(rgb, rr, cc, CIRCLE_COLOR)
        if nucleus is not None:
            _put(rgb, nucleus.boundary[:, 1], nucleus.boundary[:, 0], NUCLEUS_COLOR)
        _put(rgb, cell.boundary[:, 1], cell.boundary[:, 0], FLAGGED_COLOR if flag else CONTOUR_COLOR)
    return rgb


def render_overlay(path, img: PhaseImage, cells: Sequence[Region],
                   nuclei: Sequence[Region | None] | None = None,
                   flagged: Sequence[bool] | None = None) -> Path:
    path = Path(path)
    Image.fromarray(overlay_array(img, cells, nuclei, flagged)).save(path)
    return path
