"""Data model shared by every stage: phase images, pixel regions, configuration."""

from __future__ import annotations

import dataclasses
import math
import os
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np
from scipy import ndimage

from . import geometry

EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


class QPMSegError(Exception):
    """Base class for errors raised by this package."""


class DisconnectedRegionError(QPMSegError, ValueError):
    pass


class DegenerateRegionError(QPMSegError, ValueError):
    pass


def phase_to_density(phase, wavelength_nm: float):
    """Convert phase (radians) to optical density (µm).

    ``rho = lambda * phi / (2 pi)``; works elementwise on arrays.
    """
    if wavelength_nm <= 0:
        raise ValueError(f"wavelength must be positive, got {wavelength_nm}")
    factor = wavelength_nm * 1e-3 / (2.0 * math.pi)
    if np.ndim(phase):
        return np.asarray(phase, dtype=float) * factor
    return float(phase) * factor


@dataclass(frozen=True, eq=False)
class PhaseImage:
    """A reconstructed quantitative phase image with its calibration.

    ``phase`` is indexed ``[y, x]`` (row-major) and holds radians.
    """

    id: str
    phase: np.ndarray
    pixel_size_um: float
    wavelength_nm: float = 528.0

    def __post_init__(self):
        arr = np.array(self.phase, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"phase must be a non-empty 2-D grid, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"image {self.id!r} contains non-finite phase values")
        if not self.pixel_size_um > 0:
            raise ValueError(f"pixel size must be positive, got {self.pixel_size_um}")
        if not self.wavelength_nm > 0:
            raise ValueError(f"wavelength must be positive, got {self.wavelength_nm}")
        arr.setflags(write=False)
        object.__setattr__(self, "phase", arr)
        object.__setattr__(self, "pixel_size_um", float(self.pixel_size_um))
        object.__setattr__(self, "wavelength_nm", float(self.wavelength_nm))

    @property
    def height(self) -> int:
        return self.phase.shape[0]

    @property
    def width(self) -> int:
        return self.phase.shape[1]

    @property
    def density(self) -> np.ndarray:
        return phase_to_density(self.phase, self.wavelength_nm)


@dataclass(frozen=True)
class Config:
    """Tunable parameters of the segmentation.

    Lengths are in µm, areas derive from them. ``connectivity`` is fixed at 8.
    """

    r_min_um: float = 3.0
    d_internal_min_um: float = 25.0
    min_structure_px: int = 20
    histogram_bin_width: float = 0.01
    gradient_factor: float = 4.0
    gradient_boundary_fraction: float = 0.5
    background_sigma_factor: float = 3.0
    connectivity: int = 8
    plausibility_checks: bool = True
    fallback_threshold: float | None = None

    def __post_init__(self):
        if self.connectivity != 8:
            raise ValueError("only 8-connectivity is supported")
        for name in ("histogram_bin_width", "gradient_factor", "background_sigma_factor"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        # zero is allowed for these two: it switches the corresponding check off
        if self.r_min_um < 0 or self.d_internal_min_um < 0:
            raise ValueError("r_min_um and d_internal_min_um must be non-negative")
        if self.min_structure_px < 1:
            raise ValueError("min_structure_px must be at least 1")
        if not 0.0 <= self.gradient_boundary_fraction <= 1.0:
            raise ValueError("gradient_boundary_fraction must lie in [0, 1]")
        if self.fallback_threshold is not None and not self.fallback_threshold > 0:
            raise ValueError("fallback_threshold must be positive")

    @property
    def min_area_um2(self) -> float:
        return math.pi * self.r_min_um ** 2

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_mapping(cls, values: Mapping[str, Any], base: "Config | None" = None) -> "Config":
        base = base or cls()
        known = {f.name: f for f in dataclasses.fields(cls)}
        unknown = set(values) - set(known)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        updates = {k: _coerce(known[k].type, v) for k, v in values.items()}
        return dataclasses.replace(base, **updates)

    def with_env(self, environ: Mapping[str, str] | None = None, prefix: str = "QPMSEG_") -> "Config":
        """Apply ``QPMSEG_<FIELD>`` environment overrides."""
        environ = os.environ if environ is None else environ
        names = {f.name for f in dataclasses.fields(self)}
        values = {
            key[len(prefix):].lower(): raw
            for key, raw in environ.items()
            if key.startswith(prefix) and key[len(prefix):].lower() in names
        }
        return self.from_mapping(values, base=self) if values else self


def _coerce(type_name: str, value: Any) -> Any:
    if not isinstance(value, str):
        return value
    if type_name == "bool":
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if type_name == "int":
        return int(value)
    if value.lower() in ("", "none"):
        return None
    return float(value)


@dataclass(frozen=True, eq=False)
class Region:
    """A connected pixel set with its traced outline and derived geometry.

    Pixel coordinates are integers ``(x, y)``; ``centroid``,
    ``enclosing_circle``, ``perimeter`` and ``area`` are physical (µm).
    """

    pixels: np.ndarray
    boundary: np.ndarray
    pixel_size_um: float
    area_px: int
    area: float
    bbox: tuple[int, int, int, int]
    centroid: tuple[float, float]
    enclosing_circle: tuple[tuple[float, float], float]
    perimeter: float
    perimeter_corrected: float
    hull_area: float
    border: bool = False
    _mask_cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def radius(self) -> float:
        return self.enclosing_circle[1]

    @property
    def diameter(self) -> float:
        return 2.0 * self.enclosing_circle[1]

    @property
    def width_px(self) -> int:
        return self.bbox[2] - self.bbox[0] + 1

    @property
    def height_px(self) -> int:
        return self.bbox[3] - self.bbox[1] + 1

    @property
    def top_left(self) -> tuple[int, int]:
        """Topmost-then-leftmost pixel as ``(y, x)``; used for ordering."""
        return int(self.pixels[0, 1]), int(self.pixels[0, 0])

    @property
    def centroid_px(self) -> tuple[float, float]:
        s = self.pixel_size_um
        return self.centroid[0] / s, self.centroid[1] / s

    def local_mask(self, pad: int = 0) -> tuple[np.ndarray, tuple[int, int]]:
        """Boolean mask over the bounding box (plus ``pad``) and its ``(x0, y0)`` origin."""
        if pad not in self._mask_cache:
            x0, y0 = self.bbox[0] - pad, self.bbox[1] - pad
            mask = np.zeros((self.height_px + 2 * pad, self.width_px + 2 * pad), dtype=bool)
            mask[self.pixels[:, 1] - y0, self.pixels[:, 0] - x0] = True
            mask.setflags(write=False)
            self._mask_cache[pad] = (mask, (x0, y0))
        return self._mask_cache[pad]

    def flat_indices(self, width: int) -> np.ndarray:
        return self.pixels[:, 1].astype(np.int64) * width + self.pixels[:, 0]

    def values(self, grid: np.ndarray) -> np.ndarray:
        """Samples of an image-sized grid at the region's pixels."""
        return grid[self.pixels[:, 1], self.pixels[:, 0]]

    def with_pixel_size(self, pixel_size_um: float) -> "Region":
        return region_from_pixels(self.pixels, pixel_size_um, border=self.border)


def region_from_pixels(pixels, pixel_size_um: float, *, border: bool = False) -> Region:
    """Build a :class:`Region` from an 8-connected set of ``(x, y)`` pixels.

    Raises:
        DisconnectedRegionError: the pixels form more than one 8-connected component.
        ValueError: empty input or non-positive pixel size.
    """
    pts = np.asarray(pixels, dtype=np.int64).reshape(-1, 2)
    if len(pts) == 0:
        raise ValueError("a region needs at least one pixel")
    if not pixel_size_um > 0:
        raise ValueError(f"pixel size must be positive, got {pixel_size_um}")
    # raster order: by y, then x; drop duplicates
    pts = np.unique(pts[:, ::-1], axis=0)[:, ::-1].copy()

    x0, y0 = int(pts[:, 0].min()), int(pts[:, 1].min())
    x1, y1 = int(pts[:, 0].max()), int(pts[:, 1].max())
    mask = np.zeros((y1 - y0 + 1, x1 - x0 + 1), dtype=bool)
    mask[pts[:, 1] - y0, pts[:, 0] - x0] = True
    _, n = ndimage.label(mask, structure=EIGHT_CONNECTED)
    if n != 1:
        raise DisconnectedRegionError(f"pixel set has {n} 8-connected components, expected 1")

    rc = geometry.trace_boundary(mask)
    boundary = np.column_stack([rc[:, 1] + x0, rc[:, 0] + y0])

    s = float(pixel_size_um)
    centroid = (float(pts[:, 0].mean()) * s, float(pts[:, 1].mean()) * s)
    # extreme points of a pixel set are outer-boundary pixels
    hull = geometry.convex_hull(boundary)
    cx, cy, r = geometry.min_enclosing_circle(hull)
    hull_area = geometry.polygon_area(geometry.convex_hull(geometry.edge_midpoints(boundary)))

    for arr in (pts, boundary):
        arr.setflags(write=False)
    return Region(
        pixels=pts,
        boundary=boundary,
        pixel_size_um=s,
        area_px=len(pts),
        area=len(pts) * s * s,
        bbox=(x0, y0, x1, y1),
        centroid=centroid,
        enclosing_circle=((cx * s, cy * s), r * s),
        perimeter=geometry.polygon_length(boundary) * s,
        perimeter_corrected=geometry.corrected_chain_length(boundary) * s,
        hull_area=hull_area * s * s,
        border=border,
    )
