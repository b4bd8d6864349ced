"""Per-cell morphology: shape scores, optical volumes and nucleus descriptors.

Every shape score compares the cell area with the area of a reference shape,
``min(A_cell, A_ref) / max(A_cell, A_ref)``:

* circularity  - circle with the same perimeter, ``P**2 / (4 pi)``
* roundness    - minimal enclosing circle
* polygonality - convex hull (of the pixel squares' edge midpoints)
* ellipticity  - ellipse whose axes are the bounding-box width and height

The perimeter used for circularity is the corner-corrected chain-code length;
the plain polygon length is reported separately as ``perimeter_um``.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Any, NamedTuple, Sequence

import numpy as np

from .core import DegenerateRegionError, PhaseImage, Region, phase_to_density
from .internal import InternalStructure, NucleusResult


class ShapeScores(NamedTuple):
    circularity: float
    roundness: float
    polygonality: float
    ellipticity: float


def area_ratio(a: float, b: float) -> float:
    hi = max(a, b)
    return min(a, b) / hi if hi > 0 else 1.0


def shape_scores(region: Region) -> ShapeScores:
    """Circularity, roundness, polygonality and ellipticity, each in [0, 1].

    Raises:
        DegenerateRegionError: the region has zero perimeter (a single pixel).
    """
    if region.perimeter_corrected <= 0:
        raise DegenerateRegionError("shape scores are undefined for a zero-perimeter region")
    a = region.area
    s = region.pixel_size_um
    circle = region.perimeter_corrected ** 2 / (4.0 * math.pi)
    enclosing = math.pi * region.radius ** 2
    ellipse = math.pi * (region.width_px * s / 2.0) * (region.height_px * s / 2.0)
    return ShapeScores(
        area_ratio(a, circle),
        area_ratio(a, enclosing),
        area_ratio(a, region.hull_area),
        area_ratio(a, ellipse),
    )


def _densities(region: Region, img: PhaseImage) -> np.ndarray:
    return phase_to_density(region.values(img.phase), img.wavelength_nm)


def cell_volume(region: Region, img: PhaseImage) -> float:
    """Optical volume, sum of density times pixel area (µm³).

    Negative phase contributes negatively; nothing is clipped.
    """
    s = img.pixel_size_um
    return math.fsum(_densities(region, img).tolist()) * s * s


def negative_volume_fraction(region: Region, img: PhaseImage) -> float:
    dens = _densities(region, img)
    total = float(np.abs(dens).sum())
    return float(np.abs(dens[dens < 0]).sum()) / total if total > 0 else 0.0


@dataclass(frozen=True)
class NucleusFeatures:
    diameter_um: float
    area_um2: float
    circularity: float
    roundness: float
    offset_um: float
    area_ratio: float
    volume_ratio: float
    volume_um3: float
    internal_structures: int
    max_density_um: float
    mean_density_um: float
    possible_nuclei: int


def nuclear_features(cell: Region, result: NucleusResult, img: PhaseImage,
                     structures: Sequence[InternalStructure] = ()) -> NucleusFeatures | None:
    """Descriptors of the chosen nucleus relative to its cell; None without a nucleus."""
    nuc = result.nucleus
    if nuc is None:
        return None
    n = nuc.region
    try:
        scores = shape_scores(n)
        circ, rnd = scores.circularity, scores.roundness
    except DegenerateRegionError:
        circ = rnd = float("nan")
    v_n = cell_volume(n, img)
    v_c = cell_volume(cell, img)
    offset = math.hypot(n.centroid[0] - cell.centroid[0], n.centroid[1] - cell.centroid[1])

    width = img.width
    nuc_idx = n.flat_indices(width)
    inside = 0
    for s in structures:
        if s is nuc:
            continue
        if np.isin(s.region.flat_indices(width), nuc_idx, assume_unique=True).all():
            inside += 1

    return NucleusFeatures(
        diameter_um=n.diameter,
        area_um2=n.area,
        circularity=circ,
        roundness=rnd,
        offset_um=offset,
        area_ratio=n.area / cell.area,
        volume_ratio=v_n / v_c if v_c != 0 else float("nan"),
        volume_um3=v_n,
        internal_structures=inside,
        max_density_um=nuc.max_density,
        mean_density_um=nuc.mean_density,
        possible_nuclei=result.n_candidates,
    )


@dataclass(frozen=True)
class FeatureRecord:
    image_id: str
    cell_id: int
    centroid_x_um: float
    centroid_y_um: float
    bbox_x_min_px: int
    bbox_y_min_px: int
    bbox_x_max_px: int
    bbox_y_max_px: int
    area_px: int
    threshold_rad: float
    max_phase_rad: float
    diameter_um: float
    area_um2: float
    perimeter_um: float
    circularity: float
    roundness: float
    polygonality: float
    ellipticity: float
    volume_um3: float
    negative_volume_fraction: float
    internal_structures: int | None
    nucleus: NucleusFeatures | None
    border: bool
    abnormal_or_aggregate: bool
    internal_skipped: bool
    no_nucleus: bool

    def as_row(self) -> dict[str, Any]:
        """Flat mapping in export column order; absent nucleus fields are None."""
        row: dict[str, Any] = {}
        for f in dataclasses.fields(self):
            if f.name == "nucleus":
                for nf in dataclasses.fields(NucleusFeatures):
                    row["nucleus_" + nf.name] = (
                        getattr(self.nucleus, nf.name) if self.nucleus is not None else None)
            else:
                row[f.name] = getattr(self, f.name)
        return row


COLUMNS: tuple[str, ...] = tuple(
    name
    for f in dataclasses.fields(FeatureRecord)
    for name in (
        ["nucleus_" + nf.name for nf in dataclasses.fields(NucleusFeatures)]
        if f.name == "nucleus" else [f.name]
    )
)

# Each shape score's reference shape; written next to exported features.
SCORE_DEFINITIONS = {
    "circularity": "A_cell vs circle of equal (corner-corrected chain-code) perimeter, P^2/(4 pi)",
    "roundness": "A_cell vs minimal enclosing circle of pixel centres",
    "polygonality": "A_cell vs convex hull of pixel-edge midpoints",
    "ellipticity": "A_cell vs ellipse with bounding-box width and height as axes",
    "score": "min(A_cell, A_ref) / max(A_cell, A_ref)",
}


def assemble_record(
    image_id: str,
    cell_id: int,
    cell: Region,
    img: PhaseImage,
    threshold: float,
    structures: Sequence[InternalStructure] | None,
    result: NucleusResult | None,
) -> FeatureRecord:
    """Collect all features of one accepted cell.

    ``structures``/``result`` are None when internal detection did not run.
    """
    try:
        scores = shape_scores(cell)
    except DegenerateRegionError:
        scores = ShapeScores(*([float("nan")] * 4))
    skipped = result is None
    nucleus = None if skipped else nuclear_features(cell, result, img, structures or ())
    return FeatureRecord(
        image_id=image_id,
        cell_id=cell_id,
        centroid_x_um=cell.centroid[0],
        centroid_y_um=cell.centroid[1],
        bbox_x_min_px=cell.bbox[0],
        bbox_y_min_px=cell.bbox[1],
        bbox_x_max_px=cell.bbox[2],
        bbox_y_max_px=cell.bbox[3],
        area_px=cell.area_px,
        threshold_rad=threshold,
        max_phase_rad=float(cell.values(img.phase).max()),
        diameter_um=cell.diameter,
        area_um2=cell.area,
        perimeter_um=cell.perimeter,
        circularity=scores.circularity,
        roundness=scores.roundness,
        polygonality=scores.polygonality,
        ellipticity=scores.ellipticity,
        volume_um3=cell_volume(cell, img),
        negative_volume_fraction=negative_volume_fraction(cell, img),
        internal_structures=None if skipped else len(structures or ()),
        nucleus=nucleus,
        border=cell.border,
        abnormal_or_aggregate=bool(result is not None and result.flag_abnormal_or_aggregate),
        internal_skipped=skipped,
        no_nucleus=nucleus is None,
    )
