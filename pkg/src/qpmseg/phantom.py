"""Synthetic phase scenes with ground truth, error classification and timing.

Cells are truncated paraboloids: inside radius R the phase rises by
``rim + (peak - rim) * (1 - r**2 / R**2)`` above the background, so the outline
is a step of height ``rim`` and the centre reaches ``peak``. The nucleus is a
flat disc of extra phase inside the cell, with an amplitude proportional to the
cell peak; optional granules are smaller flat discs of fixed amplitude. Debris is a Gaussian envelope of low
amplitude modulated by fine speckle, which gives it soft edges.

Error classes follow the usual manual review categories:

1 missed cell, 2 not-a-cell, 3 poor cell boundary,
4 missed internal structure, 5 not-a-nucleus, 6 poor nucleus boundary.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
import platform
import statistics
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np
from scipy import ndimage

from .core import Config, PhaseImage, QPMSegError, Region, region_from_pixels
from .fileio import load_image, write_raw

CELL_CLASSES = (1, 2, 3)
INTERNAL_CLASSES = (4, 5, 6)
CLASS_NAMES = {
    1: "missed cell",
    2: "not-a-cell",
    3: "poor cell boundary",
    4: "missed internal structure",
    5: "not-a-nucleus",
    6: "poor nucleus boundary",
}


class OvercrowdedError(QPMSegError):
    """Cells and artifacts could not be placed without overlap."""


class SceneMismatchError(QPMSegError, ValueError):
    pass


@dataclass(frozen=True)
class PhantomParams:
    width: int = 512
    height: int = 384
    pixel_size_um: float = 0.5
    wavelength_nm: float = 528.0
    background: float = 0.15
    noise_sigma: float = 0.02
    n_cells: int = 5
    diameter_range_um: tuple[float, float] = (10.0, 50.0)
    peak_phase_range: tuple[float, float] = (0.5, 0.85)
    rim_fraction: float = 0.5
    nucleus: bool = True
    nucleus_contrast_range: tuple[float, float] = (2.0, 3.0)
    nucleus_diameter_fraction: tuple[float, float] = (0.25, 0.4)
    nucleus_offset_fraction: float = 0.3
    n_granules: int = 0
    granule_diameter_um: tuple[float, float] = (3.0, 4.0)
    granule_amplitude_range: tuple[float, float] = (1.0, 1.4)
    n_debris: int = 3
    debris_diameter_range_um: tuple[float, float] = (16.0, 28.0)
    debris_amplitude_range: tuple[float, float] = (0.2, 0.3)
    debris_speckle: float = 0.3
    n_reflections: int = 0
    n_wraps: int = 0
    gap_px: int = 4
    max_attempts: int = 5000

    def __post_init__(self):
        lo, hi = self.diameter_range_um
        if not 6.0 <= lo <= hi <= 60.0:
            raise ValueError("cell diameters must lie within 6-60 µm")
        if self.n_cells < 0 or self.n_debris < 0 or self.n_granules < 0:
            raise ValueError("counts must be non-negative")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        if not 0.0 <= self.rim_fraction <= 1.0:
            raise ValueError("rim_fraction must lie in [0, 1]")
        if self.peak_phase_range[0] > self.peak_phase_range[1]:
            raise ValueError("peak_phase_range must be ordered")

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "PhantomParams":
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


@dataclass(frozen=True)
class GroundTruthCell:
    label: int
    center_px: tuple[float, float]
    radius_um: float
    peak: float
    nucleus_amplitude: float | None


@dataclass(frozen=True)
class Blob:
    blob_id: int
    cell_label: int
    kind: str  # "nucleus" or "granule"


@dataclass(frozen=True)
class Artifact:
    kind: str  # "debris", "reflection" or "wrap"
    center_px: tuple[float, float]
    radius_px: float


@dataclass(frozen=True, eq=False)
class PhantomScene:
    image: PhaseImage
    cell_labels: np.ndarray
    nucleus_labels: np.ndarray
    blob_labels: np.ndarray
    cells: tuple[GroundTruthCell, ...]
    blobs: tuple[Blob, ...]
    artifacts: tuple[Artifact, ...]
    seed: int
    params: PhantomParams

    @property
    def id(self) -> str:
        return self.image.id

    def nucleus_blob(self, cell_label: int) -> int | None:
        for b in self.blobs:
            if b.cell_label == cell_label and b.kind == "nucleus":
                return b.blob_id
        return None

    def save(self, directory) -> Path:
        """Write the image (raw + header) and ``<id>.truth.npz`` / ``<id>.truth.json``."""
        directory = Path(directory)
        write_raw(directory, self.image)
        np.savez_compressed(directory / f"{self.id}.truth.npz", cell_labels=self.cell_labels,
                            nucleus_labels=self.nucleus_labels, blob_labels=self.blob_labels)
        meta = {
            "seed": self.seed,
            "params": self.params.to_dict(),
            "cells": [dataclasses.asdict(c) for c in self.cells],
            "blobs": [dataclasses.asdict(b) for b in self.blobs],
            "artifacts": [dataclasses.asdict(a) for a in self.artifacts],
        }
        (directory / f"{self.id}.truth.json").write_text(json.dumps(meta, indent=2) + "\n")
        return directory / f"{self.id}.raw"

    @classmethod
    def load(cls, raw_path) -> "PhantomScene":
        raw_path = Path(raw_path)
        image = load_image(raw_path)
        stem = raw_path.with_suffix("")
        arrays = np.load(f"{stem}.truth.npz")
        meta = json.loads(Path(f"{stem}.truth.json").read_text())
        return cls(
            image=image,
            cell_labels=arrays["cell_labels"],
            nucleus_labels=arrays["nucleus_labels"],
            blob_labels=arrays["blob_labels"],
            cells=tuple(GroundTruthCell(c["label"], tuple(c["center_px"]), c["radius_um"],
                                        c["peak"], c["nucleus_amplitude"]) for c in meta["cells"]),
            blobs=tuple(Blob(**b) for b in meta["blobs"]),
            artifacts=tuple(Artifact(a["kind"], tuple(a["center_px"]), a["radius_px"])
                            for a in meta["artifacts"]),
            seed=meta["seed"],
            params=PhantomParams.from_dict(meta["params"]),
        )


# --- generation ---------------------------------------------------------------

def _window(cx, cy, radius, width, height):
    x0 = max(int(math.floor(cx - radius)) - 1, 0)
    x1 = min(int(math.ceil(cx + radius)) + 2, width)
    y0 = max(int(math.floor(cy - radius)) - 1, 0)
    y1 = min(int(math.ceil(cy + radius)) + 2, height)
    yy, xx = np.mgrid[y0:y1, x0:x1]
    return (slice(y0, y1), slice(x0, x1)), xx, yy


def _place(rng, radius_px, occupied, p: PhantomParams, margin):
    """Random centre keeping ``margin`` px from the edge and clear of ``occupied`` discs."""
    lo_x, hi_x = radius_px + margin, p.width - 1 - radius_px - margin
    lo_y, hi_y = radius_px + margin, p.height - 1 - radius_px - margin
    if lo_x > hi_x or lo_y > hi_y:
        raise OvercrowdedError(f"object of radius {radius_px:.1f} px does not fit the image")
    for _ in range(p.max_attempts):
        cx, cy = rng.uniform(lo_x, hi_x), rng.uniform(lo_y, hi_y)
        if all(math.hypot(cx - ox, cy - oy) >= radius_px + orad + p.gap_px
               for ox, oy, orad in occupied):
            return cx, cy
    raise OvercrowdedError(f"could not place object of radius {radius_px:.1f} px "
                           f"after {p.max_attempts} attempts")


def generate_phantom(params: PhantomParams | None = None, seed: int = 0,
                     image_id: str | None = None) -> PhantomScene:
    """Render one scene; the same ``(params, seed)`` always gives the same scene.

    Raises:
        OvercrowdedError: objects cannot be placed disjointly.
    """
    p = params or PhantomParams()
    rng = np.random.default_rng(seed)
    s = p.pixel_size_um
    phase = np.full((p.height, p.width), p.background, dtype=np.float64)
    cell_labels = np.zeros(phase.shape, dtype=np.int32)
    nucleus_labels = np.zeros(phase.shape, dtype=np.int32)
    blob_labels = np.zeros(phase.shape, dtype=np.int32)
    occupied: list[tuple[float, float, float]] = []
    cells, blobs, artifacts = [], [], []

    diameters = sorted(rng.uniform(*p.diameter_range_um, size=p.n_cells), reverse=True)
    for label, diameter in enumerate(diameters, start=1):
        radius_um = diameter / 2.0
        radius_px = radius_um / s
        cx, cy = _place(rng, radius_px, occupied, p, margin=2)
        occupied.append((cx, cy, radius_px))
        peak = float(rng.uniform(*p.peak_phase_range))
        rim = p.rim_fraction * peak
        sl, xx, yy = _window(cx, cy, radius_px, p.width, p.height)
        r2 = ((xx - cx) ** 2 + (yy - cy) ** 2) * s * s
        inside = r2 <= radius_um ** 2
        phase[sl][inside] += rim + (peak - rim) * (1.0 - r2[inside] / radius_um ** 2)
        cell_labels[sl][inside] = label

        amp = None
        if p.nucleus:
            frac = rng.uniform(*p.nucleus_diameter_fraction)
            n_radius = frac * radius_um
            free = max(radius_um - n_radius - 1.5, 0.0)
            dist = rng.uniform(0.0, p.nucleus_offset_fraction) * free
            ang = rng.uniform(0.0, 2.0 * math.pi)
            ncx, ncy = cx + dist * math.cos(ang) / s, cy + dist * math.sin(ang) / s
            amp = float(rng.uniform(*p.nucleus_contrast_range) * peak)
            nr2 = ((xx - ncx) ** 2 + (yy - ncy) ** 2) * s * s
            nuc = (nr2 <= n_radius ** 2) & inside
            phase[sl][nuc] += amp
            nucleus_labels[sl][nuc] = label
            blob_id = len(blobs) + 1
            blob_labels[sl][nuc] = blob_id
            blobs.append(Blob(blob_id, label, "nucleus"))

            taken = [(ncx, ncy, n_radius / s)]
            for _ in range(p.n_granules):
                g_radius = rng.uniform(*p.granule_diameter_um) / 2.0
                limit = radius_um - g_radius - 1.5
                for _attempt in range(200):
                    gd = math.sqrt(rng.uniform(0.0, 1.0)) * limit
                    ga = rng.uniform(0.0, 2.0 * math.pi)
                    gcx, gcy = cx + gd * math.cos(ga) / s, cy + gd * math.sin(ga) / s
                    if all(math.hypot(gcx - ox, gcy - oy) * s >= g_radius + orad * s + 1.5
                           for ox, oy, orad in taken):
                        break
                else:
                    continue
                taken.append((gcx, gcy, g_radius / s))
                gr2 = ((xx - gcx) ** 2 + (yy - gcy) ** 2) * s * s
                gran = (gr2 <= g_radius ** 2) & inside
                phase[sl][gran] += float(rng.uniform(*p.granule_amplitude_range))
                blob_id = len(blobs) + 1
                blob_labels[sl][gran] = blob_id
                blobs.append(Blob(blob_id, label, "granule"))
        cells.append(GroundTruthCell(label, (cx, cy), radius_um, peak, amp))

    for _ in range(p.n_debris):
        diameter = rng.uniform(*p.debris_diameter_range_um)
        extent_px = diameter / 2.0 / s
        cx, cy = _place(rng, extent_px, occupied, p, margin=2)
        occupied.append((cx, cy, extent_px))
        sigma = extent_px / 2.0
        sl, xx, yy = _window(cx, cy, extent_px, p.width, p.height)
        env = np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2.0 * sigma ** 2))
        speckle = ndimage.gaussian_filter(rng.normal(size=env.shape), 1.0)
        speckle /= speckle.std() or 1.0
        amp = rng.uniform(*p.debris_amplitude_range)
        phase[sl] += amp * env * (1.0 + p.debris_speckle * speckle)
        artifacts.append(Artifact("debris", (cx, cy), extent_px))

    for _ in range(p.n_reflections):
        extent_px = rng.uniform(20.0, 40.0) / s
        cx, cy = _place(rng, extent_px, occupied, p, margin=2)
        occupied.append((cx, cy, extent_px))
        sl, xx, yy = _window(cx, cy, extent_px, p.width, p.height)
        sigma = extent_px / 2.5
        phase[sl] += 0.3 * np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2.0 * sigma ** 2))
        artifacts.append(Artifact("reflection", (cx, cy), extent_px))

    for _ in range(p.n_wraps):
        extent_px = rng.uniform(6.0, 12.0) / s
        cx, cy = _place(rng, extent_px, occupied, p, margin=2)
        occupied.append((cx, cy, extent_px))
        sl, xx, yy = _window(cx, cy, extent_px, p.width, p.height)
        disc = (xx - cx) ** 2 + (yy - cy) ** 2 <= extent_px ** 2
        phase[sl][disc] -= 2.0 * math.pi
        artifacts.append(Artifact("wrap", (cx, cy), extent_px))

    if p.noise_sigma > 0:
        phase += rng.normal(0.0, p.noise_sigma, size=phase.shape)

    image = PhaseImage(image_id or f"phantom_{seed:06d}", phase, s, p.wavelength_nm)
    return PhantomScene(image, cell_labels, nucleus_labels, blob_labels, tuple(cells),
                        tuple(blobs), tuple(artifacts), seed, p)


def generate_measurement(n_scenes: int, params: PhantomParams | None = None,
                         seed: int = 0) -> list[PhantomScene]:
    """``n_scenes`` scenes with seeds ``seed, seed+1, ...``."""
    return [generate_phantom(params, seed + k) for k in range(n_scenes)]


# --- evaluation ---------------------------------------------------------------

@dataclass
class ErrorReport:
    counts: dict[int, int] = field(default_factory=lambda: {k: 0 for k in range(1, 7)})
    total_cells: int = 0
    total_internal: int = 0
    n_predictions: int = 0
    n_matched: int = 0
    iou_threshold: float = 0.5
    boundary_iou: float = 0.8

    def rate(self, cls: int) -> float:
        total = self.total_cells if cls in CELL_CLASSES else self.total_internal
        return self.counts[cls] / total if total else 0.0

    def __add__(self, other: "ErrorReport") -> "ErrorReport":
        return ErrorReport(
            {k: self.counts[k] + other.counts[k] for k in range(1, 7)},
            self.total_cells + other.total_cells,
            self.total_internal + other.total_internal,
            self.n_predictions + other.n_predictions,
            self.n_matched + other.n_matched,
            self.iou_threshold,
            self.boundary_iou,
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "counts": {str(k): v for k, v in self.counts.items()},
            "rates": {str(k): self.rate(k) for k in range(1, 7)},
            "classes": {str(k): v for k, v in CLASS_NAMES.items()},
            "total_cells": self.total_cells,
            "total_internal": self.total_internal,
            "n_predictions": self.n_predictions,
            "n_matched": self.n_matched,
            "iou_threshold": self.iou_threshold,
            "boundary_iou": self.boundary_iou,
        }

    def to_table(self) -> str:
        """Counts row and percentage row, cell classes left, internal classes right."""
        left = f"Cell detection errors for {self.total_cells} cells"
        right = f"Internal and nucleus errors for {self.total_internal} cells"
        col = 9
        header = "".join(f"{f'({k})':>{col}}" for k in CELL_CLASSES) + " |" + \
            "".join(f"{f'({k})':>{col}}" for k in INTERNAL_CLASSES)
        counts = "".join(f"{self.counts[k]:>{col}}" for k in CELL_CLASSES) + " |" + \
            "".join(f"{self.counts[k]:>{col}}" for k in INTERNAL_CLASSES)
        rates = "".join(f"{format_rate(self.counts[k], self.total_cells):>{col}}"
                        for k in CELL_CLASSES) + " |" + \
            "".join(f"{format_rate(self.counts[k], self.total_internal):>{col}}"
                    for k in INTERNAL_CLASSES)
        legend = "  ".join(f"({k}) {v}" for k, v in CLASS_NAMES.items())
        return "\n".join([
            f"{left} | {right}",
            header, counts, rates,
            f"matching IoU >= {self.iou_threshold}, poor boundary IoU < {self.boundary_iou}",
            legend,
        ])


def format_rate(count: int, total: int) -> str:
    return f"{100.0 * count / total:.2f}%" if total else "n/a"


@dataclass(frozen=True, eq=False)
class TruthStructure:
    region: Region


@dataclass(frozen=True, eq=False)
class TruthPrediction:
    """Ground truth of one cell in the shape of a pipeline cell record."""

    image_id: str
    region: Region
    structures: tuple[TruthStructure, ...] | None
    nucleus_region: Region | None


def _mask_region(mask: np.ndarray, pixel_size_um: float) -> Region:
    ys, xs = np.nonzero(mask)
    return region_from_pixels(np.column_stack([xs, ys]), pixel_size_um)


def truth_predictions(scene: PhantomScene) -> list[TruthPrediction]:
    """Ground-truth cells, blobs and nuclei expressed as predictions."""
    s = scene.image.pixel_size_um
    out = []
    for cell in scene.cells:
        region = _mask_region(scene.cell_labels == cell.label, s)
        blobs = [b for b in scene.blobs if b.cell_label == cell.label]
        structures = tuple(TruthStructure(_mask_region(scene.blob_labels == b.blob_id, s))
                           for b in blobs)
        nb = scene.nucleus_blob(cell.label)
        nucleus = None
        if nb is not None:
            nucleus = structures[[b.blob_id for b in blobs].index(nb)].region
        out.append(TruthPrediction(scene.id, region, structures, nucleus))
    return out


def _flat(region, width: int) -> np.ndarray:
    return region.flat_indices(width)


def evaluate(scene: PhantomScene, predictions: Sequence, iou_threshold: float = 0.5,
             boundary_iou: float = 0.8) -> ErrorReport:
    """Classify segmentation errors of one scene against its ground truth.

    ``predictions`` are cell records of that scene (anything with ``image_id``,
    ``region``, ``structures`` and ``nucleus_region``). Predictions are matched
    to ground-truth cells greedily by descending IoU (at least
    ``iou_threshold``). Internal classes are scored only on matched cells whose
    internal detection ran.

    Raises:
        SceneMismatchError: a prediction belongs to a different image.
    """
    for pred in predictions:
        if pred.image_id != scene.id:
            raise SceneMismatchError(f"prediction for {pred.image_id!r} given with scene {scene.id!r}")
    width = scene.image.width
    gt_flat = scene.cell_labels.ravel()
    blob_flat = scene.blob_labels.ravel()
    n_gt = len(scene.cells)
    gt_area = np.bincount(gt_flat, minlength=n_gt + 1)

    pairs = []
    for i, pred in enumerate(predictions):
        idx = _flat(pred.region, width)
        inter = np.bincount(gt_flat[idx], minlength=n_gt + 1)
        for g in np.flatnonzero(inter[1:]) + 1:
            iou = inter[g] / (len(idx) + gt_area[g] - inter[g])
            if iou >= iou_threshold:
                pairs.append((-iou, i, int(g)))
    pairs.sort()
    matched_pred: dict[int, tuple[int, float]] = {}
    matched_gt: set[int] = set()
    for neg_iou, i, g in pairs:
        if i in matched_pred or g in matched_gt:
            continue
        matched_pred[i] = (g, -neg_iou)
        matched_gt.add(g)

    report = ErrorReport(iou_threshold=iou_threshold, boundary_iou=boundary_iou)
    report.total_cells = n_gt
    report.n_predictions = len(predictions)
    report.n_matched = len(matched_pred)
    report.counts[1] = n_gt - len(matched_gt)
    report.counts[2] = len(predictions) - len(matched_pred)
    report.counts[3] = sum(1 for _, iou in matched_pred.values() if iou < boundary_iou)

    for i, (g, _) in sorted(matched_pred.items()):
        pred = predictions[i]
        if pred.structures is None:
            continue
        report.total_internal += 1
        if pred.structures:
            found = np.unique(np.concatenate([blob_flat[_flat(s.region, width)]
                                              for s in pred.structures]))
        else:
            found = np.zeros(0, dtype=blob_flat.dtype)
        missed = {b.blob_id for b in scene.blobs if b.cell_label == g} - set(found.tolist())
        report.counts[4] += len(missed)

        nb = scene.nucleus_blob(g)
        nucleus = pred.nucleus_region
        if nb is None or nb in missed or nucleus is None:
            continue
        nidx = _flat(nucleus, width)
        overlap = np.bincount(blob_flat[nidx], minlength=len(scene.blobs) + 1)
        overlap[0] = 0
        if overlap.max() == 0 or int(np.argmax(overlap)) != nb:
            report.counts[5] += 1
            continue
        gt_n = int(np.count_nonzero(blob_flat == nb))
        iou = overlap[nb] / (len(nidx) + gt_n - overlap[nb])
        if iou < boundary_iou:
            report.counts[6] += 1
    return report


def evaluate_run(scenes: Sequence[PhantomScene], result, iou_threshold: float = 0.5,
                 boundary_iou: float = 0.8) -> ErrorReport:
    """Sum of per-scene reports for a pipeline run over ``scenes``."""
    by_image = result.cells_by_image()
    total = ErrorReport(iou_threshold=iou_threshold, boundary_iou=boundary_iou)
    for scene in scenes:
        total = total + evaluate(scene, by_image.get(scene.id, []), iou_threshold, boundary_iou)
    return total


# --- throughput ---------------------------------------------------------------

REFERENCE_PER_IMAGE_S = 0.3
REFERENCE_PER_CELL_S = 0.113


@dataclass
class BenchmarkResult:
    per_image_s: float
    per_cell_s: float | None
    n_images: int
    n_cells: int
    repetitions: int
    workers: int
    runs_s: list[float]
    machine: dict[str, Any]

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["reference"] = {"per_image_s": REFERENCE_PER_IMAGE_S, "per_cell_s": REFERENCE_PER_CELL_S}
        return d

    def summary(self) -> str:
        per_cell = "n/a" if self.per_cell_s is None else f"{self.per_cell_s:.4f} s"
        return (f"{self.n_images} images, {self.n_cells} cells, {self.workers} worker(s), "
                f"{self.repetitions} runs: {self.per_image_s:.4f} s/image "
                f"(reference {REFERENCE_PER_IMAGE_S} s), {per_cell} /cell "
                f"(reference {REFERENCE_PER_CELL_S} s)")


def machine_descriptor() -> dict[str, Any]:
    return {
        "platform": platform.platform(),
        "processor": platform.processor() or platform.machine(),
        "python": sys.version.split()[0],
        "cpu_count": os.cpu_count(),
    }


def benchmark(images: Sequence, cfg: Config | None = None, workers: int = 1,
              repetitions: int = 3, warmup: bool = True) -> BenchmarkResult:
    """Wall-clock per-image and per-cell means of full pipeline runs."""
    from .pipeline import run_images

    if repetitions < 3:
        raise ValueError("repetitions must be at least 3")
    if warmup:
        run_images(images, cfg, workers)
    runs, n_cells = [], 0
    for _ in range(repetitions):
        t0 = time.perf_counter()
        result = run_images(images, cfg, workers)
        runs.append(time.perf_counter() - t0)
        n_cells = len(result.cells)
    mean = statistics.fmean(runs)
    return BenchmarkResult(
        per_image_s=mean / len(images),
        per_cell_s=mean / n_cells if n_cells else None,
        n_images=len(images),
        n_cells=n_cells,
        repetitions=repetitions,
        workers=workers,
        runs_s=runs,
        machine=machine_descriptor(),
    )
