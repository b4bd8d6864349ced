"""Three-pass batch segmentation of a measurement.

Pass 1 reduces every image to its summary values and fixes the cell threshold.
Pass 2 detects and checks cells per image. The mean of the cell maxima needed
for the strictest internal threshold is only known once pass 2 has finished
for all images, so pass 3 (internal structures and features) runs after that
barrier. Passes must not be fused.
"""

from __future__ import annotations

import json
import logging
import time
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence, Union

from . import __version__
from .core import Config, PhaseImage, QPMSegError, Region
from .features import FeatureRecord, assemble_record
from .fileio import Calibration, ImageLoadError, discover_images, load_image
from .internal import (InternalStructure, InternalThresholds, NoCellsError, NucleusResult,
                       compute_internal_thresholds, detect_internal, eligible_for_internal,
                       select_nucleus)
from .plausibility import gradient_field, run_checks
from .segment import detect_candidates
from .stats import (ImageStats, MeasurementStats, filter_artifact_images, image_stats,
                    measurement_threshold)

logger = logging.getLogger(__name__)

ImageSource = Union[PhaseImage, str, Path]


class NoImagesError(QPMSegError):
    """Nothing in the input could be loaded."""


@dataclass(frozen=True, eq=False)
class CellRecord:
    image_id: str
    cell_id: int
    region: Region
    max_phase: float
    structures: tuple[InternalStructure, ...] | None
    nucleus: NucleusResult | None
    features: FeatureRecord

    @property
    def nucleus_region(self) -> Region | None:
        if self.nucleus is None or self.nucleus.nucleus is None:
            return None
        return self.nucleus.nucleus.region


@dataclass
class RunManifest:
    inputs: list[str]
    config: dict[str, Any]
    measurement: dict[str, Any]
    internal_thresholds: dict[str, float] | None
    counts: dict[str, Any]
    load_errors: list[dict[str, str]]
    filtered_images: list[str]
    runtime: dict[str, Any] = field(default_factory=dict)
    version: str = __version__

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def write(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path


@dataclass
class RunResult:
    cells: list[CellRecord]
    rejects: dict[str, list[tuple[Region, str]]]
    stats: MeasurementStats
    internal_thresholds: InternalThresholds | None
    manifest: RunManifest

    @property
    def records(self) -> list[FeatureRecord]:
        return [c.features for c in self.cells]

    def cells_by_image(self) -> dict[str, list[CellRecord]]:
        out: dict[str, list[CellRecord]] = {}
        for c in self.cells:
            out.setdefault(c.image_id, []).append(c)
        return out


# --- per-image work units (top level so they pickle) ---------------------------

def _resolve(source: ImageSource, calibration: Calibration | None) -> PhaseImage:
    if isinstance(source, PhaseImage):
        return source
    return load_image(source, calibration)


def _source_name(source: ImageSource) -> str:
    return source.id if isinstance(source, PhaseImage) else str(source)


def _pass1(job):
    source, calibration, cfg = job
    try:
        img = _resolve(source, calibration)
    except (ImageLoadError, OSError) as exc:
        return None, str(exc)
    return image_stats(img, cfg.histogram_bin_width), None


def _pass2(job):
    source, calibration, t, cfg = job
    img = _resolve(source, calibration)
    candidates = detect_candidates(img, t, cfg)
    grad = gradient_field(img, cfg) if candidates and cfg.plausibility_checks else None
    cells, rejects = run_checks(img, candidates, cfg, grad)
    cells.sort(key=lambda r: r.top_left)
    maxima = [float(r.values(img.phase).max()) for r in cells]
    return img.id, cells, rejects, maxima


def _pass3(job):
    source, calibration, cells, maxima, t, th, cfg = job
    img = _resolve(source, calibration)
    out = []
    for k, (cell, cmax) in enumerate(zip(cells, maxima)):
        structures: tuple[InternalStructure, ...] | None = None
        result = None
        if th is not None and eligible_for_internal(cell, cfg):
            structures = tuple(detect_internal(cell, img, th, cfg))
            result = select_nucleus(structures)
        rec = assemble_record(img.id, k, cell, img, t, structures, result)
        out.append(CellRecord(img.id, k, cell, cmax, structures, result, rec))
    return out


@contextmanager
def _mapper(workers: int) -> Iterable[Callable]:
    if workers <= 1:
        yield lambda fn, jobs: list(map(fn, jobs))
        return
    with ProcessPoolExecutor(max_workers=workers) as pool:
        def run(fn, jobs):
            jobs = list(jobs)
            chunk = max(1, len(jobs) // (workers * 4))
            return list(pool.map(fn, jobs, chunksize=chunk))
        yield run


def run_images(
    sources: Sequence[ImageSource],
    cfg: Config | None = None,
    workers: int = 1,
    calibration: Calibration | None = None,
) -> RunResult:
    """Segment a measurement given as images or image paths.

    Output order is (image id, cell top-left) whatever the number of workers.

    Raises:
        NoImagesError: no source could be loaded.
        DegenerateThresholdError: all backgrounds are zero and the config has
            no ``fallback_threshold``.
    """
    cfg = cfg or Config()
    if not sources:
        raise NoImagesError("no input images")
    t_start = time.perf_counter()

    with _mapper(workers) as pmap:
        # pass 1: statistics, artifact filtering, threshold
        t0 = time.perf_counter()
        results = pmap(_pass1, [(s, calibration, cfg) for s in sources])
        loaded: dict[str, ImageSource] = {}
        all_stats: list[ImageStats] = []
        load_errors = []
        for src, (st, err) in zip(sources, results):
            if st is None:
                logger.warning("skipping %s: %s", _source_name(src), err)
                load_errors.append({"source": _source_name(src), "error": err})
                continue
            if st.image_id in loaded:
                raise ValueError(f"duplicate image id {st.image_id!r}")
            loaded[st.image_id] = src
            all_stats.append(st)
        if not all_stats:
            raise NoImagesError("none of the inputs could be loaded")
        all_stats.sort(key=lambda s: s.image_id)
        kept, filtered = filter_artifact_images(all_stats, cfg)
        stats = measurement_threshold(kept, filtered, cfg.fallback_threshold)
        t = stats.threshold
        for s in filtered:
            logger.info("%s: filtered as artifact image", s.image_id)
        pass1 = time.perf_counter() - t0

        # pass 2: cell detection and plausibility checks
        t0 = time.perf_counter()
        ids = [s.image_id for s in kept]
        detected = pmap(_pass2, [(loaded[i], calibration, t, cfg) for i in ids])
        pass2 = time.perf_counter() - t0

        # barrier: internal thresholds need every cell of the measurement
        rejects = {}
        maxima_all = []
        n_candidates = 0
        for image_id, cells, rej, maxima in detected:
            rejects[image_id] = rej
            n_candidates += len(cells) + len(rej)
            maxima_all.extend(m for c, m in zip(cells, maxima) if not c.border)
            reasons = Counter(r for _, r in rej)
            logger.info("%s: %d candidates, %d cells, rejects %s", image_id,
                        len(cells) + len(rej), len(cells), dict(sorted(reasons.items())) or "none")
        if not maxima_all:
            # only border cells: their maxima are the only estimate available
            maxima_all = [m for _, cells, _, maxima in detected for m in maxima]
        try:
            th = compute_internal_thresholds(t, maxima_all)
        except NoCellsError as exc:
            logger.warning("%s", exc)
            th = None

        # pass 3: internal structures and features
        t0 = time.perf_counter()
        jobs = [(loaded[i], calibration, cells, maxima, t, th, cfg)
                for i, cells, _, maxima in detected if cells]
        per_image = pmap(_pass3, jobs)
        pass3 = time.perf_counter() - t0

    cell_records = [c for group in per_image for c in group]
    total = time.perf_counter() - t_start

    n_cells = len(cell_records)
    reason_counts = Counter(r for rej in rejects.values() for _, r in rej)
    counts = {
        "inputs": len(sources),
        "images_loaded": len(all_stats),
        "load_errors": len(load_errors),
        "images_filtered": len(filtered),
        "images_processed": len(kept),
        "candidates": n_candidates,
        "cells": n_cells,
        "rejects": sum(reason_counts.values()),
        "rejects_by_reason": dict(sorted(reason_counts.items())),
        "cells_internal": sum(1 for c in cell_records if c.nucleus is not None),
        "cells_with_nucleus": sum(1 for c in cell_records if c.nucleus_region is not None),
        "cells_flagged": sum(1 for c in cell_records if c.features.abnormal_or_aggregate),
        "cells_border": sum(1 for c in cell_records if c.region.border),
    }
    manifest = RunManifest(
        inputs=[_source_name(s) for s in sources],
        config=cfg.to_dict(),
        measurement={
            "n_images": stats.n_images,
            "mean_background_rad": stats.mean_background,
            "threshold_rad": stats.threshold,
            "fallback_used": stats.fallback_used,
        },
        internal_thresholds=None if th is None else asdict(th),
        counts=counts,
        load_errors=load_errors,
        filtered_images=list(stats.filtered_ids),
        runtime={
            "workers": workers,
            "pass1_s": pass1,
            "pass2_s": pass2,
            "pass3_s": pass3,
            "total_s": total,
            "per_image_s": total / len(all_stats),
            "per_cell_s": total / n_cells if n_cells else None,
        },
    )
    return RunResult(cell_records, rejects, stats, th, manifest)


def run_pipeline(input_dir, cfg: Config | None = None, workers: int = 1,
                 calibration: Calibration | None = None) -> RunResult:
    """Segment every supported image file in ``input_dir`` (sorted by name)."""
    paths = discover_images(input_dir)
    if not paths:
        raise NoImagesError(f"no supported images in {input_dir}")
    return run_images(paths, cfg, workers, calibration)

