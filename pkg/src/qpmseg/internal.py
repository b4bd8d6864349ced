"""Internal structures of a cell and the choice of its nucleus.

Inside each sufficiently large cell the phase is thresholded at three levels:
4t, 6t (t being the cell threshold) and 0.8 times the mean of the per-cell
phase maxima of the measurement. Components found at several levels are the
same structure when a stricter component is the only one inside a looser
component; a looser component that holds two or more stricter components
stays a structure of its own and each inner component starts a new one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage

from .core import (EIGHT_CONNECTED, Config, PhaseImage, QPMSegError, Region,
                   phase_to_density, region_from_pixels)

STRICTEST_TIER = 3


class NoCellsError(QPMSegError):
    """The measurement has no detected cells, so no internal thresholds exist."""


@dataclass(frozen=True)
class InternalThresholds:
    t_i1: float
    t_i2: float
    t_i3: float
    mean_max_phase: float

    def by_tier(self) -> dict[int, float]:
        return {1: self.t_i1, 2: self.t_i2, 3: self.t_i3}


@dataclass(frozen=True, eq=False)
class InternalStructure:
    region: Region
    tiers: frozenset[int]
    mean_density: float
    max_density: float

    @property
    def sort_key(self) -> tuple:
        y, x = self.region.top_left
        return (y, x, -self.region.area_px, tuple(sorted(self.tiers)))


@dataclass(frozen=True, eq=False)
class NucleusResult:
    nucleus: InternalStructure | None
    candidates: tuple[InternalStructure, ...] = ()
    flag_abnormal_or_aggregate: bool = False

    @property
    def n_candidates(self) -> int:
        return len(self.candidates)


def compute_internal_thresholds(t: float, cell_maxima: Sequence[float]) -> InternalThresholds:
    """Thresholds ``4t``, ``6t`` and ``0.8 * mean(cell maxima)``.

    Raises:
        NoCellsError: ``cell_maxima`` is empty.
        ValueError: ``t`` is not positive.
    """
    if len(cell_maxima) == 0:
        raise NoCellsError("no detected cells; internal detection skipped")
    if not t > 0:
        raise ValueError(f"cell threshold must be positive, got {t}")
    mean_max = math.fsum(cell_maxima) / len(cell_maxima)
    return InternalThresholds(4.0 * t, 6.0 * t, 0.8 * mean_max, mean_max)


def eligible_for_internal(cell: Region, cfg: Config) -> bool:
    """Internal detection runs only for cells with enclosing diameter >= d_internal_min."""
    return cell.diameter >= cfg.d_internal_min_um


def _tier_components(phase_local, cell_mask, level, min_px):
    labels, n = ndimage.label((phase_local >= level) & cell_mask, structure=EIGHT_CONNECTED)
    if n == 0:
        return labels, []
    sizes = np.bincount(labels.ravel(), minlength=n + 1)
    keep = [k for k in range(1, n + 1) if sizes[k] >= min_px]
    return labels, keep


def detect_internal(cell: Region, img: PhaseImage, th: InternalThresholds,
                    cfg: Config) -> list[InternalStructure]:
    """Find internal structures of one cell.

    Components smaller than ``min_structure_px`` are dropped. Each structure is
    represented by its contour at the loosest level where it is a single,
    unbranched component, and carries the set of levels that found it.
    """
    cell_mask, (x0, y0) = cell.local_mask()
    h, w = cell_mask.shape
    phase_local = img.phase[y0:y0 + h, x0:x0 + w]
    levels = th.by_tier()
    # loosest first; equal levels keep tier order
    order = sorted(levels, key=lambda k: (levels[k], k))

    structures: list[tuple[list[int], np.ndarray]] = []  # (tiers, label-mask)
    prev_labels = None
    prev_owner: dict[int, int] = {}
    for tier in order:
        labels, keep = _tier_components(phase_local, cell_mask, levels[tier], cfg.min_structure_px)
        owner: dict[int, int] = {}
        if prev_labels is None:
            for k in keep:
                owner[k] = len(structures)
                structures.append(([tier], labels == k))
        else:
            children: dict[int, list[int]] = {}
            for k in keep:
                ys, xs = np.nonzero(labels == k)
                parent = int(prev_labels[ys[0], xs[0]])
                children.setdefault(parent, []).append(k)
            for parent, kids in children.items():
                if len(kids) == 1 and parent in prev_owner:
                    sid = prev_owner[parent]
                    structures[sid][0].append(tier)
                    owner[kids[0]] = sid
                else:
                    for k in kids:
                        owner[k] = len(structures)
                        structures.append(([tier], labels == k))
        prev_labels, prev_owner = labels, owner

    out = []
    for tiers, mask in structures:
        ys, xs = np.nonzero(mask)
        region = region_from_pixels(np.column_stack([xs + x0, ys + y0]), img.pixel_size_um)
        dens = phase_to_density(phase_local[ys, xs], img.wavelength_nm)
        lo, hi = float(dens.min()), float(dens.max())
        mean = min(max(math.fsum(dens.tolist()) / dens.size, lo), hi)
        out.append(InternalStructure(region, frozenset(tiers), mean, hi))
    out.sort(key=lambda s: s.sort_key)
    return out


def _density_rank(s: InternalStructure):
    y, x = s.region.top_left
    return (-s.mean_density, -s.region.area_px, y, x)


def select_nucleus(structures: Sequence[InternalStructure]) -> NucleusResult:
    """Pick the nucleus among a cell's internal structures.

    A single structure is the nucleus. With several, the candidates are those
    found at the strictest level; if that leaves more than one, the cell is
    flagged as abnormal or a possible aggregate and the densest candidate wins.
    Without any strict-level structure all structures are candidates and the
    densest is chosen, unflagged.
    """
    if not structures:
        return NucleusResult(None)
    ordered = sorted(structures, key=lambda s: s.sort_key)
    if len(ordered) == 1:
        return NucleusResult(ordered[0], (ordered[0],), False)
    strict = [s for s in ordered if STRICTEST_TIER in s.tiers]
    if len(strict) == 1:
        return NucleusResult(strict[0], (strict[0],), False)
    if strict:
        return NucleusResult(min(strict, key=_density_rank), tuple(strict), True)
    return NucleusResult(min(ordered, key=_density_rank), tuple(ordered), False)
