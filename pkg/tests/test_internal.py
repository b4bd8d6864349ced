import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qpmseg.core import Config, region_from_pixels
from qpmseg.internal import (InternalStructure, InternalThresholds, NoCellsError,
                             compute_internal_thresholds, detect_internal,
                             eligible_for_internal, select_nucleus)

from helpers import disk_mask, image, mask_pixels

TH = InternalThresholds(1.0, 1.5, 2.0, 2.5)


def _cell_scene(blobs, radius=25, shape=(70, 70), base=0.5):
    """Flat cell of phase ``base`` with flat discs ``(cx, cy, r, extra)`` added."""
    cell = disk_mask(radius, shape, (35, 35))
    phase = np.where(cell, base, 0.0)
    for cx, cy, r, extra in blobs:
        phase[disk_mask(r, shape, (cx, cy)) & cell] += extra
    return image(phase), region_from_pixels(mask_pixels(cell), 1.0)


def _structure(x0, tiers, mean, n=25):
    side = int(round(n ** 0.5))
    region = region_from_pixels([(x0 + i, j) for i in range(side) for j in range(side)], 1.0)
    return InternalStructure(region, frozenset(tiers), mean, mean)


class TestThresholds:
    def test_two_cells(self):
        th = compute_internal_thresholds(0.12, [2.0, 3.0])
        assert th.t_i1 == pytest.approx(0.48)
        assert th.t_i2 == pytest.approx(0.72)
        assert th.t_i3 == pytest.approx(2.0)

    def test_single_cell(self):
        th = compute_internal_thresholds(0.12, [2.0])
        assert (th.t_i1, th.t_i2, th.t_i3) == pytest.approx((0.48, 0.72, 1.6))

    def test_zero_threshold(self):
        with pytest.raises(ValueError):
            compute_internal_thresholds(0.0, [2.0])

    def test_no_cells(self):
        with pytest.raises(NoCellsError):
            compute_internal_thresholds(0.1, [])

    def test_by_tier(self):
        assert TH.by_tier() == {1: 1.0, 2: 1.5, 3: 2.0}


class TestEligibility:
    def _line(self, length_px, s=1.0):
        return region_from_pixels([(x, 0) for x in range(length_px + 1)], s)

    def test_boundary_is_inclusive(self):
        r = self._line(25)
        assert r.diameter == 25.0
        assert eligible_for_internal(r, Config())

    def test_erythrocyte_scale(self):
        assert not eligible_for_internal(self._line(6), Config())

    def test_large_cell(self):
        assert eligible_for_internal(self._line(80, 0.5), Config())


class TestDetect:
    def test_uniform_interior_below_first_level(self):
        img, cell = _cell_scene([])
        assert detect_internal(cell, img, TH, Config()) == []

    def test_dense_blob_found_at_all_levels(self):
        img, cell = _cell_scene([(35, 35, 4, 2.5)])
        blob = disk_mask(4, (70, 70), (35, 35))
        assert 45 <= blob.sum() <= 55
        found = detect_internal(cell, img, TH, Config())
        assert len(found) == 1
        s = found[0]
        assert s.tiers == frozenset({1, 2, 3})
        assert set(map(tuple, s.region.pixels.tolist())) == set(map(tuple, mask_pixels(blob).tolist()))

    def test_small_blob_dropped(self):
        img, cell = _cell_scene([(35, 35, 1.5, 2.5)])
        assert disk_mask(1.5, (70, 70), (35, 35)).sum() < 20
        assert detect_internal(cell, img, TH, Config()) == []

    def test_structure_keeps_loosest_outline(self):
        # stepped blob: wide at level 1, narrow core above level 3
        img, cell = _cell_scene([(35, 35, 8, 0.7), (35, 35, 3, 2.0)])
        (s,) = detect_internal(cell, img, TH, Config())
        assert s.tiers == frozenset({1, 2, 3})
        assert s.region.area_px == disk_mask(8, (70, 70), (35, 35)).sum()

    def test_split_creates_nested_structures(self):
        # one component at level 1 (phase 1.2) splits into two cores from level 2 on
        img, cell = _cell_scene([(35, 35, 12, 0.7), (29, 35, 3, 2.0), (41, 35, 3, 2.0)])
        found = detect_internal(cell, img, TH, Config())
        tiers = sorted(tuple(sorted(s.tiers)) for s in found)
        assert tiers == [(1,), (2, 3), (2, 3)]
        parent = next(s for s in found if 3 not in s.tiers)
        parent_px = set(map(tuple, parent.region.pixels.tolist()))
        for s in found:
            assert set(map(tuple, s.region.pixels.tolist())) <= parent_px
        result = select_nucleus(found)
        assert result.flag_abnormal_or_aggregate
        assert result.n_candidates == 2

    def test_structures_inside_cell_and_monotone(self):
        rng = np.random.default_rng(5)
        blobs = [(35 + dx, 35 + dy, 4, a) for dx, dy, a in
                 [(-10, 0, 2.0), (10, 0, 0.8), (0, 12, 1.2)]]
        img, cell = _cell_scene(blobs)
        noisy = image(img.phase + np.where(img.phase > 0, rng.normal(0, 0.01, img.phase.shape), 0))
        cell_px = set(map(tuple, cell.pixels.tolist()))
        found = detect_internal(cell, noisy, TH, Config())
        assert len(found) == 3
        for s in found:
            assert set(map(tuple, s.region.pixels.tolist())) <= cell_px
            assert s.region.area_px >= 20
            # tier nesting: a structure found at a stricter level is found at all looser ones
            top = max(s.tiers)
            assert s.tiers == frozenset(range(1, top + 1))
            assert s.mean_density <= s.max_density

    def test_uniform_blob_mean_equals_max(self):
        img, cell = _cell_scene([(35, 35, 5, 2.5)])
        (s,) = detect_internal(cell, img, TH, Config())
        assert s.mean_density == s.max_density


class TestSelect:
    def test_empty(self):
        r = select_nucleus([])
        assert r.nucleus is None and not r.flag_abnormal_or_aggregate

    def test_single(self):
        s = _structure(0, {1}, 0.1)
        r = select_nucleus([s])
        assert r.nucleus is s and not r.flag_abnormal_or_aggregate

    def test_one_strict(self):
        faint1, faint2 = _structure(0, {1}, 0.3), _structure(10, {1, 2}, 0.35)
        dense = _structure(20, {1, 2, 3}, 0.2)
        r = select_nucleus([faint1, dense, faint2])
        assert r.nucleus is dense and not r.flag_abnormal_or_aggregate

    def test_two_strict_densest_wins_and_flags(self):
        a, b = _structure(0, {3}, 0.30), _structure(10, {3}, 0.25)
        r = select_nucleus([b, a])
        assert r.nucleus is a and r.flag_abnormal_or_aggregate
        assert set(map(id, r.candidates)) == {id(a), id(b)}

    def test_no_strict_picks_densest_unflagged(self):
        a, b = _structure(0, {1}, 0.1), _structure(10, {1, 2}, 0.2)
        r = select_nucleus([a, b])
        assert r.nucleus is b and not r.flag_abnormal_or_aggregate

    def test_tie_prefers_larger_area(self):
        small, big = _structure(0, {3}, 0.3, n=25), _structure(10, {3}, 0.3, n=36)
        assert select_nucleus([small, big]).nucleus is big

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.tuples(st.sampled_from([(1,), (1, 2), (1, 2, 3), (3,)]),
                              st.sampled_from([0.1, 0.2, 0.3])), min_size=1, max_size=5))
    def test_permutation_invariant(self, cases):
        structures = [_structure(10 * k, tiers, mean) for k, (tiers, mean) in enumerate(cases)]
        ref = select_nucleus(structures)
        for perm in itertools.islice(itertools.permutations(structures), 24):
            r = select_nucleus(list(perm))
            assert r.nucleus is ref.nucleus
            assert r.flag_abnormal_or_aggregate == ref.flag_abnormal_or_aggregate
        assert ref.nucleus in ref.candidates
        assert ref.flag_abnormal_or_aggregate == (sum(3 in s.tiers for s in structures) > 1)
