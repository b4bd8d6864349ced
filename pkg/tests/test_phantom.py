import dataclasses
import json
import math

import numpy as np
import pytest

from qpmseg.core import region_from_pixels
from qpmseg.phantom import (ErrorReport, OvercrowdedError, PhantomParams, PhantomScene,
                            SceneMismatchError, benchmark, evaluate, format_rate,
                            generate_phantom, truth_predictions)

from helpers import mask_pixels


@pytest.fixture(scope="module")
def scene():
    return generate_phantom(PhantomParams(n_granules=2), seed=7)


class TestGenerate:
    def test_constant_image_without_content(self):
        p = PhantomParams(n_cells=0, n_debris=0, noise_sigma=0.0)
        img = generate_phantom(p, 1).image
        assert np.all(img.phase == p.background)
        assert img.phase.shape == (p.height, p.width)

    def test_same_seed_same_scene(self):
        a, b = generate_phantom(seed=3), generate_phantom(seed=3)
        assert np.array_equal(a.image.phase, b.image.phase)
        assert np.array_equal(a.blob_labels, b.blob_labels)
        assert a.cells == b.cells and a.artifacts == b.artifacts
        assert not np.array_equal(a.image.phase, generate_phantom(seed=4).image.phase)

    def test_masks_nest_and_are_disjoint(self, scene):
        for cell in scene.cells:
            cell_mask = scene.cell_labels == cell.label
            assert np.all(cell_mask[scene.nucleus_labels == cell.label])
            for b in scene.blobs:
                if b.cell_label == cell.label:
                    assert np.all(cell_mask[scene.blob_labels == b.blob_id])
        # one label image per class means disjoint by construction; check blob kinds too
        assert sum(b.kind == "nucleus" for b in scene.blobs) == len(scene.cells)

    def test_cells_connected_and_sized(self, scene):
        s = scene.params.pixel_size_um
        for cell in scene.cells:
            region = region_from_pixels(mask_pixels(scene.cell_labels == cell.label), s)
            assert region.area == pytest.approx(math.pi * cell.radius_um ** 2, rel=0.05)
            assert 10.0 <= 2 * cell.radius_um <= 50.0

    def test_nucleus_contrast(self, scene):
        for cell in scene.cells:
            assert cell.nucleus_amplitude >= 2.0 * cell.peak

    def test_paraboloid_volume(self):
        p = PhantomParams(n_cells=1, diameter_range_um=(30.0, 30.0), peak_phase_range=(2.0, 2.0),
                          rim_fraction=0.0, background=0.0, nucleus=False, noise_sigma=0.0,
                          n_debris=0)
        sc = generate_phantom(p, 0)
        s = p.pixel_size_um
        volume = math.fsum(sc.image.density[sc.cell_labels == 1].tolist()) * s * s
        expected = math.pi * 15.0 ** 2 * (2.0 * 0.528 / (2 * math.pi)) / 2
        assert volume == pytest.approx(expected, rel=0.02)

    def test_overcrowded(self):
        with pytest.raises(OvercrowdedError):
            generate_phantom(PhantomParams(n_cells=60, diameter_range_um=(50.0, 60.0),
                                           max_attempts=200), 0)

    @pytest.mark.parametrize("bad", [dict(diameter_range_um=(4.0, 10.0)),
                                     dict(diameter_range_um=(10.0, 70.0)),
                                     dict(n_cells=-1), dict(noise_sigma=-0.1),
                                     dict(rim_fraction=1.5)])
    def test_invalid_params(self, bad):
        with pytest.raises(ValueError):
            PhantomParams(**bad)

    def test_save_load(self, scene, tmp_path):
        raw = scene.save(tmp_path)
        back = PhantomScene.load(raw)
        assert np.array_equal(back.image.phase, scene.image.phase)
        assert np.array_equal(back.blob_labels, scene.blob_labels)
        assert back.params == scene.params and back.cells == scene.cells
        assert back.blobs == scene.blobs and back.artifacts == scene.artifacts


class TestEvaluate:
    def test_truth_gives_zero_report(self, scene):
        report = evaluate(scene, truth_predictions(scene))
        assert all(v == 0 for v in report.counts.values())
        assert report.n_matched == len(scene.cells) == report.total_cells
        assert report.total_internal == len(scene.cells)

    def test_deleted_cell_is_missed(self, scene):
        preds = truth_predictions(scene)[1:]
        report = evaluate(scene, preds)
        assert report.counts[1] == 1
        assert sum(report.counts.values()) == 1

    def test_extra_prediction_is_not_a_cell(self, scene):
        preds = truth_predictions(scene)
        bg = np.zeros_like(scene.cell_labels, dtype=bool)
        bg[0:5, 0:5] = True
        fake = dataclasses.replace(preds[0], region=region_from_pixels(mask_pixels(bg), 0.5),
                                   structures=None, nucleus_region=None)
        report = evaluate(scene, preds + [fake])
        assert report.counts[2] == 1 and report.counts[1] == 0

    def test_poor_boundary(self, scene):
        preds = truth_predictions(scene)
        cell = preds[0].region
        # keep 65% of the pixels (top rows): IoU 0.65 -> matched but poor
        keep = cell.pixels[: int(0.65 * cell.area_px)]
        shrunk = dataclasses.replace(preds[0], region=region_from_pixels(keep, 0.5))
        report = evaluate(scene, [shrunk] + preds[1:])
        assert report.counts[3] == 1 and report.counts[1] == 0

    def test_missed_structure_and_wrong_nucleus(self, scene):
        preds = truth_predictions(scene)
        p0 = preds[0]
        granules = [s for s in p0.structures if s.region is not p0.nucleus_region]
        assert granules
        # drop the nucleus from the structures and call a granule the nucleus
        wrong = dataclasses.replace(p0, structures=tuple(granules),
                                    nucleus_region=granules[0].region)
        report = evaluate(scene, [wrong] + preds[1:])
        assert report.counts[4] == 1  # the nucleus blob itself was missed
        assert report.counts[5] == 0  # not counted twice for the same nucleus
        chosen_wrong = dataclasses.replace(p0, nucleus_region=granules[0].region)
        report = evaluate(scene, [chosen_wrong] + preds[1:])
        assert report.counts[5] == 1 and report.counts[4] == 0

    def test_poor_nucleus_boundary(self, scene):
        preds = truth_predictions(scene)
        p0 = preds[0]
        nuc = p0.nucleus_region
        keep = nuc.pixels[: int(0.6 * nuc.area_px)]
        worse = dataclasses.replace(p0, nucleus_region=region_from_pixels(keep, 0.5))
        report = evaluate(scene, [worse] + preds[1:])
        assert report.counts[6] == 1 and report.counts[5] == 0

    def test_internal_skipped_not_counted(self, scene):
        preds = [dataclasses.replace(p, structures=None, nucleus_region=None)
                 for p in truth_predictions(scene)]
        report = evaluate(scene, preds)
        assert report.total_internal == 0
        assert report.rate(4) == 0.0

    def test_permutation_invariant_and_bookkeeping(self, scene):
        preds = truth_predictions(scene)
        preds = [preds[2], preds[0]] + preds[3:]
        a = evaluate(scene, preds)
        b = evaluate(scene, list(reversed(preds)))
        assert a.counts == b.counts
        assert a.n_matched + a.counts[1] == a.total_cells
        assert a.n_matched + a.counts[2] == a.n_predictions

    def test_scene_mismatch(self, scene):
        other = generate_phantom(seed=8)
        with pytest.raises(SceneMismatchError):
            evaluate(scene, truth_predictions(other))


class TestReport:
    def test_rate_format(self):
        assert format_rate(75, 4059) == "1.85%"
        assert format_rate(1, 0) == "n/a"

    def test_table_layout(self):
        r = ErrorReport(counts={1: 75, 2: 241, 3: 10, 4: 35, 5: 71, 6: 20},
                        total_cells=4059, total_internal=1500)
        lines = r.to_table().splitlines()
        assert "4059" in lines[0] and "1500" in lines[0]
        assert lines[1].split() == ["(1)", "(2)", "(3)", "|", "(4)", "(5)", "(6)"]
        assert lines[2].split()[0] == "75"
        assert lines[3].split()[0] == "1.85%"
        assert r.rate(1) == 75 / 4059
        assert r.rate(4) == 35 / 1500
        json.dumps(r.to_dict())

    def test_merge(self):
        a = ErrorReport(counts={k: 1 for k in range(1, 7)}, total_cells=5, total_internal=3)
        b = a + a
        assert b.counts[1] == 2 and b.total_cells == 10 and b.total_internal == 6


class TestBenchmark:
    def test_zero_cells_per_cell_is_none(self):
        imgs = [generate_phantom(PhantomParams(n_cells=0, n_debris=0), s).image for s in range(2)]
        res = benchmark(imgs, repetitions=3, warmup=False)
        assert res.per_cell_s is None and "n/a" in res.summary()
        assert res.per_image_s > 0 and len(res.runs_s) == 3
        assert res.machine["cpu_count"] >= 1
        assert res.to_dict()["reference"]["per_image_s"] == 0.3

    def test_needs_three_repetitions(self):
        with pytest.raises(ValueError):
            benchmark([generate_phantom(seed=0).image], repetitions=2)
