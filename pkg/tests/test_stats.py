import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qpmseg.core import Config
from qpmseg.stats import (DegenerateThresholdError, EmptyMeasurementError, ImageStats,
                          filter_artifact_images, image_stats, measurement_threshold,
                          write_stats_csv)

from helpers import image


def _bg(image_id, background, phi_min=None):
    lo = background if phi_min is None else phi_min
    return ImageStats(image_id, lo, max(background, 1.0), background, background)


class TestImageStats:
    def test_constant_image(self):
        s = image_stats(image(np.full((4, 5), 0.3)))
        assert (s.phi_min, s.phi_max, s.phi_mean, s.background) == (0.3, 0.3, 0.3, 0.3)

    def test_zero_image(self):
        s = image_stats(image(np.zeros((3, 3))))
        assert (s.phi_min, s.phi_max, s.phi_mean, s.background) == (0.0, 0.0, 0.0, 0.0)

    def test_hand_computed_example(self):
        phase = np.array([0.1] * 5 + [0.5] * 4).reshape(3, 3)
        s = image_stats(image(phase), 0.01)
        assert s.phi_min == 0.1
        assert s.phi_max == 0.5
        assert s.phi_mean == pytest.approx(2.5 / 9, abs=1e-12)
        assert s.background == pytest.approx(0.1, abs=0.01)

    def test_background_is_mode_not_mean(self):
        rng = np.random.default_rng(0)
        phase = 0.2 + rng.normal(0, 0.002, size=(50, 50))
        phase[:10, :10] += 2.0
        s = image_stats(image(phase))
        assert s.background == pytest.approx(0.2, abs=0.01)
        assert s.phi_mean > 0.25

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_permutation_invariant_and_bounded(self, seed):
        rng = np.random.default_rng(seed)
        phase = rng.normal(rng.uniform(-1, 1), rng.uniform(0.001, 0.5), size=(12, 9))
        a = image_stats(image(phase))
        b = image_stats(image(rng.permutation(phase.ravel()).reshape(9, 12)))
        assert (a.phi_min, a.phi_max, a.phi_mean, a.background) == \
            (b.phi_min, b.phi_max, b.phi_mean, b.background)
        assert a.phi_min <= a.phi_mean <= a.phi_max
        assert a.phi_min <= a.background <= a.phi_max


class TestFilter:
    def test_homogeneous_measurement_keeps_all(self):
        stats = [_bg(f"i{k}", 0.05) for k in range(10)]
        kept, filtered = filter_artifact_images(stats, Config())
        assert len(kept) == 10 and filtered == []

    def test_wrapped_image_dropped(self):
        stats = [_bg(f"i{k}", 0.05) for k in range(5)] + [_bg("wrap", 0.05, phi_min=-3.5)]
        kept, filtered = filter_artifact_images(stats, Config())
        assert [s.image_id for s in filtered] == ["wrap"]

    def test_background_outlier_dropped(self):
        # median 0.05, MAD 0 -> spread floored at one bin (0.01); limit 0.03; |0.50-0.05| > 0.03
        stats = [_bg(f"i{k}", 0.05) for k in range(9)] + [_bg("odd", 0.50)]
        kept, filtered = filter_artifact_images(stats, Config(background_sigma_factor=3.0))
        assert [s.image_id for s in filtered] == ["odd"]
        assert len(kept) == 9

    def test_spread_uses_mad(self):
        # median 0.055, MAD 0.03 -> limit 3 * 1.4826 * 0.03 = 0.133; 0.15 is 0.095 away, 0.2 is 0.145
        stats = [_bg(f"i{k}", k / 100) for k in range(10)] + [_bg("near", 0.15), _bg("far", 0.2)]
        _, filtered = filter_artifact_images(stats, Config())
        assert [s.image_id for s in filtered] == ["far"]

    def test_empty(self):
        with pytest.raises(EmptyMeasurementError):
            filter_artifact_images([], Config())


class TestThreshold:
    def test_single_image(self):
        m = measurement_threshold([_bg("a", 0.05)])
        assert m.mean_background == 0.05
        assert m.threshold == 0.10

    def test_three_images(self):
        m = measurement_threshold([_bg("a", 0.05), _bg("b", 0.07), _bg("c", 0.06)])
        assert m.mean_background == pytest.approx(0.06, abs=1e-15)
        assert m.threshold == pytest.approx(0.12, abs=1e-15)

    def test_negative_background_uses_magnitude(self):
        assert measurement_threshold([_bg("a", -0.05)]).threshold == 0.10

    def test_degenerate(self):
        with pytest.raises(DegenerateThresholdError):
            measurement_threshold([_bg("a", 0.0), _bg("b", 0.0)])

    def test_fallback(self):
        m = measurement_threshold([_bg("a", 0.0)], fallback=0.2)
        assert m.threshold == 0.2 and m.fallback_used

    def test_filtered_ids_recorded(self):
        m = measurement_threshold([_bg("a", 0.05)], [_bg("b", 0.5)])
        assert m.filtered_ids == ("b",)
        assert {s.image_id for s in m.per_image} == {"a", "b"}

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(-1, 1).filter(lambda v: abs(v) > 1e-6), min_size=1, max_size=20),
           st.floats(0.01, 100), st.integers(0, 1000))
    def test_permutation_and_scaling(self, bgs, a, seed):
        stats = [_bg(f"i{k}", b) for k, b in enumerate(bgs)]
        perm = list(np.random.default_rng(seed).permutation(len(stats)))
        t = measurement_threshold(stats).threshold
        if t == 0:
            return
        assert measurement_threshold([stats[i] for i in perm]).threshold == t
        scaled = [_bg(f"i{k}", a * b) for k, b in enumerate(bgs)]
        # each product a*b rounds relative to |b|, so bound the error by the absolute sum
        tol = 1e-14 * a * sum(abs(b) for b in bgs)
        assert measurement_threshold(scaled).threshold == pytest.approx(a * t, rel=1e-12, abs=tol)
        assert t == 2 * abs(math.fsum(bgs) / len(bgs))


def test_stats_csv(tmp_path):
    m = measurement_threshold([_bg("b", 0.05), _bg("a", 0.07)], [_bg("c", 0.5)])
    path = tmp_path / "stats.csv"
    write_stats_csv(path, m)
    lines = path.read_text().splitlines()
    assert lines[0] == "image_id,phi_min_rad,phi_max_rad,phi_mean_rad,background_rad,filtered"
    assert [ln.split(",")[0] for ln in lines[1:]] == ["a", "b", "c"]
    assert lines[3].endswith(",1")
