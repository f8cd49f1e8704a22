"""Peak finding, thinning, and skeleton vectorization."""

import numpy as np
import pytest

import oracles
from plantmap import confmap, extract


def peaks_as_set(dets):
    return {(int(d.y), int(d.x)) for d in dets}


class TestFindPeaks:
    def test_all_zero_map_empty(self):
        assert extract.find_peaks(np.zeros((16, 16))) == []

    def test_single_bump_found_exactly(self):
        m = 0.9 * confmap.render_point_map([(10, 20)], 2.0, 32, 32)
        dets = extract.find_peaks(m, tau=0.35, min_dist=1)
        assert len(dets) == 1
        d = dets[0]
        assert (d.x, d.y) == (10, 20)
        np.testing.assert_allclose(d.score, 0.9)

    def test_boundary_peak_detected(self):
        m = np.zeros((8, 8))
        m[0, 0] = 0.8
        m[0, 1] = 0.3
        m[1, 0] = 0.3
        assert peaks_as_set(extract.find_peaks(m)) == {(0, 0)}

    def test_plateau_is_not_a_peak(self):
        m = np.zeros((8, 8))
        m[3, 3] = m[3, 4] = 0.9
        assert extract.find_peaks(m) == []

    def test_min_dist_suppression_keeps_higher(self):
        m = np.zeros((16, 16))
        m[5, 5] = 0.9
        m[5, 8] = 0.8
        kept = extract.find_peaks(m, tau=0.35, min_dist=5)
        assert peaks_as_set(kept) == {(5, 5)}
        both = extract.find_peaks(m, tau=0.35, min_dist=3)
        assert peaks_as_set(both) == {(5, 5), (5, 8)}

    def test_matches_bruteforce_oracle_on_random_maps(self):
        rng = np.random.default_rng(2)
        for trial in range(60):
            h, w = rng.integers(4, 33, size=2)
            if trial % 3 == 0:
                m = rng.uniform(0, 1, size=(h, w))
            elif trial % 3 == 1:
                m = np.round(rng.uniform(0, 1, size=(h, w)), 1)  # force plateaus
            else:
                pts = [(rng.uniform(0, w - 1), rng.uniform(0, h - 1)) for _ in range(4)]
                m = confmap.render_point_map(pts, 1.5, h, w)
            md = float(rng.choice([1.0, 2.0, 3.5]))
            got = peaks_as_set(extract.find_peaks(m, tau=0.35, min_dist=md))
            want = oracles.brute_force_peaks(m, 0.35, md)
            assert got == want, f"trial {trial}: {got ^ want}"

    def test_scores_carried(self):
        m = np.zeros((8, 8))
        m[2, 6] = 0.55
        (d,) = extract.find_peaks(m)
        assert d.score == 0.55

    @pytest.mark.parametrize("tau", [-0.1, 1.5])
    def test_bad_tau_rejected(self, tau):
        with pytest.raises(ValueError):
            extract.find_peaks(np.zeros((4, 4)), tau=tau)


class TestBinarize:
    def test_tau_one_all_false(self):
        m = np.ones((4, 4))
        assert not extract.binarize(m, 1.0).any()

    def test_tau_zero_on_positive_map_all_true(self):
        m = np.full((4, 4), 0.01)
        assert extract.binarize(m, 0.0).all()

    def test_band_width_matches_gaussian_inversion(self):
        # values > 0.35 within distance sigma*sqrt(2 ln(1/0.35)) ~ 1.449 of the line
        m = confmap.render_line_map([[(0, 8), (15, 8)]], 1.0, 16, 16)
        b = extract.binarize(m, 0.35)
        assert b[:, 5].sum() == 3  # rows 7, 8, 9


class TestSkeletonize:
    def test_empty_stays_empty(self):
        assert not extract.skeletonize(np.zeros((8, 8), dtype=bool)).any()

    def test_thin_line_is_fixed_point(self):
        m = np.zeros((8, 12), dtype=bool)
        m[4, 2:10] = True
        np.testing.assert_array_equal(extract.skeletonize(m), m)

    def test_thick_band_thins_without_breaking(self):
        m = np.zeros((32, 32), dtype=bool)
        for i in range(26):
            m[3 + i, i : i + 5] = True  # 5-px-wide diagonal band
        s = extract.skeletonize(m)
        assert s.any()
        assert (s & ~m).sum() == 0  # subset
        assert not oracles.has_2x2_block(s)
        assert oracles.flood_components(s) == oracles.flood_components(m) == 1

    def test_idempotent(self):
        rng = np.random.default_rng(3)
        m = np.zeros((24, 24), dtype=bool)
        for _ in range(4):
            cy, cx = rng.integers(4, 20, size=2)
            yy, xx = np.mgrid[0:24, 0:24]
            m |= (yy - cy) ** 2 + (xx - cx) ** 2 <= 9
        s1 = extract.skeletonize(m)
        s2 = extract.skeletonize(s1)
        np.testing.assert_array_equal(s1, s2)

    def test_solid_rectangle(self):
        m = np.zeros((20, 20), dtype=bool)
        m[4:16, 6:14] = True
        s = extract.skeletonize(m)
        assert s.any() and (s & ~m).sum() == 0
        assert not oracles.has_2x2_block(s)
        assert oracles.flood_components(s) == 1


class TestTracePolylines:
    def test_straight_row_two_vertices(self):
        m = np.zeros((8, 40), dtype=bool)
        m[3, 5:35] = True
        rows = extract.trace_polylines(m, epsilon=1.5, min_support=10)
        assert len(rows) == 1
        r = rows[0]
        assert len(r.polyline) == 2
        assert r.support == 30
        assert set(r.polyline) == {(5, 3), (34, 3)}

    def test_plus_sign_splits_at_junction(self):
        m = np.zeros((21, 21), dtype=bool)
        m[10, :] = True
        m[:, 10] = True
        rows = extract.trace_polylines(m, epsilon=1.5, min_support=5)
        assert len(rows) == 4
        for r in rows:
            assert (10, 10) in r.polyline  # all four meet at the junction

    def test_vertices_lie_on_skeleton(self):
        m = np.zeros((32, 64), dtype=bool)
        xs = np.arange(2, 62)
        ys = np.round(16 + 8 * np.sin(xs / 9.0)).astype(int)
        m[ys, xs] = True
        m = extract.skeletonize(m)  # normalize any double-diagonals
        for r in extract.trace_polylines(m, epsilon=1.5, min_support=10):
            for x, y in r.polyline:
                assert m[int(y), int(x)]

    def test_simplified_deviation_bounded(self):
        m = np.zeros((32, 64), dtype=bool)
        xs = np.arange(2, 62)
        ys = np.round(16 + 8 * np.sin(xs / 9.0)).astype(int)
        m[ys, xs] = True
        m = extract.skeletonize(m)
        rows = extract.trace_polylines(m, epsilon=1.5, min_support=10)
        assert rows
        pts = np.argwhere(m)
        for py, px in pts:
            d = min(
                oracles.dist_to_polyline_sampled((px, py), r.polyline, samples_per_px=20)
                for r in rows
                if len(r.polyline) >= 2
            )
            assert d <= 1.5 + 1e-6

    def test_min_support_filters_specks(self):
        m = np.zeros((16, 16), dtype=bool)
        m[2, 2:7] = True  # 5 px: below min_support 10
        m[10, 1:14] = True  # 13 px: kept
        rows = extract.trace_polylines(m, epsilon=1.5, min_support=10)
        assert len(rows) == 1
        assert rows[0].support == 13

    def test_closed_loop_traced(self):
        m = np.zeros((16, 16), dtype=bool)
        m[3, 3:12] = True
        m[11, 3:12] = True
        m[3:12, 3] = True
        m[3:12, 11] = True
        rows = extract.trace_polylines(m, epsilon=0.5, min_support=10)
        assert len(rows) == 1
        poly = rows[0].polyline
        assert poly[0] == poly[-1]  # closed
        assert rows[0].support >= 32

    def test_non_thin_input_rejected(self):
        m = np.zeros((8, 8), dtype=bool)
        m[2:4, 2:4] = True
        with pytest.raises(ValueError, match="thin"):
            extract.trace_polylines(m)
