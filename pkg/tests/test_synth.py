"""Synthetic plantation scenes: config validation, generator
self-consistency (image matches its own annotations), dataset splits."""

import dataclasses
import math

import numpy as np
import pytest

from plantmap import confmap
from plantmap.synth import (
    SceneConfig,
    citrus_like,
    corn_like,
    generate,
    load_scene_config,
    make_dataset,
    save_scene_config,
)


def _quiet(cfg, **kw):
    """Noise-free variant so geometry can be measured off the raster."""
    return dataclasses.replace(
        cfg, texture_amp=0.0, blur_sigma=0.0, noise_sigma=0.0, **kw
    )


def _min_polyline_dist(points, polylines):
    """Distance from each point to the nearest polyline vertex-to-vertex
    segment (vectorized over points)."""
    xs = np.array([p[0] for p in points])
    ys = np.array([p[1] for p in points])
    best = np.full(len(points), np.inf)
    for poly in polylines:
        for (x1, y1), (x2, y2) in zip(poly[:-1], poly[1:]):
            d2 = confmap._segment_dist2(xs, ys, x1, y1, x2, y2)
            best = np.minimum(best, np.sqrt(d2))
    return best


class TestSceneConfig:
    def test_presets_valid(self):
        for cfg in (corn_like(), citrus_like()):
            assert cfg.plant_spacing >= 2 * cfg.blob_radius
            assert 0 <= cfg.gap_prob <= 1

    def test_spacing_vs_blob_radius(self):
        with pytest.raises(ValueError, match="spacing"):
            dataclasses.replace(corn_like(), plant_spacing=6.0, blob_radius=4.0)

    def test_row_spacing_vs_blob_radius(self):
        with pytest.raises(ValueError, match="spacing"):
            dataclasses.replace(corn_like(), row_spacing=7.0)

    def test_probability_range(self):
        with pytest.raises(ValueError):
            dataclasses.replace(corn_like(), gap_prob=1.5)
        with pytest.raises(ValueError):
            dataclasses.replace(corn_like(), outlier_rate=-0.1)

    def test_positivity(self):
        with pytest.raises(ValueError):
            dataclasses.replace(corn_like(), blob_radius=0.0)
        with pytest.raises(ValueError):
            dataclasses.replace(corn_like(), blur_sigma=-1.0)

    def test_config_file_round_trip(self, tmp_path):
        cfg = dataclasses.replace(citrus_like(), seed=42, gap_prob=0.125)
        path = tmp_path / "scene.cfg"
        save_scene_config(cfg, path)
        assert load_scene_config(path) == cfg

    def test_partial_file_overrides_base(self, tmp_path):
        path = tmp_path / "scene.cfg"
        path.write_text("# comment\nseed=9\nblob_radius=5.0\n")
        cfg = load_scene_config(path, base=corn_like())
        assert cfg.seed == 9
        assert cfg.blob_radius == 5.0
        assert cfg.row_spacing == corn_like().row_spacing

    def test_unknown_key(self, tmp_path):
        path = tmp_path / "scene.cfg"
        path.write_text("seed=1\nbogus=3\n")
        with pytest.raises(ValueError, match="line 2"):
            load_scene_config(path)

    def test_bad_value(self, tmp_path):
        path = tmp_path / "scene.cfg"
        path.write_text("seed=banana\n")
        with pytest.raises(ValueError, match="line 1"):
            load_scene_config(path)


class TestGenerate:
    def test_deterministic(self):
        cfg = dataclasses.replace(corn_like(), width=320, height=320, seed=5)
        img1, ann1 = generate(cfg)
        img2, ann2 = generate(cfg)
        assert np.array_equal(img1, img2)
        assert ann1 == ann2

    def test_seed_changes_scene(self):
        cfg = dataclasses.replace(corn_like(), width=320, height=320, seed=5)
        img1, _ = generate(cfg)
        img2, _ = generate(dataclasses.replace(cfg, seed=6))
        assert not np.array_equal(img1, img2)

    def test_raster_shape_and_range(self):
        cfg = dataclasses.replace(corn_like(), width=320, height=288, seed=1)
        img, _ = generate(cfg)
        assert img.shape == (288, 320, 3)
        assert img.dtype == np.float32
        assert img.min() >= 0.0 and img.max() <= 1.0

    def test_all_gaps_leaves_rows(self):
        cfg = dataclasses.replace(corn_like(), width=320, height=320, gap_prob=1.0)
        _, ann = generate(cfg)
        assert ann.points == []
        assert len(ann.polylines) > 0

    def test_zero_curvature_rows_are_straight(self):
        cfg = dataclasses.replace(
            corn_like(), width=320, height=320, curve_amplitude=0.0
        )
        _, ann = generate(cfg)
        assert all(len(poly) == 2 for poly in ann.polylines)

    def test_plant_count_tracks_slot_budget(self):
        cfg = _quiet(
            corn_like(),
            width=512,
            height=512,
            row_angle_deg=0.0,
            curve_amplitude=0.0,
            gap_prob=0.1,
            outlier_rate=0.0,
            seed=11,
        )
        _, ann = generate(cfg)
        # count slots that can actually host a blob: blob centers must sit
        # at least one radius inside the mosaic (rows in this config are
        # horizontal, so usable length is the x-extent minus margins)
        margin = math.ceil(cfg.blob_radius) + 1
        slots = 0.0
        for poly in ann.polylines:
            y = poly[0][1]
            if margin <= y <= cfg.height - 1 - margin:
                usable = math.dist(poly[0], poly[-1]) - 2 * margin
                slots += usable / cfg.plant_spacing
        expected = slots * (1 - cfg.gap_prob)
        assert abs(len(ann.points) - expected) <= 0.10 * expected

    def test_annotations_inside_mosaic(self):
        cfg = dataclasses.replace(corn_like(), width=320, height=320, seed=3)
        _, ann = generate(cfg)
        for x, y in ann.points:
            assert 0 <= x < cfg.width and 0 <= y < cfg.height
        for poly in ann.polylines:
            for x, y in poly:
                assert -1e-9 <= x <= cfg.width - 1 and -1e-9 <= y <= cfg.height - 1

    def test_plants_separated(self):
        cfg = dataclasses.replace(corn_like(), width=512, height=512, seed=7)
        _, ann = generate(cfg)
        pts = np.array(ann.points)
        d2 = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1)
        d2[np.diag_indices(len(pts))] = np.inf
        assert d2.min() >= (2 * cfg.blob_radius - 1e-6) ** 2

    def test_blob_centroids_match_annotations(self):
        cfg = _quiet(corn_like(), width=320, height=320, seed=2, outlier_rate=0.0)
        img, ann = generate(cfg)
        # flat background in quiet mode: anything green above it is blob
        bg_green = np.median(img[:, :, 1])
        green_excess = np.clip(img[:, :, 1].astype(np.float64) - bg_green - 0.02, 0.0, None)
        r = int(math.ceil(cfg.blob_radius + cfg.radius_jitter))
        yy, xx = np.mgrid[-r : r + 1, -r : r + 1]
        for x, y in ann.points:
            wy, wx = int(round(y)), int(round(x))
            if not (r <= wx < cfg.width - r and r <= wy < cfg.height - r):
                continue
            patch = green_excess[wy - r : wy + r + 1, wx - r : wx + r + 1]
            w = patch**2
            cx = wx + (w * xx).sum() / w.sum()
            cy = wy + (w * yy).sum() / w.sum()
            assert math.dist((cx, cy), (x, y)) < 0.5

    def test_plants_near_their_rows(self):
        cfg = dataclasses.replace(
            corn_like(), width=512, height=512, seed=9, outlier_rate=0.0
        )
        _, ann = generate(cfg)
        dists = _min_polyline_dist(ann.points, ann.polylines)
        assert (dists <= cfg.blob_radius).mean() >= 0.90

    def test_outliers_off_row(self):
        base = _quiet(corn_like(), width=512, height=512, seed=13, gap_prob=0.0)
        _, without = generate(dataclasses.replace(base, outlier_rate=0.0))
        _, with_out = generate(dataclasses.replace(base, outlier_rate=0.05))
        extra = [p for p in with_out.points if p not in set(without.points)]
        assert len(extra) >= 1
        dists = _min_polyline_dist(extra, with_out.polylines)
        assert (dists > base.blob_radius).all()


class TestMakeDataset:
    def _ten_patch_config(self, seed=0):
        return dataclasses.replace(corn_like(), width=1280, height=512, seed=seed)

    def test_split_sizes(self):
        ds = make_dataset(self._ten_patch_config(), n_mosaics=1)
        sizes = {k: len(v) for k, v in ds.splits.items()}
        assert sizes == {"train": 6, "val": 2, "test": 2}

    def test_disjoint_and_complete(self):
        ds = make_dataset(self._ten_patch_config(), n_mosaics=2)
        ids = [[(r.mosaic, r.pid) for r in ds.splits[k]] for k in ("train", "val", "test")]
        flat = sum(ids, [])
        assert len(set(flat)) == len(flat) == 20

    def test_same_seed_same_partition(self):
        a = make_dataset(self._ten_patch_config(seed=4), n_mosaics=1)
        b = make_dataset(self._ten_patch_config(seed=4), n_mosaics=1)
        for k in ("train", "val", "test"):
            assert [(r.mosaic, r.pid) for r in a.splits[k]] == [
                (r.mosaic, r.pid) for r in b.splits[k]
            ]
        assert np.array_equal(a.mosaics[0][0], b.mosaics[0][0])

    def test_fractions_must_sum(self):
        with pytest.raises(ValueError):
            make_dataset(self._ten_patch_config(), n_mosaics=1, split=(0.5, 0.2, 0.2))

    def test_too_few_patches(self):
        cfg = dataclasses.replace(corn_like(), width=256, height=256)
        with pytest.raises(ValueError, match="patch"):
            make_dataset(cfg, n_mosaics=1)

    def test_patch_views_and_local_annotations(self):
        ds = make_dataset(self._ten_patch_config(), n_mosaics=1)
        mosaic_img, mosaic_ann = ds.mosaics[0]
        total_pts = 0
        for rec in ds.splits["train"] + ds.splits["val"] + ds.splits["test"]:
            xo, yo = rec.offset
            assert np.array_equal(rec.image, mosaic_img[yo : yo + 256, xo : xo + 256])
            for x, y in rec.ann.points:
                assert 0 <= x < 256 and 0 <= y < 256
            total_pts += len(rec.ann.points)
        assert total_pts <= len(mosaic_ann.points)
        assert total_pts >= 0.9 * len(mosaic_ann.points)
