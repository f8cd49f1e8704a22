"""End-to-end tests for the command-line pipeline: artifact layout,
manifest round-trips, exit codes, determinism, and the fused-vs-composed
evaluation identity."""

import argparse
import json

import numpy as np
import pytest

from plantmap import cli, geo, network, rasters, synth
from plantmap.annotations import AnnotationSet, save_annotations
from plantmap.cli import load_dataset, main

SCENE = "width=512\nheight=256\n"


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("ds")
    cfg = root / "small.cfg"
    cfg.write_text(SCENE)
    out = root / "data"
    code = run("synth", "--out", out, "--mosaics", 3, "--scene-config", cfg, "--seed", 5)
    assert code == 0
    return out


@pytest.fixture(scope="module")
def model_dir(dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("run") / "model"
    code = run(
        "train", "--dataset", dataset, "--out", out,
        "--width", "tiny", "--stages", 2, "--epochs", 1, "--seed", 3,
    )
    assert code == 0
    return out


@pytest.fixture(scope="module")
def maps_dir(dataset, model_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("pred") / "maps"
    code = run(
        "predict", "--dataset", dataset, "--weights", model_dir / "model.pmw",
        "--split", "test", "--out", out,
    )
    assert code == 0
    return out


@pytest.fixture(scope="module")
def det_dir(dataset, maps_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("ext") / "det"
    code = run("extract", "--maps", maps_dir, "--dataset", dataset, "--out", out)
    assert code == 0
    return out


class TestParsing:
    def test_help_exits_zero(self):
        assert run("--help") == 0

    def test_missing_required_flags_is_usage_error(self):
        assert run("train") == 1

    def test_unknown_command_is_usage_error(self):
        assert run("frobnicate") == 1

    def test_bad_sigma_pair_is_usage_error(self, tmp_path):
        assert run("train", "--dataset", tmp_path, "--out", tmp_path, "--sigma-plant", "3") == 1

    def test_eval_weights_and_detections_conflict(self, tmp_path):
        code = run(
            "eval", "--dataset", tmp_path, "--out", tmp_path,
            "--weights", "w", "--detections", "d",
        )
        assert code == 1

    def test_missing_dataset_is_validation_error(self, tmp_path):
        assert run("train", "--dataset", tmp_path / "nope", "--out", tmp_path / "o") == 2


class TestManifest:
    def test_round_trip(self, tmp_path):
        ns = argparse.Namespace(alpha=1.5, name="x", flag=True, none=None)
        cli._write_manifest(
            tmp_path, "synth", ns,
            records=["patch=a mosaic=0", "patch=b mosaic=1"],
            extra=[("mosaic.count", 2)],
        )
        meta, records = cli._read_manifest(tmp_path / "manifest.txt")
        assert meta["command"] == "synth"
        assert meta["arg.alpha"] == "1.5"
        assert meta["arg.flag"] == "1"
        assert meta["arg.none"] == "-"
        assert meta["mosaic.count"] == "2"
        assert records["patch"] == ["a mosaic=0", "b mosaic=1"]
        assert cli._parse_record(records["patch"][0]) == {"": "a", "mosaic": "0"}

    def test_versions_present(self, tmp_path):
        cli._write_manifest(tmp_path, "x", argparse.Namespace())
        meta, _ = cli._read_manifest(tmp_path / "manifest.txt")
        for key in ("backend", "numpy", "plantmap", "python"):
            assert meta[key]

    def test_malformed_line_rejected(self, tmp_path):
        (tmp_path / "manifest.txt").write_text("command=synth\nnot a pair\n")
        with pytest.raises(ValueError, match="key=value"):
            cli._read_manifest(tmp_path / "manifest.txt")


class TestSynth:
    def test_layout_and_counts(self, dataset):
        meta, records = cli._read_manifest(dataset / "manifest.txt")
        assert meta["command"] == "synth"
        assert meta["arg.seed"] == "5"  # effective seed, not the None default
        assert meta["patch.count"] == "6"
        assert len(records["patch"]) == 6
        for m in range(3):
            for ext in (".ppm", ".txt", ".wld"):
                assert (dataset / "mosaics" / f"m{m:03d}{ext}").is_file()
        splits = [cli._parse_record(r)["split"] for r in records["patch"]]
        assert sorted(splits).count("train") == 3
        assert sorted(splits).count("val") == 1
        assert sorted(splits).count("test") == 2

    def test_load_dataset(self, dataset):
        ds = load_dataset(dataset)
        assert ds.patch == 256
        assert len(ds.patches) == 6
        assert {len(v) for v in ds.splits.values()} == {3, 1, 2}
        p = ds.patches[0]
        assert p.image.shape == (256, 256, 3)
        assert p.image.dtype == np.float32
        np.testing.assert_array_equal(
            p.image, ds.mosaics[p.mosaic][p.offset[1] : p.offset[1] + 256,
                                          p.offset[0] : p.offset[0] + 256]
        )
        for x, y in p.ann.points:
            assert 0 <= x < 256 and 0 <= y < 256
        t = ds.transforms[1]
        assert t.a == pytest.approx(0.0155)
        assert t.e == pytest.approx(-0.0155)
        assert ds.transforms[0].c != t.c  # mosaics occupy distinct world extents

    def test_scene_config_round_trip(self, dataset):
        cfg = synth.load_scene_config(dataset / "scene.cfg")
        assert (cfg.width, cfg.height) == (512, 256)
        assert cfg.seed == 5

    def test_deterministic(self, tmp_path):
        cfg = tmp_path / "s.cfg"
        cfg.write_text(SCENE)
        for out in ("a", "b"):
            assert run("synth", "--out", tmp_path / out, "--mosaics", 3,
                       "--scene-config", cfg, "--seed", 9) == 0
        for rel in ("mosaics/m001.ppm", "mosaics/m001.txt", "patches/m000_p001.txt"):
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()
        manifests = [
            [ln for ln in (tmp_path / d / "manifest.txt").read_text().splitlines()
             if not ln.startswith("arg.out=")]
            for d in ("a", "b")
        ]
        assert manifests[0] == manifests[1]  # only the output path differs

    def test_bad_split_fractions(self, tmp_path):
        code = run("synth", "--out", tmp_path / "x", "--mosaics", 1, "--split", "0.5:0.2:0.2")
        assert code == 2


class TestTrain:
    def test_artifacts(self, model_dir):
        assert (model_dir / "model.pmw").is_file()
        log = (model_dir / "train_log.txt").read_text()
        assert log.startswith("epoch=1 train_loss=")
        assert "val_loss=" in log
        meta, _ = cli._read_manifest(model_dir / "manifest.txt")
        assert meta["command"] == "train"
        assert meta["arg.width"] == "tiny"

    def test_weights_load_with_config(self, model_dir):
        model = network.load_weights(model_dir / "model.pmw")
        assert model.config.width == "tiny"
        assert model.config.stages == 2
        assert model.config.input_size == (256, 256)

    def test_deterministic(self, dataset, tmp_path):
        for out in ("a", "b"):
            assert run("train", "--dataset", dataset, "--out", tmp_path / out,
                       "--width", "tiny", "--stages", 2, "--epochs", 1, "--seed", 3) == 0
        for rel in ("model.pmw", "train_log.txt"):
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()

    def test_row_branch_ablation(self, dataset, tmp_path):
        out = tmp_path / "abl"
        assert run("train", "--dataset", dataset, "--out", out, "--width", "tiny",
                   "--stages", 2, "--epochs", 1, "--no-row-branch") == 0
        model = network.load_weights(out / "model.pmw")
        assert model.config.row_branch_enabled is False


class TestPredict:
    def test_maps_written(self, dataset, maps_dir):
        meta, records = cli._read_manifest(maps_dir / "manifest.txt")
        assert meta["command"] == "predict"
        assert meta["rows"] == "1"
        ds = load_dataset(dataset)
        assert len(records["map"]) == len(ds.splits["test"])
        for rec in records["map"]:
            f = cli._parse_record(rec)
            assert (maps_dir / f["plant"]).is_file()
            assert (maps_dir / f["row"]).is_file()

    def test_pgm_round_trips_quantized_maps(self, dataset, model_dir, maps_dir):
        ds = load_dataset(dataset)
        model = network.load_weights(model_dir / "model.pmw")
        p = ds.splits["test"][0]
        pmap, _ = network.predict(model, p.image)
        stored = rasters.read_pgm(maps_dir / "maps" / f"{p.name}_plant.pgm")
        np.testing.assert_array_equal(stored, rasters.quantize16(pmap))

    def test_patch_size_mismatch(self, dataset, model_dir, tmp_path):
        small = tmp_path / "small"
        cfgf = tmp_path / "c.cfg"
        cfgf.write_text("width=320\nheight=320\nplant_spacing=20.0\n")
        assert run("synth", "--out", small, "--mosaics", 3, "--scene-config", cfgf,
                   "--patch", 64) == 0
        code = run("predict", "--dataset", small, "--weights", model_dir / "model.pmw",
                   "--out", tmp_path / "o")
        assert code == 2


class TestExtract:
    def test_detections_written(self, det_dir):
        meta, records = cli._read_manifest(det_dir / "manifest.txt")
        assert meta["command"] == "extract"
        for rec in records["det"]:
            f = cli._parse_record(rec)
            assert (det_dir / f["file"]).is_file()

    def test_stitched_world_output(self, dataset, det_dir):
        meta, records = cli._read_manifest(det_dir / "manifest.txt")
        assert records["stitched"]
        ds = load_dataset(dataset)
        from plantmap.annotations import load_annotations

        total_pts = 0
        stitched_pts = 0
        for rec in records["det"]:
            f = cli._parse_record(rec)
            total_pts += len(load_annotations(det_dir / f["file"]).points)
        for rec in records["stitched"]:
            f = cli._parse_record(rec)
            ann = load_annotations(det_dir / f["file"])
            stitched_pts += len(ann.points)
            if ann.points:
                assert ann.world_points is not None
                t = ds.transforms[int(f[""].lstrip("m"))]
                x, y = ann.points[0]
                wx, wy = ann.world_points[0]
                assert wx == pytest.approx(t.a * x + t.b * y + t.c)
                assert wy == pytest.approx(t.d * x + t.e * y + t.f)
        assert stitched_pts == total_pts

    def test_requires_predict_directory(self, dataset, tmp_path):
        assert run("extract", "--maps", dataset, "--out", tmp_path / "x") == 2


def _gt_detection_dir(ds, root, split):
    """Fake extract output whose detections are the ground truth itself,
    converted to map coordinates."""
    (root / "detections").mkdir(parents=True)
    records = []
    for p in ds.splits[split]:
        ann = AnnotationSet(
            points=[(x / 2.0, y / 2.0) for x, y in p.ann.points],
            polylines=[[(x / 2.0, y / 2.0) for x, y in poly] for poly in p.ann.polylines],
        )
        save_annotations(root / "detections" / f"{p.name}.txt", ann)
        records.append(f"det={p.name} file=detections/{p.name}.txt")
    cli._write_manifest(root, "extract", argparse.Namespace(), records, [("rows", 1)])
    return root


class TestEval:
    def test_fused_equals_composed(self, dataset, model_dir, det_dir, tmp_path):
        fused, composed = tmp_path / "f", tmp_path / "c"
        assert run("eval", "--dataset", dataset, "--split", "test",
                   "--weights", model_dir / "model.pmw", "--out", fused) == 0
        assert run("eval", "--dataset", dataset, "--split", "test",
                   "--detections", det_dir, "--out", composed) == 0
        assert (fused / "report.json").read_bytes() == (composed / "report.json").read_bytes()
        assert (fused / "report.txt").read_bytes() == (composed / "report.txt").read_bytes()

    def test_ground_truth_detections_score_perfect(self, dataset, tmp_path):
        ds = load_dataset(dataset)
        det = _gt_detection_dir(ds, tmp_path / "gtdet", "test")
        out = tmp_path / "ev"
        assert run("eval", "--dataset", dataset, "--split", "test",
                   "--detections", det, "--out", out) == 0
        report = json.loads((out / "report.json").read_text())
        assert report["plant"]["f_measure"] == 1.0
        assert report["plant"]["mae"] == 0.0
        assert report["row"]["f_measure"] == 1.0

    def test_report_files_and_flags(self, dataset, model_dir, tmp_path):
        out = tmp_path / "ev"
        assert run("eval", "--dataset", dataset, "--split", "test",
                   "--weights", model_dir / "model.pmw", "--out", out) == 0
        text = (out / "report.txt").read_text()
        assert text.startswith("patches=")
        report = json.loads((out / "report.json").read_text())
        assert {"plant", "row", "per_patch"} <= set(report)
        meta, _ = cli._read_manifest(out / "manifest.txt")
        assert meta["arg.radius"] == "8.0"

    def test_missing_detection_patch_fails(self, dataset, det_dir, tmp_path):
        code = run("eval", "--dataset", dataset, "--split", "all",
                   "--detections", det_dir, "--out", tmp_path / "x")
        assert code == 2


class TestSweepSettings:
    def test_grid_definitions(self):
        args = argparse.Namespace(stages=6)
        names, settings = cli._sweep_settings("stages", args)
        assert names == ("T",)
        assert [v[0] for v, _ in settings] == [2, 4, 6, 8]
        assert all(kw["sigma_plant"] == (1.0, 3.0) for _, kw in settings)
        assert all(kw["sigma_row"] == (1.0, 3.0) for _, kw in settings)

        names, settings = cli._sweep_settings("sigma-max", args)
        assert [v[0] for v, _ in settings] == [2.0, 3.0, 4.0]
        assert all(kw["stages"] == 6 for _, kw in settings)
        assert settings[0][1]["sigma_plant"] == (1.0, 2.0)

        names, settings = cli._sweep_settings("sigma-min", args)
        assert [v[0] for v, _ in settings] == [0.5, 1.0, 1.5, 2.0]
        assert settings[-1][1]["sigma_row"] == (2.0, 3.0)

        names, settings = cli._sweep_settings("sigma-row", args)
        assert names == ("sigma_min_row", "sigma_max_row")
        assert [v for v, _ in settings] == [(1.0, 3.0), (0.5, 3.0), (0.5, 2.0)]
        assert all(kw["sigma_plant"] == (1.0, 3.0) for _, kw in settings)

    def test_unknown_grid(self):
        with pytest.raises(ValueError, match="grid"):
            cli._sweep_settings("widths", argparse.Namespace(stages=6))


class TestSweep:
    def test_sigma_row_grid(self, dataset, tmp_path):
        out = tmp_path / "sw"
        assert run("sweep", "--dataset", dataset, "--grid", "sigma-row", "--width", "tiny",
                   "--stages", 2, "--epochs", 1, "--seed", 3, "--out", out) == 0
        table = (out / "table_sigma-row.txt").read_text()
        lines = table.strip().splitlines()
        assert lines[0].startswith("# sigma-row grid")
        assert "plant" in lines[1] and "row" in lines[1]
        header = lines[2].split()
        assert header[:2] == ["sigma_min_row", "sigma_max_row"]
        assert header[2:] == ["MAE", "MRE", "MSE", "PR", "RE", "FM", "PR", "RE", "FM"]
        assert len(lines) == 6  # comment + group + header + 3 settings
        meta, records = cli._read_manifest(out / "manifest.txt")
        assert len(records["run"]) == 3
        assert records["table"] == ["sigma-row file=table_sigma-row.txt"]
        for rec in records["run"]:
            f = cli._parse_record(rec)
            assert (out / f["dir"] / "model.pmw").is_file()
            assert (out / f["dir"] / "report.json").is_file()
            assert (out / f["dir"] / "train_log.txt").is_file()


class TestGradcheck:
    def test_passes_and_writes_report(self, tmp_path):
        out = tmp_path / "gc"
        assert run("gradcheck", "--out", out) == 0
        lines = (out / "gradcheck.txt").read_text().strip().splitlines()
        assert len(lines) == 10
        assert all(line.endswith("PASS") for line in lines)
        names = [line.split(" ")[0] for line in lines]
        assert "conv2d" in names and "network_end_to_end" in names


class TestRender:
    def test_ground_truth_mode(self, dataset, tmp_path):
        out = tmp_path / "rn"
        assert run("render", "--dataset", dataset, "--split", "test", "--limit", 1,
                   "--out", out) == 0
        _, records = cli._read_manifest(out / "manifest.txt")
        assert len(records["render"]) == 1
        name = cli._parse_record(records["render"][0])[""]
        image = rasters.read_ppm(out / "render" / f"{name}_image.ppm")
        overlay = rasters.read_ppm(out / "render" / f"{name}_overlay.ppm")
        assert image.shape == overlay.shape == (256, 256, 3)
        assert (image != overlay).any()  # detections were painted
        gt_map = rasters.read_pgm(out / "render" / f"{name}_gt_plant.pgm")
        assert gt_map.shape == (128, 128)
        assert gt_map.max() > 0.9  # some annotation lands near a map pixel

    def test_prediction_mode(self, dataset, model_dir, tmp_path):
        out = tmp_path / "rn"
        assert run("render", "--dataset", dataset, "--weights", model_dir / "model.pmw",
                   "--patch", "m000_p000", "--out", out) == 0
        for suffix in ("image.ppm", "overlay.ppm", "gt_plant.pgm", "gt_row.pgm",
                       "pred_plant.pgm", "pred_row.pgm"):
            assert (out / "render" / f"m000_p000_{suffix}").is_file()

    def test_unknown_patch_name(self, dataset, tmp_path):
        assert run("render", "--dataset", dataset, "--patch", "m9_p9",
                   "--out", tmp_path / "x") == 2
