"""Command-line pipeline driver.

Subcommands cover the whole workflow: `synth` writes a synthetic mosaic
dataset to disk, `train` fits a model on it, `predict` emits per-patch
confidence maps as 16-bit PGMs, `extract` turns maps into detection
text files, `eval` scores detections against ground truth (either fused
from weights or composed from an extract directory), `sweep` runs the
stage/sigma experiment grids and formats one table per grid, `gradcheck`
runs the finite-difference suites, and `render` writes maps and overlay
rasters for visual inspection.

Every command writes its artifacts under --out and drops a manifest.txt
beside them recording the command, library versions, and every flag
value (seeds included), so a run is reproducible from its manifest
alone.  Manifests contain no timestamps: re-running a command with the
same inputs yields byte-identical manifests, logs, and reports.

Exit codes: 0 success, 1 usage error, 2 validation failure (bad values,
missing or malformed inputs), 3 runtime error.
"""

import argparse
import dataclasses
import json
import platform
import re
import sys
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

import plantmap
from plantmap import evaluate as evalmod
from plantmap import confmap, extract, geo, kernels, network, rasters, synth
from plantmap.annotations import AnnotationSet, load_annotations, save_annotations

# manifest lines under these keys repeat and carry structured records;
# everything else is a scalar key=value
_RECORD_KEYS = frozenset(["patch", "map", "det", "stitched", "run", "table", "render"])

_PATCH_NAME = re.compile(r"^m(\d+)_p(\d+)$")


# ---------------------------------------------------------------- flags


def _sigma_pair(text):
    parts = text.split(":")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected MIN:MAX, got {text!r}")
    try:
        return (float(parts[0]), float(parts[1]))
    except ValueError:
        raise argparse.ArgumentTypeError(f"non-numeric sigma in {text!r}") from None


def _fractions(text):
    parts = text.split(":")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected TRAIN:VAL:TEST, got {text!r}")
    try:
        return tuple(float(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"non-numeric fraction in {text!r}") from None


def _fmt_flag(value):
    if value is None:
        return "-"
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (tuple, list)):
        return ":".join(_fmt_flag(v) for v in value)
    return str(value)


# ------------------------------------------------------------ manifests


def _versions():
    return {
        "backend": kernels.BACKEND,
        "numpy": np.__version__,
        "plantmap": plantmap.__version__,
        "python": platform.python_version(),
    }


def _write_manifest(out_dir, command, args, records=(), extra=()):
    """manifest.txt next to the outputs: command, versions, every flag,
    then any structured record lines. Deliberately timestamp-free."""
    skip = {"func", "command"}
    lines = [f"command={command}", "format=1"]
    lines += [f"{k}={v}" for k, v in sorted(_versions().items())]
    lines += [f"arg.{k}={_fmt_flag(v)}" for k, v in sorted(vars(args).items()) if k not in skip]
    lines += [f"{k}={v}" for k, v in extra]
    lines += list(records)
    path = Path(out_dir) / "manifest.txt"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def _read_manifest(path):
    path = Path(path)
    if not path.is_file():
        raise ValueError(f"no manifest at {path}")
    meta, records = {}, defaultdict(list)
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValueError(f"{path}: line {lineno}: expected key=value")
            if key in _RECORD_KEYS:
                records[key].append(value)
            else:
                meta.setdefault(key, value)
    return meta, records


def _parse_record(value):
    """`name k1=v1 k2=v2 ...` -> dict with the bare name under ''."""
    tokens = value.split(" ")
    fields = {"": tokens[0]}
    for tok in tokens[1:]:
        k, sep, v = tok.partition("=")
        if not sep:
            raise ValueError(f"malformed manifest record field {tok!r}")
        fields[k] = v
    return fields


def _require_command(meta, want, where):
    if meta.get("command") != want:
        raise ValueError(
            f"{where} is not a {want} output directory "
            f"(manifest says command={meta.get('command')!r})"
        )


# ------------------------------------------------- dataset on-disk form


@dataclass
class LoadedPatch:
    name: str
    mosaic: int
    pid: int
    offset: tuple
    split: str
    image: np.ndarray  # float32 (patch, patch, 3), view into the mosaic
    ann: AnnotationSet  # patch-local pixel frame


@dataclass
class LoadedDataset:
    root: Path
    patch: int
    mosaics: list  # float32 (H, W, 3) per mosaic
    annotations: list  # mosaic-frame AnnotationSet per mosaic
    transforms: list  # GeoTransform per mosaic
    grid: geo.PatchGrid
    patches: list  # [LoadedPatch]
    splits: dict  # split name -> [LoadedPatch]


def load_dataset(root):
    root = Path(root)
    meta, records = _read_manifest(root / "manifest.txt")
    _require_command(meta, "synth", root)
    patch = int(meta["arg.patch"])
    n_mosaics = int(meta["mosaic.count"])
    mosaics, anns, transforms = [], [], []
    for m in range(n_mosaics):
        stem = root / "mosaics" / f"m{m:03d}"
        mosaics.append(rasters.read_ppm(stem.with_suffix(".ppm")))
        anns.append(load_annotations(stem.with_suffix(".txt")))
        transforms.append(geo.read_world_file(stem.with_suffix(".wld")))
    if not mosaics:
        raise ValueError(f"{root}: dataset has no mosaics")
    h, w = mosaics[0].shape[:2]
    grid = geo.patch_grid(w, h, patch)
    patches = []
    splits = {"train": [], "val": [], "test": []}
    for rec in records.get("patch", []):
        f = _parse_record(rec)
        name = f[""]
        m, pid = int(f["mosaic"]), int(f["pid"])
        xo, yo = int(f["xo"]), int(f["yo"])
        image = mosaics[m][yo : yo + patch, xo : xo + patch]
        ann = load_annotations(root / "patches" / f"{name}.txt")
        lp = LoadedPatch(name, m, pid, (xo, yo), f["split"], image, ann)
        patches.append(lp)
        splits.setdefault(f["split"], []).append(lp)
    if not patches:
        raise ValueError(f"{root}: dataset manifest lists no patches")
    return LoadedDataset(root, patch, mosaics, anns, transforms, grid, patches, splits)


def _select_split(ds, name):
    if name == "all":
        return list(ds.patches)
    items = ds.splits.get(name, [])
    if not items:
        raise ValueError(f"split {name!r} is empty")
    return items


def _patch_key(name):
    m = _PATCH_NAME.match(name)
    if m is None:
        raise ValueError(f"patch name {name!r} does not look like m###_p###")
    return int(m.group(1)), int(m.group(2))


# --------------------------------------------------------------- synth


def cmd_synth(args):
    base = {"corn-like": synth.corn_like, "citrus-like": synth.citrus_like}[args.preset]()
    cfg = synth.load_scene_config(args.scene_config, base=base) if args.scene_config else base
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    args.seed = cfg.seed  # effective seed goes into the manifest
    ds = synth.make_dataset(cfg, args.mosaics, split=args.split, patch=args.patch)

    out = Path(args.out)
    (out / "mosaics").mkdir(parents=True, exist_ok=True)
    (out / "patches").mkdir(exist_ok=True)
    synth.save_scene_config(cfg, out / "scene.cfg")
    for m, (img, ann) in enumerate(ds.mosaics):
        stem = out / "mosaics" / f"m{m:03d}"
        rasters.write_ppm(stem.with_suffix(".ppm"), img)
        save_annotations(stem.with_suffix(".txt"), ann)
        # mosaics sit side by side in a shared world frame, north-up
        origin_x = 1000.0 + m * (cfg.width * args.gsd + 5.0)
        t = geo.GeoTransform(a=args.gsd, b=0.0, c=origin_x, d=0.0, e=-args.gsd, f=100.0)
        geo.write_world_file(t, stem.with_suffix(".wld"))

    split_of = {p.name: s for s, plist in ds.splits.items() for p in plist}
    records = []
    for p in sorted((p for plist in ds.splits.values() for p in plist), key=lambda p: p.name):
        save_annotations(out / "patches" / f"{p.name}.txt", p.ann)
        records.append(
            f"patch={p.name} mosaic={p.mosaic} pid={p.pid} "
            f"xo={p.offset[0]} yo={p.offset[1]} split={split_of[p.name]}"
        )
    extra = [("mosaic.count", len(ds.mosaics)), ("patch.count", len(records))]
    extra += [(f"scene.{f.name}", _fmt_flag(getattr(cfg, f.name))) for f in dataclasses.fields(cfg)]
    _write_manifest(out, "synth", args, records, extra)
    counts = {s: len(ds.splits[s]) for s in ("train", "val", "test")}
    print(
        f"dataset: {len(ds.mosaics)} mosaics, {len(records)} patches "
        f"(train/val/test = {counts['train']}/{counts['val']}/{counts['test']}) -> {out}"
    )


# --------------------------------------------------------------- train


def _network_config(args, patch):
    return network.NetworkConfig(
        stages=args.stages,
        sigma_plant=args.sigma_plant,
        sigma_row=args.sigma_row,
        row_branch_enabled=not args.no_row_branch,
        input_size=(patch, patch),
        width=args.width,
        learning_rate=args.lr,
        momentum=args.momentum,
        epochs=args.epochs,
        seed=args.seed,
    )


def _progress(entry):
    line = f"epoch {entry['epoch']}: train_loss={entry['train_loss']:.6f}"
    if entry["val_loss"] is not None:
        line += f" val_loss={entry['val_loss']:.6f}"
    print(line, flush=True)


def _fit(cfg, ds, quiet=False):
    model = network.build(cfg)
    train_items = [(p.image, p.ann) for p in _select_split(ds, "train")]
    val_items = [(p.image, p.ann) for p in ds.splits.get("val", [])] or None
    log = network.train(model, train_items, val_items, progress=None if quiet else _progress)
    return model, log


def cmd_train(args):
    ds = load_dataset(args.dataset)
    cfg = _network_config(args, ds.patch)
    model, log = _fit(cfg, ds)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    network.save_weights(model, out / "model.pmw")
    (out / "train_log.txt").write_text(log.to_text(), encoding="utf-8")
    _write_manifest(out, "train", args)
    print(f"trained {cfg.width} width, {cfg.stages} stages, {len(log.entries)} epochs -> {out}")


# ------------------------------------------------------------- predict


def _load_model(path):
    path = Path(path)
    if not path.is_file():
        raise ValueError(f"no weight file at {path}")
    return network.load_weights(path)


def cmd_predict(args):
    ds = load_dataset(args.dataset)
    model = _load_model(args.weights)
    if model.config.input_size != (ds.patch, ds.patch):
        raise ValueError(
            f"model expects {model.config.input_size} patches, dataset has {ds.patch}x{ds.patch}"
        )
    items = _select_split(ds, args.split)
    out = Path(args.out)
    (out / "maps").mkdir(parents=True, exist_ok=True)
    records = []
    for p in items:
        pmap, rmap = network.predict(model, p.image)
        rasters.write_pgm16(out / "maps" / f"{p.name}_plant.pgm", pmap)
        rec = f"map={p.name} plant=maps/{p.name}_plant.pgm"
        if rmap is not None:
            rasters.write_pgm16(out / "maps" / f"{p.name}_row.pgm", rmap)
            rec += f" row=maps/{p.name}_row.pgm"
        records.append(rec)
    extra = [("rows", 1 if model.config.row_branch_enabled else 0)]
    _write_manifest(out, "predict", args, records, extra)
    print(f"wrote confidence maps for {len(items)} patches -> {out / 'maps'}")


# ------------------------------------------------------------- extract


def _extract_detections(pmap, rmap, args):
    peaks = extract.find_peaks(pmap, tau=args.tau, min_dist=args.min_dist)
    ann = AnnotationSet(
        points=[(d.x, d.y) for d in peaks], scores=[d.score for d in peaks] or None
    )
    if rmap is not None:
        skel = extract.skeletonize(extract.binarize(rmap, args.tau))
        rows = extract.trace_polylines(skel, epsilon=args.epsilon, min_support=args.min_support)
        ann.polylines = [list(r.polyline) for r in rows]
    return ann


def cmd_extract(args):
    maps_root = Path(args.maps)
    meta, records = _read_manifest(maps_root / "manifest.txt")
    _require_command(meta, "predict", maps_root)
    rows_enabled = meta.get("rows") == "1"
    out = Path(args.out)
    (out / "detections").mkdir(parents=True, exist_ok=True)
    out_records = []
    per_patch = []
    for rec in records.get("map", []):
        f = _parse_record(rec)
        name = f[""]
        pmap = rasters.read_pgm(maps_root / f["plant"])
        rmap = rasters.read_pgm(maps_root / f["row"]) if "row" in f else None
        ann = _extract_detections(pmap, rmap, args)
        save_annotations(out / "detections" / f"{name}.txt", ann)
        out_records.append(f"det={name} file=detections/{name}.txt")
        per_patch.append((name, ann))

    if args.dataset:
        ds = load_dataset(args.dataset)
        by_mosaic = defaultdict(dict)
        for name, ann in per_patch:
            m, pid = _patch_key(name)
            by_mosaic[m][pid] = ann
        (out / "stitched").mkdir(exist_ok=True)
        for m in sorted(by_mosaic):
            merged = geo.stitch(by_mosaic[m], ds.grid, transform=ds.transforms[m])
            save_annotations(out / "stitched" / f"m{m:03d}.txt", merged)
            out_records.append(f"stitched=m{m:03d} file=stitched/m{m:03d}.txt")

    extra = [("rows", 1 if rows_enabled else 0)]
    _write_manifest(out, "extract", args, out_records, extra)
    print(f"extracted detections for {len(per_patch)} patches -> {out / 'detections'}")


# ---------------------------------------------------------------- eval


def _fused_predictions(model, items, args):
    pred = {}
    for p in items:
        pmap, rmap = network.predict(model, p.image)
        # snap to the 16-bit grid so fused and predict->extract->eval paths
        # see bitwise-identical maps
        pmap = rasters.quantize16(pmap)
        rmap = rasters.quantize16(rmap) if rmap is not None else None
        pred[p.name] = _extract_detections(pmap, rmap, args)
    return pred


def cmd_eval(args):
    ds = load_dataset(args.dataset)
    items = _select_split(ds, args.split)
    gt = {p.name: p.ann for p in items}
    if args.weights:
        model = _load_model(args.weights)
        rows_enabled = model.config.row_branch_enabled
        pred = _fused_predictions(model, items, args)
    else:
        det_root = Path(args.detections)
        meta, records = _read_manifest(det_root / "manifest.txt")
        _require_command(meta, "extract", det_root)
        rows_enabled = meta.get("rows") == "1"
        pred = {}
        for rec in records.get("det", []):
            f = _parse_record(rec)
            if f[""] in gt:
                pred[f[""]] = load_annotations(det_root / f["file"])
    report = evalmod.evaluate(
        pred,
        gt,
        radius=args.radius,
        rho=args.rho,
        map_shape=(ds.patch // 2, ds.patch // 2),
        rows=rows_enabled,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    text = report.to_text()
    (out / "report.txt").write_text(text, encoding="utf-8")
    (out / "report.json").write_text(
        json.dumps(report.to_json_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    _write_manifest(out, "eval", args)
    print(text, end="")


# --------------------------------------------------------------- sweep


def _sweep_settings(grid, args):
    """(setting column names, [(setting values, config overrides)]).
    Stage count for the sigma grids comes from --stages."""
    t = args.stages
    if grid == "stages":
        return ("T",), [
            ((T,), dict(stages=T, sigma_plant=(1.0, 3.0), sigma_row=(1.0, 3.0)))
            for T in (2, 4, 6, 8)
        ]
    if grid == "sigma-max":
        return ("sigma_max",), [
            ((s,), dict(stages=t, sigma_plant=(1.0, s), sigma_row=(1.0, s))) for s in (2.0, 3.0, 4.0)
        ]
    if grid == "sigma-min":
        return ("sigma_min",), [
            ((s,), dict(stages=t, sigma_plant=(s, 3.0), sigma_row=(s, 3.0)))
            for s in (0.5, 1.0, 1.5, 2.0)
        ]
    if grid == "sigma-row":
        return ("sigma_min_row", "sigma_max_row"), [
            ((a, b), dict(stages=t, sigma_plant=(1.0, 3.0), sigma_row=(a, b)))
            for a, b in ((1.0, 3.0), (0.5, 3.0), (0.5, 2.0))
        ]
    raise ValueError(f"unknown sweep grid {grid!r}")


def _num(v):
    return f"{v:g}"


def _format_table(grid, setting_names, rows):
    """Plain-text analogue of the experiment tables: setting columns,
    six plant metrics, three row metrics."""
    plant_cols = ["MAE", "MRE", "MSE", "PR", "RE", "FM"]
    row_cols = ["PR", "RE", "FM"]
    head = [*setting_names, *plant_cols, *row_cols]
    body = []
    for values, report in rows:
        p, r = report.plant, report.row
        body.append(
            [
                *[_num(v) for v in values],
                f"{p['mae']:.3f}",
                f"{p['mre']:.4f}",
                f"{p['mse']:.3f}",
                f"{p['precision']:.3f}",
                f"{p['recall']:.3f}",
                f"{p['f_measure']:.3f}",
                f"{r['precision']:.3f}",
                f"{r['recall']:.3f}",
                f"{r['f_measure']:.3f}",
            ]
        )
    widths = [max(len(head[i]), *(len(b[i]) for b in body)) + 2 for i in range(len(head))]
    n_set = len(setting_names)
    group = "".join(
        [
            " " * sum(widths[:n_set]),
            "plant".ljust(sum(widths[n_set : n_set + 6])),
            "row".ljust(sum(widths[n_set + 6 :])),
        ]
    )
    lines = [f"# {grid} grid, validation split", group.rstrip()]
    for cells in ([*head], *body):
        lines.append("".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip())
    return "\n".join(lines) + "\n"


def _slug(values):
    return "_".join(_num(v) for v in values)


def cmd_sweep(args):
    ds = load_dataset(args.dataset)
    grids = ("stages", "sigma-max", "sigma-min", "sigma-row") if args.grid == "all" else (args.grid,)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    val = _select_split(ds, "val")
    gt = {p.name: p.ann for p in val}
    records = []
    for grid in grids:
        setting_names, settings = _sweep_settings(grid, args)
        rows = []
        for values, overrides in settings:
            cfg = network.NetworkConfig(
                row_branch_enabled=True,
                input_size=(ds.patch, ds.patch),
                width=args.width,
                learning_rate=args.lr,
                momentum=args.momentum,
                epochs=args.epochs,
                seed=args.seed,
                **overrides,
            )
            label = _slug(values)
            print(f"[{grid}] {', '.join(f'{n}={_num(v)}' for n, v in zip(setting_names, values))}")
            model, log = _fit(cfg, ds, quiet=True)
            pred = _fused_predictions(model, val, args)
            report = evalmod.evaluate(
                pred, gt, radius=args.radius, rho=args.rho,
                map_shape=(ds.patch // 2, ds.patch // 2),
            )
            run_dir = out / "runs" / f"{grid}_{label}"
            run_dir.mkdir(parents=True, exist_ok=True)
            network.save_weights(model, run_dir / "model.pmw")
            (run_dir / "train_log.txt").write_text(log.to_text(), encoding="utf-8")
            (run_dir / "report.json").write_text(
                json.dumps(report.to_json_dict(), indent=2, sort_keys=True) + "\n",
                encoding="utf-8",
            )
            records.append(f"run={grid} label={label} dir=runs/{grid}_{label}")
            rows.append((values, report))
        table = _format_table(grid, setting_names, rows)
        (out / f"table_{grid}.txt").write_text(table, encoding="utf-8")
        records.append(f"table={grid} file=table_{grid}.txt")
        print(table, end="")
    _write_manifest(out, "sweep", args, records)


# ----------------------------------------------------------- gradcheck


def cmd_gradcheck(args):
    results = network.gradient_suite()
    lines = []
    for name, err, tol in results:
        status = "PASS" if err < tol else "FAIL"
        lines.append(f"{name} max_rel_err={err!r} tol={_num(tol)} {status}")
        print(lines[-1])
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "gradcheck.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
        _write_manifest(out, "gradcheck", args)
    failed = [name for name, err, tol in results if not err < tol]
    if failed:
        raise RuntimeError(f"gradient checks failed: {', '.join(failed)}")


# -------------------------------------------------------------- render

_GT_POINT = np.array([1.0, 0.9, 0.1], dtype=np.float32)
_GT_LINE = np.array([0.2, 0.4, 1.0], dtype=np.float32)
_PRED_POINT = np.array([1.0, 0.1, 0.1], dtype=np.float32)
_PRED_LINE = np.array([0.1, 0.9, 0.9], dtype=np.float32)


def _draw_cross(img, x, y, color, arm=3):
    h, w = img.shape[:2]
    xi, yi = int(round(x)), int(round(y))
    for d in range(-arm, arm + 1):
        if 0 <= yi < h and 0 <= xi + d < w:
            img[yi, xi + d] = color
        if 0 <= yi + d < h and 0 <= xi < w:
            img[yi + d, xi] = color


def _draw_detections(img, ann, scale, point_color, line_color):
    polys = [[(x * scale, y * scale) for x, y in poly] for poly in ann.polylines]
    if polys:
        img[evalmod.rasterize_polylines(polys, img.shape[:2])] = line_color
    for x, y in ann.points:
        _draw_cross(img, x * scale, y * scale, point_color)


def cmd_render(args):
    ds = load_dataset(args.dataset)
    if args.patch:
        by_name = {p.name: p for p in ds.patches}
        missing = [n for n in args.patch if n not in by_name]
        if missing:
            raise ValueError(f"unknown patch name(s): {', '.join(missing)}")
        items = [by_name[n] for n in args.patch]
    else:
        items = _select_split(ds, args.split)[: args.limit]
    model = _load_model(args.weights) if args.weights else None
    out = Path(args.out)
    (out / "render").mkdir(parents=True, exist_ok=True)
    records = []
    n = ds.patch // 2
    sigma_p, sigma_r = min(args.sigma_plant), min(args.sigma_row)
    for p in items:
        stem = out / "render" / p.name
        rasters.write_ppm(f"{stem}_image.ppm", p.image)
        gt_pts = [(x / 2.0, y / 2.0) for x, y in p.ann.points]
        gt_polys = [[(x / 2.0, y / 2.0) for x, y in poly] for poly in p.ann.polylines]
        rasters.write_pgm16(f"{stem}_gt_plant.pgm", confmap.render_point_map(gt_pts, sigma_p, n, n))
        rasters.write_pgm16(f"{stem}_gt_row.pgm", confmap.render_line_map(gt_polys, sigma_r, n, n))
        overlay = np.array(p.image, copy=True)
        files = [f"image={p.name}_image.ppm", f"overlay={p.name}_overlay.ppm"]
        if model is not None:
            pmap, rmap = network.predict(model, p.image)
            pmap = rasters.quantize16(pmap)
            rmap = rasters.quantize16(rmap) if rmap is not None else None
            rasters.write_pgm16(f"{stem}_pred_plant.pgm", pmap)
            files.append(f"pred_plant={p.name}_pred_plant.pgm")
            if rmap is not None:
                rasters.write_pgm16(f"{stem}_pred_row.pgm", rmap)
                files.append(f"pred_row={p.name}_pred_row.pgm")
            det = _extract_detections(pmap, rmap, args)
            _draw_detections(overlay, det, 2.0, _PRED_POINT, _PRED_LINE)
        else:
            _draw_detections(overlay, p.ann, 1.0, _GT_POINT, _GT_LINE)
        rasters.write_ppm(f"{stem}_overlay.ppm", overlay)
        records.append(f"render={p.name} " + " ".join(files))
    _write_manifest(out, "render", args, records)
    print(f"rendered {len(items)} patches -> {out / 'render'}")


# -------------------------------------------------------------- parser


def _add_out(sp):
    sp.add_argument("--out", required=True, help="output directory (created if missing)")


def _add_extraction_flags(sp):
    sp.add_argument("--tau", type=float, default=0.35, help="confidence threshold (default 0.35)")
    sp.add_argument(
        "--min-dist", type=float, default=1.0, help="peak suppression distance in map px"
    )
    sp.add_argument(
        "--epsilon", type=float, default=1.5, help="polyline simplification tolerance in map px"
    )
    sp.add_argument(
        "--min-support", type=int, default=10, help="minimum skeleton pixels per row component"
    )


def _add_model_flags(sp):
    sp.add_argument("--stages", type=int, default=6, help="refinement stages T (default 6)")
    sp.add_argument(
        "--sigma-plant", type=_sigma_pair, default=(1.0, 3.0), metavar="MIN:MAX",
        help="plant-branch sigma schedule endpoints (default 1:3)",
    )
    sp.add_argument(
        "--sigma-row", type=_sigma_pair, default=(0.5, 3.0), metavar="MIN:MAX",
        help="row-branch sigma schedule endpoints (default 0.5:3)",
    )
    sp.add_argument(
        "--width", default="reduced", choices=sorted(network._WIDTHS),
        help="channel-width preset (default reduced)",
    )
    sp.add_argument("--lr", type=float, default=0.001, help="SGD learning rate (default 0.001)")
    sp.add_argument("--momentum", type=float, default=0.9, help="SGD momentum (default 0.9)")
    sp.add_argument("--epochs", type=int, default=100, help="training epochs (default 100)")
    sp.add_argument("--seed", type=int, default=0, help="run seed (default 0)")


def _add_eval_flags(sp):
    sp.add_argument(
        "--radius", type=float, default=8.0,
        help="plant match radius in patch px (8 corn-like, 15 citrus-like)",
    )
    sp.add_argument("--rho", type=float, default=3.0, help="row buffer radius in map px")


def _build_parser():
    p = argparse.ArgumentParser(
        prog="plantmap",
        description="plant counting and plantation-row detection pipeline",
    )
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    sp = sub.add_parser("synth", help="generate a synthetic mosaic dataset")
    _add_out(sp)
    sp.add_argument(
        "--preset", default="corn-like", choices=("corn-like", "citrus-like"),
        help="scene preset (default corn-like)",
    )
    sp.add_argument("--scene-config", help="key=value file overriding preset fields")
    sp.add_argument("--mosaics", type=int, default=17, help="mosaic count (default 17)")
    sp.add_argument(
        "--split", type=_fractions, default=(0.6, 0.2, 0.2), metavar="TR:VA:TE",
        help="split fractions (default 0.6:0.2:0.2)",
    )
    sp.add_argument("--patch", type=int, default=256, help="patch size (default 256)")
    sp.add_argument("--gsd", type=float, default=0.0155, help="ground sample distance in m/px")
    sp.add_argument("--seed", type=int, default=None, help="override the scene config seed")
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("train", help="train a model on a dataset's train split")
    sp.add_argument("--dataset", required=True, help="synth output directory")
    _add_out(sp)
    _add_model_flags(sp)
    sp.add_argument(
        "--no-row-branch", action="store_true", help="disable the row branch (ablation baseline)"
    )
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("predict", help="write per-patch confidence maps as 16-bit PGMs")
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--weights", required=True, help="model.pmw from train")
    sp.add_argument("--split", default="test", choices=("train", "val", "test", "all"))
    _add_out(sp)
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("extract", help="turn confidence maps into detection text files")
    sp.add_argument("--maps", required=True, help="predict output directory")
    sp.add_argument("--dataset", help="also stitch detections per mosaic with world coordinates")
    _add_out(sp)
    _add_extraction_flags(sp)
    sp.set_defaults(func=cmd_extract)

    sp = sub.add_parser("eval", help="score detections against ground truth")
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--split", default="test", choices=("train", "val", "test", "all"))
    src = sp.add_mutually_exclusive_group(required=True)
    src.add_argument("--weights", help="fused path: predict + extract + evaluate in one pass")
    src.add_argument("--detections", help="composed path: extract output directory")
    _add_out(sp)
    _add_extraction_flags(sp)
    _add_eval_flags(sp)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("sweep", help="run the stage/sigma experiment grids")
    sp.add_argument("--dataset", required=True)
    sp.add_argument(
        "--grid", default="all", choices=("stages", "sigma-max", "sigma-min", "sigma-row", "all")
    )
    _add_out(sp)
    _add_model_flags(sp)
    _add_extraction_flags(sp)
    _add_eval_flags(sp)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("gradcheck", help="finite-difference gradient suites")
    sp.add_argument("--out", help="optionally write gradcheck.txt + manifest here")
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("render", help="write confidence maps and detection overlays")
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--weights", help="draw predicted maps and detections (default: ground truth)")
    sp.add_argument("--split", default="test", choices=("train", "val", "test", "all"))
    sp.add_argument("--patch", action="append", help="render this patch name (repeatable)")
    sp.add_argument("--limit", type=int, default=4, help="max patches when using --split")
    _add_out(sp)
    _add_extraction_flags(sp)
    sp.add_argument("--sigma-plant", type=_sigma_pair, default=(1.0, 3.0), metavar="MIN:MAX")
    sp.add_argument("--sigma-row", type=_sigma_pair, default=(0.5, 3.0), metavar="MIN:MAX")
    sp.set_defaults(func=cmd_render)

    return p


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors, 0 on --help
        return 0 if exc.code == 0 else 1
    try:
        args.func(args)
        return 0
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # unwritable outputs, malformed rasters, ...
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
