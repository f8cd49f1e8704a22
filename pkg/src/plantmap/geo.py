"""Georeferencing: world-file affine transforms, mosaic tiling into
256x256 patches, and reassembly of per-patch detections.

World files use the pixel-center convention: pixel (px, py) of the
mosaic maps to world_x = a*px + b*py + c, world_y = d*px + e*py + f.
Detections live at map resolution (half the patch resolution), so
reassembly scales them by 2 before applying offsets.
"""

from dataclasses import dataclass

import numpy as np

from plantmap.annotations import AnnotationSet


@dataclass(frozen=True)
class GeoTransform:
    a: float
    b: float
    c: float
    d: float
    e: float
    f: float

    def __post_init__(self):
        if self.a * self.e - self.b * self.d == 0.0:
            raise ValueError("singular transform: a*e - b*d must be nonzero")


def world_xy(t, px, py):
    return (t.a * px + t.b * py + t.c, t.d * px + t.e * py + t.f)


# world-file line order
_WLD_FIELDS = ("a", "d", "b", "e", "c", "f")


def read_world_file(path):
    with open(path, encoding="ascii") as fh:
        lines = [ln.strip() for ln in fh.read().splitlines() if ln.strip()]
    if len(lines) != 6:
        raise ValueError(f"{path}: world file needs exactly 6 lines, found {len(lines)}")
    vals = {}
    for i, (name, line) in enumerate(zip(_WLD_FIELDS, lines), start=1):
        try:
            vals[name] = float(line)
        except ValueError:
            raise ValueError(f"{path}: line {i}: {line!r} is not numeric") from None
    return GeoTransform(**vals)


def write_world_file(t, path):
    with open(path, "w", encoding="ascii") as fh:
        for name in _WLD_FIELDS:
            fh.write(repr(float(getattr(t, name))) + "\n")


@dataclass(frozen=True)
class PatchGrid:
    width: int
    height: int
    patch: int
    records: list  # (col, row, x_offset, y_offset), row-major


def patch_grid(width, height, patch=256):
    if width < patch or height < patch:
        raise ValueError(f"mosaic {width}x{height} smaller than patch size {patch}")
    cols, rows = width // patch, height // patch
    records = [
        (col, row, col * patch, row * patch)
        for row in range(rows)
        for col in range(cols)
    ]
    return PatchGrid(width, height, patch, records)


def split(mosaic, patch=256):
    """Row-major non-overlapping tiling; edge remainders are dropped.
    Returns [(view, (x_offset, y_offset)), ...]."""
    h, w = mosaic.shape[:2]
    grid = patch_grid(w, h, patch)
    return [
        (mosaic[yo : yo + patch, xo : xo + patch], (xo, yo))
        for _, _, xo, yo in grid.records
    ]


def _clip_segment(x1, y1, x2, y2, xmin, ymin, xmax, ymax):
    """Liang-Barsky; returns (t0, t1) of the inside portion or None."""
    dx, dy = x2 - x1, y2 - y1
    t0, t1 = 0.0, 1.0
    for p, q in ((-dx, x1 - xmin), (dx, xmax - x1), (-dy, y1 - ymin), (dy, ymax - y1)):
        if p == 0.0:
            if q < 0.0:
                return None
        else:
            r = q / p
            if p < 0.0:
                if r > t1:
                    return None
                if r > t0:
                    t0 = r
            else:
                if r < t0:
                    return None
                if r < t1:
                    t1 = r
    return t0, t1


def clip_polyline(poly, xmin, ymin, xmax, ymax):
    """Clip to a box; a polyline may come back as several pieces.
    Vertices already inside are preserved bit-exactly."""
    pieces = []
    piece = []
    for (x1, y1), (x2, y2) in zip(poly[:-1], poly[1:]):
        ts = _clip_segment(x1, y1, x2, y2, xmin, ymin, xmax, ymax)
        if ts is None:
            if len(piece) >= 2:
                pieces.append(piece)
            piece = []
            continue
        t0, t1 = ts
        p0 = (x1, y1) if t0 == 0.0 else (x1 + t0 * (x2 - x1), y1 + t0 * (y2 - y1))
        p1 = (x2, y2) if t1 == 1.0 else (x1 + t1 * (x2 - x1), y1 + t1 * (y2 - y1))
        if p0 == p1:
            continue
        if piece and piece[-1] == p0:
            piece.append(p1)
        else:
            if len(piece) >= 2:
                pieces.append(piece)
            piece = [p0, p1]
        if t1 < 1.0:
            pieces.append(piece)
            piece = []
    if len(piece) >= 2:
        pieces.append(piece)
    return pieces


def split_annotations(ann, grid):
    """Route mosaic annotations into patch-local coordinate frames.
    Margin annotations (outside every patch) are dropped; polylines are
    clipped to each patch box they cross."""
    cols = grid.width // grid.patch
    rows = grid.height // grid.patch
    per = {pid: AnnotationSet() for pid in range(len(grid.records))}
    for x, y in ann.points:
        col, row = int(x // grid.patch), int(y // grid.patch)
        if 0 <= col < cols and 0 <= row < rows:
            pid = row * cols + col
            per[pid].points.append((x - col * grid.patch, y - row * grid.patch))
    for poly in ann.polylines:
        for pid, (col, row, xo, yo) in enumerate(grid.records):
            for piece in clip_polyline(poly, xo, yo, xo + grid.patch, yo + grid.patch):
                per[pid].polylines.append([(px - xo, py - yo) for px, py in piece])
    return per


def to_world(transform, offset, xy_map):
    """Map-resolution detection -> world coordinates: scale by 2 to patch
    pixels, add the patch offset, then apply the affine."""
    px = offset[0] + 2.0 * xy_map[0]
    py = offset[1] + 2.0 * xy_map[1]
    return world_xy(transform, px, py)


def stitch(per_patch, grid, transform=None, map_scale=2.0):
    """Merge per-patch detections (map coordinates) into mosaic pixels,
    attaching world coordinates when a transform is supplied. No
    cross-border deduplication: patches do not overlap."""
    merged = AnnotationSet()
    scores = []
    wpts, wpolys = [], []
    for pid in sorted(per_patch):
        if not 0 <= pid < len(grid.records):
            raise ValueError(f"unknown patch id {pid} (grid has {len(grid.records)} patches)")
        _, _, xo, yo = grid.records[pid]
        ann = per_patch[pid]
        for i, (x, y) in enumerate(ann.points):
            mx, my = xo + map_scale * x, yo + map_scale * y
            merged.points.append((mx, my))
            scores.append(ann.scores[i] if ann.scores is not None else None)
            wpts.append(world_xy(transform, mx, my) if transform else None)
        for poly in ann.polylines:
            mp = [(xo + map_scale * x, yo + map_scale * y) for x, y in poly]
            merged.polylines.append(mp)
            wpolys.append([world_xy(transform, mx, my) for mx, my in mp] if transform else None)
    if any(s is not None for s in scores):
        merged.scores = scores
    if transform is not None:
        merged.world_points = wpts
        merged.world_polylines = wpolys
    return merged
