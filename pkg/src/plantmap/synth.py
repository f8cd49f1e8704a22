"""Synthetic plantation scenes with exact ground truth.

Rows are parallel lines (optionally sinusoidally curved) at a fixed
orientation; plants are radially shaded green blobs placed at jittered
slots along each row, with random gaps and a few off-row outliers.  The
returned annotations are the generative truths, so image and labels are
self-consistent by construction.

Everything is driven by one numpy Generator in a fixed draw order, which
makes output bitwise-reproducible per (config, seed).
"""

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from plantmap.annotations import AnnotationSet
from plantmap.geo import clip_polyline, patch_grid, split_annotations
from plantmap.kernels import pure as _pure

_BG_COLOR = np.array([0.38, 0.30, 0.22])  # dry-soil brown
_PLANT_COLOR = np.array([0.16, 0.58, 0.14])
_ROW_SAMPLE_STEP = 8.0  # px between row polyline vertices
_PLANT_ALPHA = 0.9


@dataclass(frozen=True)
class SceneConfig:
    width: int = 768
    height: int = 768
    row_spacing: float = 30.0
    row_angle_deg: float = 17.0
    curve_amplitude: float = 5.0
    curve_wavelength: float = 220.0
    plant_spacing: float = 20.0
    spacing_jitter: float = 3.0
    blob_radius: float = 4.0
    radius_jitter: float = 1.0
    gap_prob: float = 0.08
    outlier_rate: float = 0.03
    texture_amp: float = 0.06
    blur_sigma: float = 0.8
    noise_sigma: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if self.width < 64 or self.height < 64:
            raise ValueError("mosaic must be at least 64x64")
        for name in ("row_spacing", "plant_spacing", "blob_radius", "curve_wavelength"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in (
            "curve_amplitude",
            "spacing_jitter",
            "radius_jitter",
            "texture_amp",
            "blur_sigma",
            "noise_sigma",
        ):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        for name in ("gap_prob", "outlier_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.plant_spacing < 2 * self.blob_radius:
            raise ValueError(
                f"degenerate scene: plant spacing {self.plant_spacing} < "
                f"2x blob radius {self.blob_radius}"
            )
        if self.row_spacing < 2 * self.blob_radius:
            raise ValueError(
                f"degenerate scene: row spacing {self.row_spacing} < "
                f"2x blob radius {self.blob_radius}"
            )


def corn_like(**overrides):
    """Small dense blobs, tight rows (the 8 px match-radius regime)."""
    return SceneConfig(**overrides)


def citrus_like(**overrides):
    """Large canopies that may touch, wide rows (15 px match radius)."""
    base = dict(
        row_spacing=56.0,
        row_angle_deg=-8.0,
        curve_amplitude=4.0,
        curve_wavelength=320.0,
        plant_spacing=26.0,
        spacing_jitter=3.0,
        blob_radius=12.0,
        radius_jitter=2.0,
        gap_prob=0.05,
        outlier_rate=0.01,
        blur_sigma=1.2,
    )
    base.update(overrides)
    return SceneConfig(**base)


_INT_FIELDS = {"width", "height", "seed"}
_FIELD_NAMES = [f.name for f in dataclasses.fields(SceneConfig)]


def save_scene_config(cfg, path):
    with open(path, "w", encoding="ascii") as fh:
        for name in _FIELD_NAMES:
            fh.write(f"{name}={getattr(cfg, name)!r}\n")


def load_scene_config(path, base=None):
    """Flat key=value file; keys not present keep the base preset's value."""
    if base is None:
        base = corn_like()
    overrides = {}
    with open(path, encoding="ascii") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            key = key.strip()
            if not sep or key not in _FIELD_NAMES:
                raise ValueError(f"{path}: line {lineno}: unknown setting {line!r}")
            try:
                overrides[key] = int(value) if key in _INT_FIELDS else float(value)
            except ValueError:
                raise ValueError(
                    f"{path}: line {lineno}: bad value for {key}: {value.strip()!r}"
                ) from None
    return dataclasses.replace(base, **overrides)


def _background(cfg, rng):
    img = np.ones((cfg.height, cfg.width, 3)) * _BG_COLOR
    if cfg.texture_amp > 0:
        ch, cw = cfg.height // 32 + 2, cfg.width // 32 + 2
        coarse = rng.normal(0.0, 1.0, size=(1, 3, ch, cw))
        tex = _pure.bilinear_forward(coarse, cfg.height, cfg.width)[0]
        img += cfg.texture_amp * tex.transpose(1, 2, 0)
    return img


def _row_geometry(cfg, rng):
    """Curved row centerlines covering the mosaic.  Each row k sits at
    signed offset (k + 0.5) * spacing from the mosaic center along the
    row normal, with its own random curvature phase."""
    theta = math.radians(cfg.row_angle_deg)
    u = np.array([math.cos(theta), math.sin(theta)])
    nrm = np.array([-math.sin(theta), math.cos(theta)])
    center = np.array([cfg.width / 2.0, cfg.height / 2.0])
    reach = math.hypot(cfg.width, cfg.height) / 2.0
    n_side = int(math.ceil((reach + cfg.curve_amplitude) / cfg.row_spacing))
    rows = []
    for k in range(-n_side, n_side):
        offset = (k + 0.5) * cfg.row_spacing
        phase = rng.uniform(0.0, 2.0 * math.pi)
        rows.append((center + nrm * offset, u, nrm, phase))
    return rows, reach


def _row_point(row, cfg, s):
    origin, u, nrm, phase = row
    p = origin + u * s
    if cfg.curve_amplitude > 0:
        p = p + nrm * (
            cfg.curve_amplitude
            * math.sin(2.0 * math.pi * s / cfg.curve_wavelength + phase)
        )
    return p


def _row_polyline(row, cfg, reach):
    if cfg.curve_amplitude == 0:
        ss = [-reach, reach]
    else:
        n = int(math.ceil(2 * reach / _ROW_SAMPLE_STEP))
        ss = [-reach + i * (2 * reach) / n for i in range(n + 1)]
    return [tuple(_row_point(row, cfg, s)) for s in ss]


def generate(cfg, seed=None):
    """Render one mosaic; returns (float32 RGB raster in [0,1],
    AnnotationSet with plant points and row polylines in mosaic px)."""
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    img = _background(cfg, rng)
    rows, reach = _row_geometry(cfg, rng)

    # plant slots: jittered positions along each row, random gaps
    plants = []  # (x, y, radius, brightness)
    for row in rows:
        n_slots = int(math.floor(2 * reach / cfg.plant_spacing))
        start = -reach + (2 * reach - n_slots * cfg.plant_spacing) / 2.0
        for i in range(n_slots + 1):
            s = start + i * cfg.plant_spacing
            if cfg.spacing_jitter > 0:
                s += rng.uniform(-cfg.spacing_jitter, cfg.spacing_jitter)
            gap = rng.random() < cfg.gap_prob
            radius = cfg.blob_radius
            if cfg.radius_jitter > 0:
                radius += rng.uniform(-cfg.radius_jitter, cfg.radius_jitter)
            brightness = rng.uniform(0.85, 1.15)
            if gap:
                continue
            x, y = _row_point(row, cfg, s)
            margin = math.ceil(radius) + 1
            if margin <= x < cfg.width - margin and margin <= y < cfg.height - margin:
                plants.append((x, y, radius, brightness))

    # off-row outliers, kept clear of rows and existing plants
    n_out = int(round(cfg.outlier_rate * len(plants)))
    placed = 0
    attempts = 0
    margin = math.ceil(cfg.blob_radius + cfg.radius_jitter) + 1
    while placed < n_out and attempts < 60 * n_out:
        attempts += 1
        x = rng.uniform(margin, cfg.width - margin)
        y = rng.uniform(margin, cfg.height - margin)
        radius = cfg.blob_radius
        if cfg.radius_jitter > 0:
            radius += rng.uniform(-cfg.radius_jitter, cfg.radius_jitter)
        brightness = rng.uniform(0.85, 1.15)
        # clearance from row centerlines, capped so some ground stays free
        clear = min(
            cfg.curve_amplitude + 1.5 * cfg.blob_radius, 0.4 * cfg.row_spacing
        )
        near_row = any(
            abs(float(np.dot((np.array([x, y]) - row[0]), row[2]))) < clear
            for row in rows
        )
        too_close = any(
            (x - px) ** 2 + (y - py) ** 2 < (2 * cfg.blob_radius) ** 2
            for px, py, _, _ in plants
        )
        if not near_row and not too_close:
            plants.append((x, y, radius, brightness))
            placed += 1

    for x, y, radius, brightness in plants:
        _render_blob(img, x, y, radius, brightness)

    if cfg.blur_sigma > 0:
        img = _gaussian_blur(img, cfg.blur_sigma)
    if cfg.noise_sigma > 0:
        img += rng.normal(0.0, cfg.noise_sigma, size=img.shape)

    ann = AnnotationSet()
    ann.points = [(float(x), float(y)) for x, y, _, _ in plants]
    for row in rows:
        poly = _row_polyline(row, cfg, reach)
        for piece in clip_polyline(poly, 0.0, 0.0, cfg.width - 1.0, cfg.height - 1.0):
            ann.polylines.append(piece)
    return np.clip(img, 0.0, 1.0).astype(np.float32), ann


def _render_blob(img, x, y, radius, brightness):
    h, w = img.shape[:2]
    r = math.ceil(radius)
    x0, x1 = max(0, int(x) - r), min(w, int(x) + r + 2)
    y0, y1 = max(0, int(y) - r), min(h, int(y) + r + 2)
    yy, xx = np.mgrid[y0:y1, x0:x1]
    d = np.hypot(xx - x, yy - y)
    m = np.clip(1.0 - d / radius, 0.0, 1.0) * _PLANT_ALPHA
    color = _PLANT_COLOR * brightness
    img[y0:y1, x0:x1] = img[y0:y1, x0:x1] * (1.0 - m[..., None]) + color * m[..., None]


def _gaussian_blur(img, sigma):
    r = math.ceil(3.0 * sigma)
    taps = np.exp(-0.5 * (np.arange(-r, r + 1) / sigma) ** 2)
    taps /= taps.sum()
    h, w = img.shape[:2]
    for axis, extent in ((0, h), (1, w)):
        out = np.zeros_like(img)
        norm = np.zeros(extent)
        for i, t in enumerate(taps):
            d = i - r
            lo, hi = max(0, d), extent + min(0, d)
            src = slice(max(0, -d), extent + min(0, -d))
            dst = slice(lo, hi)
            if axis == 0:
                out[dst] += t * img[src]
            else:
                out[:, dst] += t * img[:, src]
            norm[dst] += t
        shape = (extent, 1, 1) if axis == 0 else (1, extent, 1)
        img = out / norm.reshape(shape)
    return img


@dataclass
class PatchRecord:
    mosaic: int
    pid: int
    offset: tuple
    image: np.ndarray
    ann: AnnotationSet

    @property
    def name(self):
        return f"m{self.mosaic:03d}_p{self.pid:03d}"


@dataclass
class Dataset:
    mosaics: list  # (image, AnnotationSet) per mosaic
    grid: object  # PatchGrid shared by all mosaics
    splits: dict  # "train" / "val" / "test" -> [PatchRecord]


def make_dataset(cfg, n_mosaics, split=(0.6, 0.2, 0.2), patch=256):
    """Generate mosaics, cut them into patches, and partition the patch
    pool into train/val/test with the config seed."""
    if abs(sum(split) - 1.0) > 1e-9:
        raise ValueError(f"split fractions must sum to 1, got {split}")
    if n_mosaics < 1:
        raise ValueError("need at least one mosaic")
    ss = np.random.SeedSequence(cfg.seed)
    seeds = ss.generate_state(n_mosaics + 1, dtype=np.uint64)
    grid = patch_grid(cfg.width, cfg.height, patch)
    mosaics = []
    records = []
    for m in range(n_mosaics):
        img, ann = generate(cfg, seed=int(seeds[m]))
        mosaics.append((img, ann))
        per_patch = split_annotations(ann, grid)
        for pid, (_, _, xo, yo) in enumerate(grid.records):
            records.append(
                PatchRecord(
                    mosaic=m,
                    pid=pid,
                    offset=(xo, yo),
                    image=img[yo : yo + patch, xo : xo + patch],
                    ann=per_patch[pid],
                )
            )
    n = len(records)
    n_train = int(math.floor(n * split[0]))
    n_val = int(math.floor(n * split[1]))
    n_test = n - n_train - n_val
    if min(n_train, n_val, n_test) < 1:
        raise ValueError(
            f"too few patches ({n}) for a nonempty {split} split"
        )
    order = np.random.default_rng(int(seeds[-1])).permutation(n)
    splits = {
        "train": [records[i] for i in order[:n_train]],
        "val": [records[i] for i in order[n_train : n_train + n_val]],
        "test": [records[i] for i in order[n_train + n_val :]],
    }
    return Dataset(mosaics=mosaics, grid=grid, splits=splits)
