"""The two-branch confidence-map network.

A shared convolutional extractor (eight 3x3 convs, two 2x2 maxpools,
bilinear upsample to half input resolution) feeds a pyramid pooling
block (max-pool to 1/2/3/6 grids, 1x1 conv, upsample, concat).  T
prediction stages follow, each with a plant branch and a row branch:
stage 1 reads the pyramid features alone, later stages read the pyramid
features concatenated with BOTH branches' previous maps, so the two
tasks co-refine.  Every stage of every branch ends in a 1-filter conv +
sigmoid and is supervised against ground truth rendered with that
stage's sigma, wide first, sharp last.

Training is plain per-patch SGD with momentum, batch size 1, with a
fresh shuffle each epoch derived from the run seed.  Everything is
deterministic given the config seed.
"""

import dataclasses
import math
import struct
from dataclasses import dataclass

import numpy as np

from plantmap import confmap
from plantmap.tensor import (
    ParamState,
    Tensor,
    adaptive_maxpool,
    add,
    bilinear_upsample,
    concat_channels,
    conv2d,
    maxpool2,
    mse_loss,
    relu,
    sigmoid,
)

# channel plans: extractor per-conv widths, pyramid filters per level,
# stage trunk width, stage-1 projection width
_WIDTHS = {
    "paper": {
        "extractor": (64, 64, 128, 128, 256, 256, 256, 256),
        "ppm": 512,
        "trunk": 128,
        "proj": 512,
    },
    "half": {
        "extractor": (32, 32, 64, 64, 128, 128, 128, 128),
        "ppm": 256,
        "trunk": 64,
        "proj": 256,
    },
    "reduced": {
        "extractor": (8, 8, 16, 16, 32, 32, 32, 32),
        "ppm": 8,
        "trunk": 8,
        "proj": 32,
    },
    "tiny": {
        "extractor": (2, 2, 3, 3, 4, 4, 4, 4),
        "ppm": 2,
        "trunk": 3,
        "proj": 4,
    },
}

_PPM_LEVELS = (1, 2, 3, 6)


@dataclass(frozen=True)
class NetworkConfig:
    stages: int = 6
    sigma_plant: tuple = (1.0, 3.0)  # (sigma_min, sigma_max)
    sigma_row: tuple = (0.5, 3.0)
    row_branch_enabled: bool = True
    input_size: tuple = (256, 256)
    width: str = "paper"
    learning_rate: float = 0.001
    momentum: float = 0.9
    epochs: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.stages < 2:
            raise ValueError(f"stages must be >= 2, got {self.stages}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.width not in _WIDTHS:
            raise ValueError(
                f"unknown width preset {self.width!r}; choose from {sorted(_WIDTHS)}"
            )
        object.__setattr__(self, "input_size", tuple(self.input_size))
        object.__setattr__(self, "sigma_plant", tuple(self.sigma_plant))
        object.__setattr__(self, "sigma_row", tuple(self.sigma_row))
        h, w = self.input_size
        if h % 4 or w % 4 or h < 24 or w < 24:
            # two maxpools then the 6x6 pyramid level must fit
            raise ValueError(f"input_size must be multiples of 4, >= 24, got {self.input_size}")
        self.plant_schedule  # validates the sigma pair
        self.row_schedule

    @property
    def plant_schedule(self):
        return confmap.sigma_schedule(self.stages, *self.sigma_plant)

    @property
    def row_schedule(self):
        return confmap.sigma_schedule(self.stages, *self.sigma_row)

    @property
    def map_size(self):
        return (self.input_size[0] // 2, self.input_size[1] // 2)


def config_to_text(cfg):
    return (
        f"stages={cfg.stages}\n"
        f"sigma_plant={cfg.sigma_plant[0]!r}:{cfg.sigma_plant[1]!r}\n"
        f"sigma_row={cfg.sigma_row[0]!r}:{cfg.sigma_row[1]!r}\n"
        f"row_branch_enabled={int(cfg.row_branch_enabled)}\n"
        f"input_size={cfg.input_size[0]}x{cfg.input_size[1]}\n"
        f"width={cfg.width}\n"
        f"learning_rate={cfg.learning_rate!r}\n"
        f"momentum={cfg.momentum!r}\n"
        f"epochs={cfg.epochs}\n"
        f"seed={cfg.seed}\n"
    )


def config_from_text(text):
    fields = {}
    for line in text.strip().splitlines():
        key, _, value = line.partition("=")
        fields[key] = value
    try:
        sp = fields["sigma_plant"].split(":")
        sr = fields["sigma_row"].split(":")
        size = fields["input_size"].split("x")
        return NetworkConfig(
            stages=int(fields["stages"]),
            sigma_plant=(float(sp[0]), float(sp[1])),
            sigma_row=(float(sr[0]), float(sr[1])),
            row_branch_enabled=fields["row_branch_enabled"] == "1",
            input_size=(int(size[0]), int(size[1])),
            width=fields["width"],
            learning_rate=float(fields["learning_rate"]),
            momentum=float(fields["momentum"]),
            epochs=int(fields["epochs"]),
            seed=int(fields["seed"]),
        )
    except (KeyError, IndexError) as exc:
        raise ValueError(f"malformed network config: {exc}") from None


class NetworkModel:
    def __init__(self, config, params, dtype):
        self.config = config
        self.params = params  # ordered name -> ParamState, declaration order
        self.dtype = dtype

    def parameters(self):
        return list(self.params.values())

    def branches(self):
        return ("plant", "row") if self.config.row_branch_enabled else ("plant",)


_MAP_PRIOR = 0.1  # initial sigmoid level of every confidence map


def build(config, dtype=np.float32):
    """Allocate and He-initialize all parameters, seeded and in a fixed
    declaration order (the weight file relies on it)."""
    plan = _WIDTHS[config.width]
    rng = np.random.default_rng(config.seed)
    params = {}

    def conv(name, out_ch, in_ch, k, out_layer=False):
        # map heads keep He-scale weights (the trunk learns through them)
        # but bias the sigmoid to the background level, so early epochs
        # raise peaks instead of spending their gradient flattening a
        # half-gray canvas (>95% of target pixels are zero)
        std = math.sqrt(2.0 / (in_ch * k * k))
        bias = math.log(_MAP_PRIOR / (1.0 - _MAP_PRIOR)) if out_layer else 0.0
        params[name + "_w"] = ParamState(
            rng.normal(0.0, std, (out_ch, in_ch, k, k)).astype(dtype)
        )
        params[name + "_b"] = ParamState(np.full(out_ch, bias, dtype))

    in_ch = 3
    for i, out_ch in enumerate(plan["extractor"], start=1):
        conv(f"ext{i}", out_ch, in_ch, 3)
        in_ch = out_ch
    feat_ch = plan["extractor"][-1]
    for lvl in _PPM_LEVELS:
        conv(f"ppm{lvl}", plan["ppm"], feat_ch, 1)
    ppm_out = feat_ch + len(_PPM_LEVELS) * plan["ppm"]
    trunk, proj = plan["trunk"], plan["proj"]
    branches = ("plant", "row") if config.row_branch_enabled else ("plant",)
    for t in range(1, config.stages + 1):
        for br in branches:
            if t == 1:
                conv(f"s1_{br}_c1", trunk, ppm_out, 3)
                conv(f"s1_{br}_c2", trunk, trunk, 3)
                conv(f"s1_{br}_c3", trunk, trunk, 3)
                conv(f"s1_{br}_proj", proj, trunk, 1)
                conv(f"s1_{br}_out", 1, proj, 1, out_layer=True)
            else:
                in_maps = ppm_out + len(branches)
                conv(f"s{t}_{br}_c1", trunk, in_maps, 7)
                for j in range(2, 6):
                    conv(f"s{t}_{br}_c{j}", trunk, trunk, 7)
                conv(f"s{t}_{br}_fuse", trunk, trunk, 1)
                conv(f"s{t}_{br}_out", 1, trunk, 1, out_layer=True)
    return NetworkModel(config, params, dtype)


@dataclass
class StageOutputs:
    plant_maps: list  # T tensors (1, 1, H/2, W/2)
    row_maps: list | None


def _conv_relu(model, name, x):
    p = model.params
    return relu(conv2d(x, p[name + "_w"].value, p[name + "_b"].value))


def _stage(model, t, br, x):
    p = model.params
    if t == 1:
        h = _conv_relu(model, f"s1_{br}_c1", x)
        h = _conv_relu(model, f"s1_{br}_c2", h)
        h = _conv_relu(model, f"s1_{br}_c3", h)
        h = _conv_relu(model, f"s1_{br}_proj", h)
    else:
        h = x
        for j in range(1, 6):
            h = _conv_relu(model, f"s{t}_{br}_c{j}", h)
        h = _conv_relu(model, f"s{t}_{br}_fuse", h)
    name = f"s{t}_{br}_out"
    return sigmoid(conv2d(h, p[name + "_w"].value, p[name + "_b"].value))


def forward(model, patch):
    """Run one patch (H, W, 3) in [0,1] through every stage; returns all
    per-stage confidence maps as live autodiff tensors."""
    cfg = model.config
    h, w = cfg.input_size
    if patch.shape != (h, w, 3):
        raise ValueError(f"patch must be {h}x{w}x3, got {patch.shape}")
    x = Tensor(np.ascontiguousarray(patch.transpose(2, 0, 1)[None], dtype=model.dtype))

    for i in range(1, 9):
        x = _conv_relu(model, f"ext{i}", x)
        if i in (2, 4):
            x = maxpool2(x)
    feat = bilinear_upsample(x, h // 2, w // 2)

    pieces = [feat]
    for lvl in _PPM_LEVELS:
        pooled = adaptive_maxpool(feat, lvl)
        projected = _conv_relu(model, f"ppm{lvl}", pooled)
        pieces.append(bilinear_upsample(projected, h // 2, w // 2))
    context = concat_channels(pieces)

    plant_maps, row_maps = [], []
    prev = None  # (plant, row) maps from the previous stage
    for t in range(1, cfg.stages + 1):
        if t == 1:
            inp = context
        else:
            inp = concat_channels([context, *prev])
        outs = tuple(_stage(model, t, br, inp) for br in model.branches())
        plant_maps.append(outs[0])
        if cfg.row_branch_enabled:
            row_maps.append(outs[1])
        prev = outs
    return StageOutputs(
        plant_maps=plant_maps, row_maps=row_maps if cfg.row_branch_enabled else None
    )


def loss(outputs, gt_plant, gt_row=None):
    """Sum over stages and branches of per-stage MSE against ground-truth
    maps rendered with that stage's sigma."""

    def pair_terms(maps, gts, branch):
        if gts is None or len(gts) != len(maps):
            got = 0 if gts is None else len(gts)
            raise ValueError(
                f"{branch} ground truth must cover {len(maps)} stages, got {got}"
            )
        out = []
        for pred, gt in zip(maps, gts):
            arr = np.asarray(gt, dtype=pred.data.dtype)
            if arr.ndim == 2:
                arr = arr[None, None]
            out.append(mse_loss(pred, Tensor(arr)))
        return out

    terms = pair_terms(outputs.plant_maps, gt_plant, "plant")
    if outputs.row_maps is not None:
        terms += pair_terms(outputs.row_maps, gt_row, "row")
    total = terms[0]
    for term in terms[1:]:
        total = add(total, term)
    return total


def render_targets(ann, config, dtype=np.float32):
    """Ground-truth map stacks for one patch: annotations live in input
    pixels, maps at half resolution, so coordinates are halved."""
    mh, mw = config.map_size
    pts = [(x / 2.0, y / 2.0) for x, y in ann.points]
    gt_plant = [
        confmap.render_point_map(pts, s, mh, mw).astype(dtype)[None, None]
        for s in config.plant_schedule.values
    ]
    if not config.row_branch_enabled:
        return gt_plant, None
    polys = [[(x / 2.0, y / 2.0) for x, y in poly] for poly in ann.polylines]
    gt_row = [
        confmap.render_line_map(polys, s, mh, mw).astype(dtype)[None, None]
        for s in config.row_schedule.values
    ]
    return gt_plant, gt_row


@dataclass
class TrainingLog:
    entries: list

    def to_text(self):
        lines = []
        for e in self.entries:
            line = f"epoch={e['epoch']} train_loss={e['train_loss']!r}"
            if e["val_loss"] is not None:
                line += f" val_loss={e['val_loss']!r}"
            lines.append(line)
        return "\n".join(lines) + "\n"


def _eval_loss(model, items):
    total = 0.0
    for patch, ann in items:
        outs = forward(model, patch)
        gt_p, gt_r = render_targets(ann, model.config, dtype=model.dtype)
        total += loss(outs, gt_p, gt_r).item()
    return total / len(items)


def train(model, train_set, val_set=None, learning_rate=None, epochs=None, progress=None):
    """Shuffled per-patch SGD with momentum, batch size 1.  Items are
    (patch image, AnnotationSet) pairs; the shuffle is reseeded per epoch
    from the config seed so runs are reproducible."""
    from plantmap.tensor import sgd_step

    cfg = model.config
    lr = cfg.learning_rate if learning_rate is None else learning_rate
    n_epochs = cfg.epochs if epochs is None else epochs
    if not train_set:
        raise ValueError("training set is empty")
    params = model.parameters()
    log = TrainingLog(entries=[])
    for epoch in range(1, n_epochs + 1):
        order = np.random.default_rng(
            np.random.SeedSequence([cfg.seed, epoch])
        ).permutation(len(train_set))
        total = 0.0
        for idx in order:
            patch, ann = train_set[idx]
            outs = forward(model, patch)
            gt_p, gt_r = render_targets(ann, cfg, dtype=model.dtype)
            step_loss = loss(outs, gt_p, gt_r)
            step_loss.backward()
            sgd_step(params, lr, cfg.momentum)
            total += step_loss.item()
        entry = {
            "epoch": epoch,
            "train_loss": total / len(train_set),
            "val_loss": _eval_loss(model, val_set) if val_set else None,
        }
        log.entries.append(entry)
        if progress is not None:
            progress(entry)
    return log


def predict(model, patch):
    """Final-stage confidence maps as plain arrays: (plant, row or None)."""
    outs = forward(model, patch)
    plant = outs.plant_maps[-1].data[0, 0]
    row = outs.row_maps[-1].data[0, 0] if outs.row_maps is not None else None
    return plant, row


def gradient_check_sample(model, patch, ann, n_coords=30, seed=0, epsilon=1e-6):
    """Compare reverse-mode parameter gradients of the full training loss
    against central finite differences at randomly sampled coordinates.
    Returns the worst relative error.  Model must be float64."""
    if model.dtype != np.float64:
        raise ValueError("gradient check requires a float64 model")
    gt_p, gt_r = render_targets(ann, model.config, dtype=np.float64)

    def f():
        return loss(forward(model, patch), gt_p, gt_r)

    for p in model.parameters():
        p.value.grad = None
    f().backward()

    params = model.parameters()
    sizes = np.array([p.value.data.size for p in params])
    bounds = np.cumsum(sizes)
    rng = np.random.default_rng(seed)
    flat_ids = rng.choice(bounds[-1], size=min(n_coords, bounds[-1]), replace=False)
    worst = 0.0
    for flat in sorted(int(i) for i in flat_ids):
        pi = int(np.searchsorted(bounds, flat, side="right"))
        idx = flat - (0 if pi == 0 else int(bounds[pi - 1]))
        p = params[pi]
        analytic = float(p.value.grad.flat[idx])
        orig = float(p.value.data.flat[idx])
        p.value.data.flat[idx] = orig + epsilon
        hi = f().item()
        p.value.data.flat[idx] = orig - epsilon
        lo = f().item()
        p.value.data.flat[idx] = orig
        fd = (hi - lo) / (2.0 * epsilon)
        rel = abs(analytic - fd) / max(abs(analytic) + abs(fd), 1e-6)
        worst = max(worst, rel)
    return worst


def gradient_suite():
    """Finite-difference battery: every differentiable tensor op on small
    random float64 inputs, then the end-to-end training loss of a tiny
    model.  Fixed seeds make the suite deterministic.  Returns a list of
    (name, worst_rel_err, tolerance) triples in run order.
    """
    from plantmap.annotations import AnnotationSet
    from plantmap.tensor import grad_check

    rng = np.random.default_rng(20240917)

    def t(*shape):
        return Tensor(rng.uniform(-1.0, 1.0, shape), requires_grad=True)

    def scalar(out):
        return mse_loss(out, Tensor(np.zeros(out.data.shape)))

    results = []

    def run(name, closure, inputs, tol=1e-4):
        results.append((name, float(grad_check(closure, inputs)), tol))

    run("conv2d", lambda x, w, b: scalar(conv2d(x, w, b)), [t(2, 3, 6, 5), t(4, 3, 3, 3), t(4)])
    xr = t(2, 2, 5, 5)
    xr.data[np.abs(xr.data) < 0.05] += 0.1  # keep FD away from the kink
    run("relu", lambda x: scalar(relu(x)), [xr])
    run("sigmoid", lambda x: scalar(sigmoid(x)), [t(2, 2, 5, 5)])
    run("maxpool2", lambda x: scalar(maxpool2(x)), [t(2, 2, 6, 6)])
    run("adaptive_maxpool", lambda x: scalar(adaptive_maxpool(x, 3)), [t(1, 3, 7, 7)])
    run("bilinear_upsample", lambda x: scalar(bilinear_upsample(x, 9, 8)), [t(1, 2, 4, 4)])
    run(
        "concat_channels",
        lambda a, b: scalar(concat_channels([a, b])),
        [t(1, 2, 4, 4), t(1, 3, 4, 4)],
    )
    run("add", lambda a, b: scalar(add(a, b)), [t(2, 3, 4, 4), t(2, 3, 4, 4)])
    run("mse_loss", lambda p, q: mse_loss(p, q), [t(1, 2, 5, 5), t(1, 2, 5, 5)])

    cfg = NetworkConfig(
        stages=2,
        sigma_plant=(1.0, 2.0),
        sigma_row=(0.5, 1.5),
        input_size=(32, 32),
        width="tiny",
        seed=11,
    )
    model = build(cfg, dtype=np.float64)
    srng = np.random.default_rng(5)
    patch = srng.uniform(0.0, 1.0, (32, 32, 3))
    ann = AnnotationSet(points=[(8.0, 9.0), (22.0, 14.0)], polylines=[[(2.0, 28.0), (30.0, 6.0)]])
    results.append(
        ("network_end_to_end", gradient_check_sample(model, patch, ann, n_coords=25, seed=1), 1e-3)
    )
    return results


_MAGIC = b"PLANTMAP"
_FORMAT_VERSION = 1


def save_weights(model, path):
    """Versioned container: magic, format version, length-prefixed config
    text, then every parameter in declaration order as little-endian
    float32 with a shape header."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _FORMAT_VERSION))
        blob = config_to_text(model.config).encode("utf-8")
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for ps in model.params.values():
            arr = np.ascontiguousarray(ps.value.data, dtype="<f4")
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


_STRUCTURAL_FIELDS = ("stages", "width", "row_branch_enabled", "input_size")


def load_weights(path, expect=None):
    """Rebuild the model a weight file describes.  `expect` (a
    NetworkConfig) guards against loading a structurally different model
    by mistake; training hyperparameters are allowed to differ."""
    with open(path, "rb") as fh:
        blob = fh.read()
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(blob):
            raise ValueError(f"weight file truncated while reading {what}")
        piece = blob[pos : pos + n]
        pos += n
        return piece

    if take(8, "magic") != _MAGIC:
        raise ValueError(f"{path}: not a plantmap weight file")
    (version,) = struct.unpack("<I", take(4, "version"))
    if version != _FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported weight format version {version}")
    (cfg_len,) = struct.unpack("<I", take(4, "config length"))
    cfg = config_from_text(take(cfg_len, "config").decode("utf-8"))
    if expect is not None:
        for field in _STRUCTURAL_FIELDS:
            have, want = getattr(cfg, field), getattr(expect, field)
            if have != want:
                raise ValueError(
                    f"{path}: weight file has {field}={have}, expected {want}"
                )
    model = build(cfg)
    for name, ps in model.params.items():
        (ndim,) = struct.unpack("<I", take(4, f"{name} header"))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim, f"{name} shape"))
        if shape != ps.value.shape:
            raise ValueError(
                f"{path}: shape mismatch for {name}: file has {shape}, "
                f"model needs {ps.value.shape}"
            )
        count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        data = np.frombuffer(take(4 * count, f"{name} data"), dtype="<f4")
        ps.value.data[...] = data.reshape(shape)
    if pos != len(blob):
        raise ValueError(f"{path}: trailing data after parameters")
    return model
