"""Kernel backend selection and the shared BLAS convolution path.

Two backends implement the pixel-loop primitives (pooling with argmax
routing, Zhang-Suen thinning subpasses, 4-neighbor peak scan):

  * ``plantmap._ckernels`` - compiled Cython extension
  * ``plantmap.kernels.pure`` - numpy fallback

Selection happens once at import: the compiled module when importable,
else the fallback, overridable with ``PLANTMAP_BACKEND=compiled|pure``.

Convolution deliberately lives here, NOT in the backends: measured on
the target machines, BLAS GEMM sustains 40-200 GFLOP/s where compiled
direct loops reach 5-15 (see benchmarks/bench_kernels.py), so both
backends share one GEMM-based conv. The extension still exports
``conv2d_direct`` so the benchmark and parity tests can document that
comparison.
"""

import os

import numpy as np

from . import pure

_requested = os.environ.get("PLANTMAP_BACKEND", "auto")
if _requested not in ("auto", "compiled", "pure"):
    raise ValueError(f"PLANTMAP_BACKEND must be auto, compiled or pure, not {_requested!r}")

_impl = pure
BACKEND = "pure"
if _requested in ("auto", "compiled"):
    try:
        from plantmap import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        if _requested == "compiled":
            raise

maxpool2_forward = _impl.maxpool2_forward
maxpool2_backward = _impl.maxpool2_backward
adaptive_maxpool_forward = _impl.adaptive_maxpool_forward
adaptive_maxpool_backward = _impl.adaptive_maxpool_backward
zhang_suen_subpass = _impl.zhang_suen_subpass
local_maxima_4 = _impl.local_maxima_4
bilinear_forward = pure.bilinear_forward  # BLAS matmul already; no compiled variant
bilinear_backward = pure.bilinear_backward


def _dilate8(mask):
    """8-neighborhood dilation (includes the pixel itself)."""
    p = np.pad(mask, 1)
    return (
        p[:-2, :-2] | p[:-2, 1:-1] | p[:-2, 2:]
        | p[1:-1, :-2] | p[1:-1, 1:-1] | p[1:-1, 2:]
        | p[2:, :-2] | p[2:, 1:-1] | p[2:, 2:]
    )


def _spare_vanishing(fg, kill):
    """Unmark kills that would erase a whole 8-connected component.

    The parallel delete rule satisfies every condition at once on small
    isolated clusters (a bare 2x2 square is the minimal case), wiping
    them out instead of thinning them. Each component left without
    survivors keeps its scan-order first pixel as an isolated dot.
    """
    surv = fg & ~kill
    if not (kill & ~_dilate8(surv)).any():
        return kill  # every killed pixel touches a survivor
    reach = surv
    while True:
        grown = fg & _dilate8(reach)
        if np.array_equal(grown, reach):
            break
        reach = grown
    doomed = fg & ~reach
    while doomed.any():
        ys, xs = np.nonzero(doomed)
        kill[ys[0], xs[0]] = False
        comp = np.zeros_like(doomed)
        comp[ys[0], xs[0]] = True
        while True:
            grown = doomed & _dilate8(comp)
            if np.array_equal(grown, comp):
                break
            comp = grown
        doomed &= ~comp
    return kill


# clockwise ring around a pixel; 4-neighbors sit at even indices
_RING = ((-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1))
_RING_ADJ = tuple(
    tuple(
        j
        for j in range(8)
        if j != i
        and abs(_RING[i][0] - _RING[j][0]) <= 1
        and abs(_RING[i][1] - _RING[j][1]) <= 1
    )
    for i in range(8)
)


def _simple(p, y, x):
    """Whether deleting padded-raster pixel (y, x) preserves topology.

    True when the foreground ring is a single 8-connected piece (deletion
    cannot split anything) and some 4-neighbor is background (deletion
    cannot punch a hole); together these are the classic simple-point
    conditions for 8-connected foreground over 4-connected background.
    """
    ring = [p[y + dy, x + dx] != 0 for dy, dx in _RING]
    if ring[0] and ring[2] and ring[4] and ring[6]:
        return False
    nodes = [i for i in range(8) if ring[i]]
    if not nodes:
        return False
    seen = {nodes[0]}
    stack = [nodes[0]]
    while stack:
        for j in _RING_ADJ[stack.pop()]:
            if ring[j] and j not in seen:
                seen.add(j)
                stack.append(j)
    return len(seen) == len(nodes)


def _collapse_blocks(img):
    """Sequentially delete simple pixels out of 2x2 foreground blocks.

    Where two arcs cross, every pixel of the junction has two 0->1
    transitions around its ring, so the parallel delete rule keeps all of
    them and a 2x2 block survives thinning.  Block pixels that are simple
    points get removed one at a time; a block whose every pixel fails the
    test (four diagonal arms meeting squarely) stays, connectivity
    outranking thinness.  Returns True if anything was deleted.
    """
    p = np.pad(img, 1)
    removed = False
    progress = True
    while progress:
        progress = False
        inner = p[1:-1, 1:-1]
        blocks = inner[:-1, :-1] & inner[1:, :-1] & inner[:-1, 1:] & inner[1:, 1:]
        for by, bx in np.argwhere(blocks):
            corners = (
                (by + 1, bx + 1),
                (by + 1, bx + 2),
                (by + 2, bx + 1),
                (by + 2, bx + 2),
            )
            if not all(p[y, x] for y, x in corners):
                continue  # an earlier deletion already broke this block
            for y, x in corners:
                if _simple(p, y, x):
                    p[y, x] = 0
                    progress = removed = True
                    break
    if removed:
        img[...] = p[1:-1, 1:-1]
    return removed


def zhang_suen(img):
    """Two-subiteration thinning of a 0/1 uint8 raster, component-safe.

    Runs the backend's subpass scan until a full iteration deletes
    nothing, guarding each subpass so no component disappears outright:
    thinning a blob must leave its centerline (or at least a dot), never
    empty pixels.  Once the subpasses stabilize, 2x2 blocks left at arc
    crossings are collapsed pixel by pixel, and the whole cycle repeats
    until nothing moves, so the result is a fixpoint of the full
    procedure (skeletonizing a skeleton changes nothing).
    """
    img = np.asarray(img, dtype=np.uint8).copy()
    while True:
        changed = False
        for sub in (0, 1):
            kill = np.asarray(zhang_suen_subpass(img, sub), dtype=bool)
            if kill.any():
                kill = _spare_vanishing(img.astype(bool), kill)
            if kill.any():
                img[kill] = 0
                changed = True
        if not changed and not _collapse_blocks(img):
            return img


def to_nhwc(x):
    return np.ascontiguousarray(x.transpose(0, 2, 3, 1))


def conv2d_forward_nhwc(x, w, b):
    """Same-padding stride-1 convolution via per-offset batched GEMM.

    x: (N, H, W, Ci) contiguous; w: (kh, kw, Ci, Co); b: (Co,).
    Returns (N, H, W, Co). matmul broadcasts over (N, rows), so the
    W-cropped slices feed BLAS directly: no im2col buffer and no copy
    of the input per offset.
    """
    n, h, wd, ci = x.shape
    kh, kw, _, co = w.shape
    ph, pw = kh // 2, kw // 2
    out = np.empty((n, h, wd, co), dtype=x.dtype)
    out[:] = b
    for dy in range(kh):
        oy0, oy1 = max(0, ph - dy), min(h, h + ph - dy)
        if oy0 >= oy1:
            continue
        iy0 = oy0 + dy - ph
        for dx in range(kw):
            ox0, ox1 = max(0, pw - dx), min(wd, wd + pw - dx)
            if ox0 >= ox1:
                continue
            ix0 = ox0 + dx - pw
            sub = x[:, iy0 : iy0 + oy1 - oy0, ix0 : ix0 + ox1 - ox0, :]
            out[:, oy0:oy1, ox0:ox1, :] += sub @ w[dy, dx]
    return out


def conv2d_backward_input_nhwc(dy, w):
    """Gradient w.r.t. input: correlation of dy with the transposed kernel."""
    n, h, wd, co = dy.shape
    kh, kw, ci, _ = w.shape
    ph, pw = kh // 2, kw // 2
    dx = np.zeros((n, h, wd, ci), dtype=dy.dtype)
    wt = np.ascontiguousarray(w.transpose(0, 1, 3, 2))
    for dyy in range(kh):
        oy0, oy1 = max(0, ph - dyy), min(h, h + ph - dyy)
        if oy0 >= oy1:
            continue
        iy0 = oy0 + dyy - ph
        for dxx in range(kw):
            ox0, ox1 = max(0, pw - dxx), min(wd, wd + pw - dxx)
            if ox0 >= ox1:
                continue
            ix0 = ox0 + dxx - pw
            sub = dy[:, oy0:oy1, ox0:ox1, :]
            dx[:, iy0 : iy0 + oy1 - oy0, ix0 : ix0 + ox1 - ox0, :] += sub @ wt[dyy, dxx]
    return dx


def conv2d_backward_weights_nhwc(x, dy, kh, kw):
    """Gradients w.r.t. weights and bias: per offset, batched GEMMs over
    (N, rows) then a reduction, so the W-cropped slices are never copied."""
    n, h, wd, ci = x.shape
    co = dy.shape[3]
    ph, pw = kh // 2, kw // 2
    dw = np.zeros((kh, kw, ci, co), dtype=x.dtype)
    for dyy in range(kh):
        oy0, oy1 = max(0, ph - dyy), min(h, h + ph - dyy)
        if oy0 >= oy1:
            continue
        iy0 = oy0 + dyy - ph
        for dxx in range(kw):
            ox0, ox1 = max(0, pw - dxx), min(wd, wd + pw - dxx)
            if ox0 >= ox1:
                continue
            ix0 = ox0 + dxx - pw
            xs = x[:, iy0 : iy0 + oy1 - oy0, ix0 : ix0 + ox1 - ox0, :]
            ds = dy[:, oy0:oy1, ox0:ox1, :]
            dw[dyy, dxx] = np.matmul(xs.transpose(0, 1, 3, 2), ds).sum(axis=(0, 1))
    db = dy.sum(axis=(0, 1, 2))
    return dw, db
