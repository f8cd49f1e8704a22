"""Timing comparison of the compiled and pure kernel backends.

Run:  python benchmarks/bench_kernels.py [--repeat N]

Covers the pixel-loop kernels (pooling, thinning, peak scan) where the
compiled extension earns its keep, plus the convolution, where the
shift-GEMM BLAS formulation is shared by both backends and the direct
compiled loop exists only as a slower cross-check.
"""

import argparse
import time

import numpy as np

from plantmap import kernels
from plantmap.kernels import pure

try:
    from plantmap import _ckernels
except ImportError:
    _ckernels = None


def clock(fn, repeat):
    fn()  # warm-up
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best * 1e3  # ms


def row(label, compiled_ms, pure_ms):
    ratio = pure_ms / compiled_ms if compiled_ms else float("nan")
    print(f"{label:<44} {compiled_ms:>9.3f} {pure_ms:>9.3f} {ratio:>7.1f}x")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5, help="timed repetitions (best-of)")
    args = ap.parse_args()
    rng = np.random.default_rng(0)

    print(f"active backend: {kernels.BACKEND}")
    if _ckernels is None:
        print("compiled extension not built; nothing to compare")
        return
    print(f"{'kernel':<44} {'compiled':>9} {'pure':>9} {'speedup':>8}")

    x = np.ascontiguousarray(rng.standard_normal((1, 32, 256, 256)).astype(np.float32))
    row(
        "maxpool2 fwd (1,32,256,256)",
        clock(lambda: _ckernels.maxpool2_forward(x), args.repeat),
        clock(lambda: pure.maxpool2_forward(x), args.repeat),
    )
    _, idx = _ckernels.maxpool2_forward(x)
    dy = np.ascontiguousarray(rng.standard_normal((1, 32, 128, 128)).astype(np.float32))
    row(
        "maxpool2 bwd (1,32,256,256)",
        clock(lambda: _ckernels.maxpool2_backward(dy, idx, 256, 256), args.repeat),
        clock(lambda: pure.maxpool2_backward(dy, idx, 256, 256), args.repeat),
    )

    f = np.ascontiguousarray(rng.standard_normal((1, 32, 128, 128)).astype(np.float32))
    for lvl in (1, 6):
        row(
            f"adaptive_maxpool fwd level {lvl} (1,32,128,128)",
            clock(lambda: _ckernels.adaptive_maxpool_forward(f, lvl), args.repeat),
            clock(lambda: pure.adaptive_maxpool_forward(f, lvl), args.repeat),
        )

    img = np.zeros((256, 256), np.uint8)
    yy, xx = np.mgrid[:256, :256]
    for cy, cx, r in rng.integers(12, 244, (40, 3)):
        img[(yy - cy) ** 2 + (xx - cx) ** 2 <= (r % 9 + 3) ** 2] = 1
    row(
        "zhang_suen_subpass (256x256, 40 blobs)",
        clock(lambda: _ckernels.zhang_suen_subpass(img, 0), args.repeat),
        clock(lambda: pure.zhang_suen_subpass(img, 0), args.repeat),
    )

    cmap = rng.random((128, 128)).astype(np.float32)
    row(
        "local_maxima_4 (128x128)",
        clock(lambda: _ckernels.local_maxima_4(cmap, 0.35), args.repeat),
        clock(lambda: pure.local_maxima_4(cmap, 0.35), args.repeat),
    )

    # convolution: the shared BLAS shift-GEMM vs the direct compiled loop
    print()
    print(f"{'convolution (both backends use GEMM)':<44} {'gemm':>9} {'direct':>9} {'speedup':>8}")
    for ci, co, k, hw, label in (
        (66, 8, 7, 128, "refinement conv1 66->8@7x7 on 128^2"),
        (8, 8, 7, 128, "refinement trunk 8->8@7x7 on 128^2"),
        (3, 8, 3, 256, "extractor conv1 3->8@3x3 on 256^2"),
    ):
        xc = np.ascontiguousarray(rng.standard_normal((1, hw, hw, ci)).astype(np.float32))
        wc = np.ascontiguousarray(rng.standard_normal((k, k, ci, co)).astype(np.float32))
        bc = np.zeros(co, np.float32)
        row(
            label,
            clock(lambda: kernels.conv2d_forward_nhwc(xc, wc, bc), args.repeat),
            clock(lambda: _ckernels.conv2d_direct(xc, wc, bc), args.repeat),
        )
    print("\n(ratios > 1 mean the left column is faster)")


if __name__ == "__main__":
    main()
