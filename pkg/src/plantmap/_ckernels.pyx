# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled pixel-loop kernels. Same API as plantmap.kernels.pure."""

import numpy as np

cimport numpy as cnp

ctypedef fused real:
    cnp.float32_t
    cnp.float64_t


def maxpool2_forward(real[:, :, :, ::1] x):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t ho = h // 2, wo = w // 2
    if real is cnp.float32_t:
        y_np = np.empty((n, c, ho, wo), dtype=np.float32)
    else:
        y_np = np.empty((n, c, ho, wo), dtype=np.float64)
    idx_np = np.empty((n, c, ho, wo), dtype=np.int64)
    cdef real[:, :, :, ::1] y = y_np
    cdef cnp.int64_t[:, :, :, ::1] idx = idx_np
    cdef Py_ssize_t ni, ci, oy, ox, dy, dx, by, bx, my, mx
    cdef real best, v
    for ni in range(n):
        for ci in range(c):
            for oy in range(ho):
                by = 2 * oy
                for ox in range(wo):
                    bx = 2 * ox
                    best = x[ni, ci, by, bx]
                    my = by
                    mx = bx
                    # scan-order tie-break: strict > keeps the first cell
                    for dy in range(2):
                        for dx in range(2):
                            v = x[ni, ci, by + dy, bx + dx]
                            if v > best:
                                best = v
                                my = by + dy
                                mx = bx + dx
                    y[ni, ci, oy, ox] = best
                    idx[ni, ci, oy, ox] = my * w + mx
    return y_np, idx_np


def maxpool2_backward(real[:, :, :, ::1] dy, cnp.int64_t[:, :, :, ::1] idx,
                      Py_ssize_t h, Py_ssize_t w):
    cdef Py_ssize_t n = dy.shape[0], c = dy.shape[1], ho = dy.shape[2], wo = dy.shape[3]
    if real is cnp.float32_t:
        dx_np = np.zeros((n, c, h, w), dtype=np.float32)
    else:
        dx_np = np.zeros((n, c, h, w), dtype=np.float64)
    cdef real[:, :, :, ::1] dx = dx_np
    cdef Py_ssize_t ni, ci, oy, ox
    cdef cnp.int64_t f
    for ni in range(n):
        for ci in range(c):
            for oy in range(ho):
                for ox in range(wo):
                    f = idx[ni, ci, oy, ox]
                    dx[ni, ci, f // w, f % w] += dy[ni, ci, oy, ox]
    return dx_np


def adaptive_maxpool_forward(real[:, :, :, ::1] x, Py_ssize_t out_n):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    if real is cnp.float32_t:
        y_np = np.empty((n, c, out_n, out_n), dtype=np.float32)
    else:
        y_np = np.empty((n, c, out_n, out_n), dtype=np.float64)
    idx_np = np.empty((n, c, out_n, out_n), dtype=np.int64)
    cdef real[:, :, :, ::1] y = y_np
    cdef cnp.int64_t[:, :, :, ::1] idx = idx_np
    cdef Py_ssize_t ni, ci, i, j, yy, xx, y0, y1, x0, x1, my, mx
    cdef real best, v
    for ni in range(n):
        for ci in range(c):
            for i in range(out_n):
                y0 = (h * i) // out_n
                y1 = (h * (i + 1)) // out_n
                for j in range(out_n):
                    x0 = (w * j) // out_n
                    x1 = (w * (j + 1)) // out_n
                    best = x[ni, ci, y0, x0]
                    my = y0
                    mx = x0
                    for yy in range(y0, y1):
                        for xx in range(x0, x1):
                            v = x[ni, ci, yy, xx]
                            if v > best:
                                best = v
                                my = yy
                                mx = xx
                    y[ni, ci, i, j] = best
                    idx[ni, ci, i, j] = my * w + mx
    return y_np, idx_np


def adaptive_maxpool_backward(real[:, :, :, ::1] dy, cnp.int64_t[:, :, :, ::1] idx,
                              Py_ssize_t h, Py_ssize_t w):
    cdef Py_ssize_t n = dy.shape[0], c = dy.shape[1], no = dy.shape[2]
    if real is cnp.float32_t:
        dx_np = np.zeros((n, c, h, w), dtype=np.float32)
    else:
        dx_np = np.zeros((n, c, h, w), dtype=np.float64)
    cdef real[:, :, :, ::1] dx = dx_np
    cdef Py_ssize_t ni, ci, i, j
    cdef cnp.int64_t f
    for ni in range(n):
        for ci in range(c):
            for i in range(no):
                for j in range(no):
                    f = idx[ni, ci, i, j]
                    dx[ni, ci, f // w, f % w] += dy[ni, ci, i, j]
    return dx_np


def zhang_suen_subpass(img, Py_ssize_t sub):
    """Kill mask for one Zhang-Suen thinning subpass on a 0/1 uint8 raster.

    Same marking rules as plantmap.kernels.pure.zhang_suen_subpass; the
    iteration loop and component guard are shared in plantmap.kernels.
    """
    cdef cnp.uint8_t[:, ::1] p = np.pad(np.asarray(img, dtype=np.uint8), 1)
    cdef Py_ssize_t h = p.shape[0] - 2, w = p.shape[1] - 2
    kill_np = np.zeros((h, w), dtype=np.uint8)
    cdef cnp.uint8_t[:, ::1] kill = kill_np
    cdef Py_ssize_t y, x
    cdef int b, a
    cdef int n0, n1, n2, n3, n4, n5, n6, n7
    for y in range(1, h + 1):
        for x in range(1, w + 1):
            if p[y, x] == 0:
                continue
            n0 = p[y - 1, x]      # P2 N
            n1 = p[y - 1, x + 1]  # P3 NE
            n2 = p[y, x + 1]      # P4 E
            n3 = p[y + 1, x + 1]  # P5 SE
            n4 = p[y + 1, x]      # P6 S
            n5 = p[y + 1, x - 1]  # P7 SW
            n6 = p[y, x - 1]      # P8 W
            n7 = p[y - 1, x - 1]  # P9 NW
            b = n0 + n1 + n2 + n3 + n4 + n5 + n6 + n7
            if b < 2 or b > 6:
                continue
            a = 0
            if n0 == 0 and n1 == 1: a += 1
            if n1 == 0 and n2 == 1: a += 1
            if n2 == 0 and n3 == 1: a += 1
            if n3 == 0 and n4 == 1: a += 1
            if n4 == 0 and n5 == 1: a += 1
            if n5 == 0 and n6 == 1: a += 1
            if n6 == 0 and n7 == 1: a += 1
            if n7 == 0 and n0 == 1: a += 1
            if a != 1:
                continue
            if sub == 0:
                if n0 * n2 * n4 != 0 or n2 * n4 * n6 != 0:
                    continue
            else:
                if n0 * n2 * n6 != 0 or n0 * n4 * n6 != 0:
                    continue
            kill[y - 1, x - 1] = 1
    return kill_np.view(bool)


def local_maxima_4(real[:, ::1] cmap, double tau):
    """Strict 4-neighbor maxima above tau; borders compare in-bounds only."""
    cdef Py_ssize_t h = cmap.shape[0], w = cmap.shape[1]
    ys_np = np.empty(h * w, dtype=np.int64)
    xs_np = np.empty(h * w, dtype=np.int64)
    cdef cnp.int64_t[::1] ys = ys_np
    cdef cnp.int64_t[::1] xs = xs_np
    cdef Py_ssize_t y, x, n = 0
    cdef real v
    for y in range(h):
        for x in range(w):
            v = cmap[y, x]
            if v <= tau:
                continue
            if y > 0 and cmap[y - 1, x] >= v:
                continue
            if y < h - 1 and cmap[y + 1, x] >= v:
                continue
            if x > 0 and cmap[y, x - 1] >= v:
                continue
            if x < w - 1 and cmap[y, x + 1] >= v:
                continue
            ys[n] = y
            xs[n] = x
            n += 1
    return ys_np[:n].copy(), xs_np[:n].copy()


def conv2d_direct(real[:, :, :, ::1] x, real[:, :, :, ::1] w, real[::1] b):
    """Direct same-padding NHWC convolution.

    Kept for the kernel benchmark and as an independent cross-check of
    the GEMM conv; measured slower than BLAS on every tested shape, so
    the training path never calls it.
    """
    cdef Py_ssize_t n = x.shape[0], h = x.shape[1], wd = x.shape[2], ci = x.shape[3]
    cdef Py_ssize_t kh = w.shape[0], kw = w.shape[1], co = w.shape[3]
    cdef Py_ssize_t ph = kh // 2, pw = kw // 2
    if real is cnp.float32_t:
        out_np = np.empty((n, h, wd, co), dtype=np.float32)
    else:
        out_np = np.empty((n, h, wd, co), dtype=np.float64)
    cdef real[:, :, :, ::1] out = out_np
    cdef Py_ssize_t ni, y, xx, dy, dx, ic, oc, iy, ix
    cdef real v
    for ni in range(n):
        for y in range(h):
            for xx in range(wd):
                for oc in range(co):
                    out[ni, y, xx, oc] = b[oc]
                for dy in range(kh):
                    iy = y + dy - ph
                    if iy < 0 or iy >= h:
                        continue
                    for dx in range(kw):
                        ix = xx + dx - pw
                        if ix < 0 or ix >= wd:
                            continue
                        for ic in range(ci):
                            v = x[ni, iy, ix, ic]
                            for oc in range(co):
                                out[ni, y, xx, oc] += v * w[dy, dx, ic, oc]
    return out_np
