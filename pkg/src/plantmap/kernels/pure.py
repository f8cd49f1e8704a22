"""Pure-numpy implementations of the pixel-loop kernel primitives.

This is the fallback backend; `plantmap._ckernels` provides the same
functions compiled. Dispatch happens in `plantmap.kernels`.
"""

import numpy as np


def maxpool2_forward(x):
    """2x2 max pooling with argmax routing.

    x: (N, C, H, W) with even H, W. Returns (y, idx) where idx holds the
    flat plane index (y*W + x) of the winning cell per window; ties break
    to the first cell in row-major scan order.
    """
    n, c, h, w = x.shape
    ho, wo = h // 2, w // 2
    win = x.reshape(n, c, ho, 2, wo, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, 4)
    arg = win.argmax(axis=-1)  # argmax returns the first maximum: scan-order tie-break
    y = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    oy, ox = np.meshgrid(np.arange(ho), np.arange(wo), indexing="ij")
    idx = (2 * oy + arg // 2) * w + (2 * ox + arg % 2)
    return y, idx.astype(np.int64)


def maxpool2_backward(dy, idx, h, w):
    n, c = dy.shape[:2]
    dx = np.zeros((n, c, h, w), dtype=dy.dtype)
    plane = (np.arange(n * c) * (h * w)).reshape(n, c, 1, 1)
    # window winners are unique, so plain fancy assignment accumulates correctly
    dx.reshape(-1)[(idx + plane).reshape(-1)] = dy.reshape(-1)
    return dx


def _cell_edges(extent, out_n):
    return [(extent * i) // out_n for i in range(out_n + 1)]


def adaptive_maxpool_forward(x, out_n):
    """Grid max pooling over floor-partitioned cells, with argmax routing."""
    n, c, h, w = x.shape
    y = np.empty((n, c, out_n, out_n), dtype=x.dtype)
    idx = np.empty((n, c, out_n, out_n), dtype=np.int64)
    ye = _cell_edges(h, out_n)
    xe = _cell_edges(w, out_n)
    for i in range(out_n):
        for j in range(out_n):
            sub = x[:, :, ye[i] : ye[i + 1], xe[j] : xe[j + 1]]
            cw = xe[j + 1] - xe[j]
            a = sub.reshape(n, c, -1).argmax(axis=-1)
            y[:, :, i, j] = np.take_along_axis(sub.reshape(n, c, -1), a[..., None], -1)[..., 0]
            idx[:, :, i, j] = (ye[i] + a // cw) * w + (xe[j] + a % cw)
    return y, idx


def adaptive_maxpool_backward(dy, idx, h, w):
    n, c = dy.shape[:2]
    dx = np.zeros((n, c, h, w), dtype=dy.dtype)
    plane = (np.arange(n * c) * (h * w)).reshape(n, c, 1, 1)
    flat = (idx + plane).reshape(-1)
    # cells are disjoint but several output cells of one plane never share a
    # source pixel, so assignment would suffice; add.at keeps this robust if
    # a degenerate grid ever aliases
    np.add.at(dx.reshape(-1), flat, dy.reshape(-1))
    return dx


def _interp_matrix(out_n, in_n, dtype):
    """Align-corners interpolation matrix U (out_n, in_n): y = U @ x."""
    u = np.zeros((out_n, in_n), dtype=np.float64)
    if in_n == 1:
        u[:, 0] = 1.0
        return u.astype(dtype)
    if out_n == 1:
        u[0, 0] = 1.0
        return u.astype(dtype)
    scale = (in_n - 1) / (out_n - 1)
    for o in range(out_n):
        s = o * scale
        i0 = min(int(np.floor(s)), in_n - 2)
        f = s - i0
        u[o, i0] = 1.0 - f
        u[o, i0 + 1] += f
    return u.astype(dtype)


def bilinear_forward(x, out_h, out_w):
    n, c, h, w = x.shape
    uh = _interp_matrix(out_h, h, x.dtype)
    uw = _interp_matrix(out_w, w, x.dtype)
    y = np.matmul(uh, x.reshape(n * c, h, w))
    y = np.matmul(y, uw.T)
    return y.reshape(n, c, out_h, out_w)


def bilinear_backward(dy, h, w):
    n, c, oh, ow = dy.shape
    uh = _interp_matrix(oh, h, dy.dtype)
    uw = _interp_matrix(ow, w, dy.dtype)
    dx = np.matmul(uh.T, dy.reshape(n * c, oh, ow))
    dx = np.matmul(dx, uw)
    return dx.reshape(n, c, h, w)


def zhang_suen_subpass(img, sub):
    """Kill mask for one Zhang-Suen thinning subpass.

    img: uint8 0/1 array. A pixel is marked when it has 2 <= B <= 6
    neighbors, exactly one 0->1 transition around the 8-neighborhood,
    and the subpass-specific direction products are zero. The iteration
    loop (and the guard against deleting whole components) lives in
    `plantmap.kernels.zhang_suen`.
    """
    p = np.pad(img, 1)
    p2 = p[:-2, 1:-1]  # N
    p3 = p[:-2, 2:]    # NE
    p4 = p[1:-1, 2:]   # E
    p5 = p[2:, 2:]     # SE
    p6 = p[2:, 1:-1]   # S
    p7 = p[2:, :-2]    # SW
    p8 = p[1:-1, :-2]  # W
    p9 = p[:-2, :-2]   # NW
    ring = np.stack([p2, p3, p4, p5, p6, p7, p8, p9, p2])
    b = ring[:8].sum(axis=0, dtype=np.int32)
    a = ((ring[:-1] == 0) & (ring[1:] == 1)).sum(axis=0, dtype=np.int32)
    if sub == 0:
        prod_ok = (p2 * p4 * p6 == 0) & (p4 * p6 * p8 == 0)
    else:
        prod_ok = (p2 * p4 * p8 == 0) & (p2 * p6 * p8 == 0)
    return (img == 1) & (b >= 2) & (b <= 6) & (a == 1) & prod_ok


def local_maxima_4(cmap, tau):
    """Strict 4-neighbor local maxima above tau; boundary pixels compare
    only in-bounds neighbors. Returns (ys, xs) in scan order."""
    p = np.pad(cmap.astype(np.float64), 1, constant_values=-np.inf)
    c = p[1:-1, 1:-1]
    mask = (
        (c > tau)
        & (c > p[:-2, 1:-1])
        & (c > p[2:, 1:-1])
        & (c > p[1:-1, :-2])
        & (c > p[1:-1, 2:])
    )
    ys, xs = np.nonzero(mask)
    return ys.astype(np.int64), xs.astype(np.int64)
