"""Turn confidence maps into detections: peak picking for plants,
thinning + path tracing + simplification for plantation-rows."""

from dataclasses import dataclass

import numpy as np

from plantmap import kernels

_OFFSETS8 = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))


@dataclass(frozen=True)
class PlantDetection:
    x: float
    y: float
    score: float


@dataclass(frozen=True)
class RowDetection:
    polyline: tuple  # ordered (x, y) vertices
    support: int  # skeleton pixels backing the path


def find_peaks(cmap, tau=0.35, min_dist=1.0):
    """Strict 4-neighbor local maxima above tau, then greedy suppression:
    visiting peaks in descending score, drop any strictly closer than
    min_dist to an already kept peak."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0,1], got {tau}")
    m = np.ascontiguousarray(cmap)
    if m.dtype not in (np.float32, np.float64):
        m = m.astype(np.float64)
    ys, xs = kernels.local_maxima_4(m, float(tau))
    order = sorted(range(len(ys)), key=lambda i: (-m[ys[i], xs[i]], ys[i], xs[i]))
    kept = []
    md2 = float(min_dist) ** 2
    for i in order:
        y, x = int(ys[i]), int(xs[i])
        if all((y - ky) ** 2 + (x - kx) ** 2 >= md2 for ky, kx in kept):
            kept.append((y, x))
    kept.sort()
    return [PlantDetection(float(x), float(y), float(m[y, x])) for y, x in kept]


def binarize(cmap, tau):
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0,1], got {tau}")
    return np.asarray(cmap) > tau


def skeletonize(binary):
    """Zhang-Suen two-subiteration thinning; output is a subset of the
    input and keeps every 8-connected component (small clusters reduce
    to a dot rather than vanishing)."""
    return kernels.zhang_suen(np.asarray(binary, dtype=np.uint8)).astype(bool)


def _is_thin(mask):
    return not (mask[:-1, :-1] & mask[1:, :-1] & mask[:-1, 1:] & mask[1:, 1:]).any()


def _douglas_peucker(points, epsilon):
    """Classic recursive simplification, iterative stack form."""
    n = len(points)
    keep = np.zeros(n, dtype=bool)
    keep[0] = keep[-1] = True
    stack = [(0, n - 1)]
    pts = np.asarray(points, dtype=np.float64)
    while stack:
        lo, hi = stack.pop()
        if hi - lo < 2:
            continue
        a, b = pts[lo], pts[hi]
        chord = b - a
        seg = pts[lo + 1 : hi] - a
        len2 = float(chord @ chord)
        if len2 == 0.0:
            d = np.sqrt((seg**2).sum(axis=1))
        else:
            d = np.abs(chord[0] * seg[:, 1] - chord[1] * seg[:, 0]) / np.sqrt(len2)
        i = int(np.argmax(d))
        if d[i] > epsilon:
            keep[lo + 1 + i] = True
            stack.append((lo, lo + 1 + i))
            stack.append((lo + 1 + i, hi))
    return [points[i] for i in range(n) if keep[i]]


def trace_polylines(skeleton, epsilon=1.5, min_support=10):
    """Vectorize a thinned raster into polylines.

    Builds the 8-adjacency graph (dropping diagonal edges that shortcut
    an existing orthogonal neighbor), discards components smaller than
    min_support, walks maximal paths split at junction pixels (degree
    >= 3), and Douglas-Peucker-simplifies each with tolerance epsilon.
    """
    skel = np.asarray(skeleton, dtype=bool)
    if not _is_thin(skel):
        raise ValueError("input is not thin (contains a 2x2 foreground block); skeletonize first")
    pts = [(int(y), int(x)) for y, x in np.argwhere(skel)]
    pset = set(pts)

    adj = {}
    for y, x in pts:
        nb = []
        for dy, dx in _OFFSETS8:
            q = (y + dy, x + dx)
            if q not in pset:
                continue
            if dy and dx and ((y, x + dx) in pset or (y + dy, x) in pset):
                continue  # diagonal shortcut next to an orthogonal path
            nb.append(q)
        adj[(y, x)] = nb

    # component sizes for the support filter
    comp_of = {}
    sizes = []
    for p in pts:
        if p in comp_of:
            continue
        cid = len(sizes)
        stack = [p]
        comp_of[p] = cid
        count = 0
        while stack:
            cur = stack.pop()
            count += 1
            for q in adj[cur]:
                if q not in comp_of:
                    comp_of[q] = cid
                    stack.append(q)
        sizes.append(count)

    def alive(p):
        return sizes[comp_of[p]] >= min_support

    deg = {p: len(adj[p]) for p in pts}
    seen = set()

    def take(p, q):
        k = (p, q) if p <= q else (q, p)
        if k in seen:
            return False
        seen.add(k)
        return True

    paths = []
    for p in sorted(pts):
        if deg[p] == 2 or not alive(p):
            continue
        for q in sorted(adj[p]):
            if not take(p, q):
                continue
            path = [p, q]
            prev, cur = p, q
            while deg[cur] == 2:
                a, b = adj[cur]
                nxt = b if a == prev else a
                if not take(cur, nxt):
                    break
                path.append(nxt)
                prev, cur = cur, nxt
            paths.append(path)

    # anything left is a pure cycle
    for p in sorted(pts):
        if deg[p] != 2 or not alive(p):
            continue
        start = None
        for q in sorted(adj[p]):
            if take(p, q):
                start = q
                break
        if start is None:
            continue
        path = [p, start]
        prev, cur = p, start
        while cur != p:
            a, b = adj[cur]
            nxt = b if a == prev else a
            take(cur, nxt)
            path.append(nxt)
            prev, cur = cur, nxt
        paths.append(path)

    rows = []
    for path in paths:
        if len(path) < 2:
            continue
        closed = path[0] == path[-1]
        support = len(path) - 1 if closed else len(path)
        poly = [(float(x), float(y)) for y, x in path]
        simp = _douglas_peucker(poly, epsilon)
        rows.append(RowDetection(tuple(simp), support))
    return rows
