"""Ground-truth confidence maps: per-stage sigma schedules and Gaussian
rendering of point and polyline annotations.

Map pixel (row r, col c) samples the plane at (x=c, y=r). Kernels from
multiple annotations combine by pointwise maximum, keeping values in
[0,1]; support is truncated at 4*sigma (dropped mass < 3.4e-4).
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SigmaSchedule:
    stages: int
    sigma_max: float
    sigma_min: float
    values: list


def sigma_schedule(stages, sigma_min, sigma_max):
    """Arithmetic progression from sigma_max (stage 1) down to sigma_min."""
    if stages < 2:
        raise ValueError(f"need at least 2 stages, got {stages}")
    if sigma_min <= 0:
        raise ValueError(f"sigma_min must be positive, got {sigma_min}")
    if sigma_min > sigma_max:
        raise ValueError(f"sigma_min {sigma_min} exceeds sigma_max {sigma_max}")
    n = stages - 1
    # single-rounding lerp so e.g. (6, 1, 3) yields exactly [3.0, 2.6, ...]
    values = [(sigma_max * (n - t) + sigma_min * t) / n for t in range(stages)]
    return SigmaSchedule(stages, float(sigma_max), float(sigma_min), values)


def render_point_map(points, sigma, h, w):
    """max over points of exp(-|p - a|^2 / (2 sigma^2)), zero beyond 4 sigma."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    out = np.zeros((h, w), dtype=np.float64)
    r = 4.0 * sigma
    inv = 1.0 / (2.0 * sigma * sigma)
    for x, y in points:
        y0, y1 = max(0, int(np.ceil(y - r))), min(h - 1, int(np.floor(y + r)))
        x0, x1 = max(0, int(np.ceil(x - r))), min(w - 1, int(np.floor(x + r)))
        if y0 > y1 or x0 > x1:
            continue
        ys = np.arange(y0, y1 + 1, dtype=np.float64)
        xs = np.arange(x0, x1 + 1, dtype=np.float64)
        d2 = (ys[:, None] - y) ** 2 + (xs[None, :] - x) ** 2
        g = np.exp(-d2 * inv)
        g[d2 > r * r] = 0.0
        sub = out[y0 : y1 + 1, x0 : x1 + 1]
        np.maximum(sub, g, out=sub)
    return out


def _segment_dist2(px, py, ax, ay, bx, by):
    """Squared distance from grid points to segment ab (arrays px, py)."""
    dx, dy = bx - ax, by - ay
    len2 = dx * dx + dy * dy
    if len2 == 0.0:
        return (px - ax) ** 2 + (py - ay) ** 2
    t = ((px - ax) * dx + (py - ay) * dy) / len2
    np.clip(t, 0.0, 1.0, out=t)
    cx = ax + t * dx
    cy = ay + t * dy
    return (px - cx) ** 2 + (py - cy) ** 2


def render_line_map(polylines, sigma, h, w):
    """max over polylines of exp(-d^2 / (2 sigma^2)) with d the Euclidean
    distance to the nearest segment; zero beyond 4 sigma."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    out = np.zeros((h, w), dtype=np.float64)
    r = 4.0 * sigma
    inv = 1.0 / (2.0 * sigma * sigma)
    for poly in polylines:
        if len(poly) < 2:
            raise ValueError(f"polyline needs >= 2 vertices, got {len(poly)}")
        for (ax, ay), (bx, by) in zip(poly[:-1], poly[1:]):
            y0 = max(0, int(np.ceil(min(ay, by) - r)))
            y1 = min(h - 1, int(np.floor(max(ay, by) + r)))
            x0 = max(0, int(np.ceil(min(ax, bx) - r)))
            x1 = min(w - 1, int(np.floor(max(ax, bx) + r)))
            if y0 > y1 or x0 > x1:
                continue
            ys = np.arange(y0, y1 + 1, dtype=np.float64)
            xs = np.arange(x0, x1 + 1, dtype=np.float64)
            py, px = np.meshgrid(ys, xs, indexing="ij")
            d2 = _segment_dist2(px, py, float(ax), float(ay), float(bx), float(by))
            g = np.exp(-d2 * inv)
            g[d2 > r * r] = 0.0
            sub = out[y0 : y1 + 1, x0 : x1 + 1]
            np.maximum(sub, g, out=sub)
    return out
