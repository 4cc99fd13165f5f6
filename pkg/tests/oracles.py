"""Independent reference routes used to cross-check the library.

Everything in this file is written directly from the underlying math and
deliberately avoids calling the code under test.
"""

from __future__ import annotations

import math

import numpy as np


def segment_hits_disk(p0, p1, center, radius) -> bool:
    """Closed segment vs closed disk, via the intersection quadratic."""
    p0 = np.asarray(p0, dtype=float)
    d = np.asarray(p1, dtype=float) - p0
    f = p0 - np.asarray(center, dtype=float)
    a = float(d @ d)
    b = 2.0 * float(f @ d)
    c = float(f @ f) - radius * radius
    if a == 0.0:
        return c <= 0.0
    disc = b * b - 4.0 * a * c
    if disc < 0.0:
        return False
    sq = math.sqrt(disc)
    t_lo = (-b - sq) / (2.0 * a)
    t_hi = (-b + sq) / (2.0 * a)
    return t_lo <= 1.0 and t_hi >= 0.0


def ray_cast_occluded(robot_xy, disk_center, disk_radius, point) -> bool:
    """A point is in shadow iff the sight segment to it crosses the disk."""
    return segment_hits_disk(robot_xy, point, disk_center, disk_radius)


def line_point_distance(slope: float, x: float, y: float) -> float:
    """Distance from (x, y) to the line y = slope * x through the origin."""
    return abs(slope * x - y) / math.sqrt(1.0 + slope * slope)


def sampled_visibility(robot_xy, target_center, blockers, n_samples=10_000) -> bool:
    """Brute-force line-of-sight test by sampling the open sight segment."""
    p0 = np.asarray(robot_xy, dtype=float)
    p1 = np.asarray(target_center, dtype=float)
    ts = np.arange(1, n_samples) / n_samples
    pts = p0[None, :] + ts[:, None] * (p1 - p0)[None, :]
    for cx, cy, r in blockers:
        d = np.hypot(pts[:, 0] - cx, pts[:, 1] - cy)
        if np.any(d <= r):
            return False
    return True


def central_difference_gradient(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central finite differences of a scalar function of a flat vector."""
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2.0 * h)
    return g


def project_to_polyline(waypoints: np.ndarray, point, n_dense=20_000):
    """Nearest point on a polyline by dense arc-length sampling.

    Returns (arc_length, point). Slow and simple on purpose.
    """
    wps = np.asarray(waypoints, dtype=float)
    seg = np.diff(wps, axis=0)
    seg_len = np.hypot(seg[:, 0], seg[:, 1])
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    s = np.linspace(0.0, cum[-1], n_dense)
    pts = np.empty((n_dense, 2))
    for i, si in enumerate(s):
        j = min(np.searchsorted(cum, si, side="right") - 1, len(seg) - 1)
        t = 0.0 if seg_len[j] == 0 else (si - cum[j]) / seg_len[j]
        pts[i] = wps[j] + t * seg[j]
    d = np.hypot(pts[:, 0] - point[0], pts[:, 1] - point[1])
    k = int(np.argmin(d))
    return float(s[k]), pts[k]
