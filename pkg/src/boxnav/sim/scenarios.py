"""Pose samplers for perception experiments with renderer ground truth."""
from __future__ import annotations

import math

import numpy as np

from ..geometry import CameraIntrinsics, Pose
from .world import BoxWorld


def clip_polygon(poly, xmin: float, ymin: float, xmax: float, ymax: float) -> np.ndarray:
    """Sutherland-Hodgman clip of a polygon against an axis-aligned rectangle."""
    out = [tuple(p) for p in np.asarray(poly, dtype=float)]
    for axis, bound, keep_above in ((0, xmin, True), (0, xmax, False), (1, ymin, True), (1, ymax, False)):
        if not out:
            break
        src, out = out, []
        for i, cur in enumerate(src):
            prev = src[i - 1]
            cin = cur[axis] >= bound if keep_above else cur[axis] <= bound
            pin = prev[axis] >= bound if keep_above else prev[axis] <= bound
            if cin != pin:
                t = (bound - prev[axis]) / (cur[axis] - prev[axis])
                out.append((prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])))
            if cin:
                out.append(cur)
    return np.asarray(out, dtype=float).reshape(-1, 2)


def polygon_area(poly) -> float:
    p = np.asarray(poly, dtype=float).reshape(-1, 2)
    if len(p) < 3:
        return 0.0
    x, y = p[:, 0], p[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y)))


def outside_fraction(quad_ring, k: CameraIntrinsics) -> float:
    """Share of a projected polygon's area lying outside the image."""
    total = polygon_area(quad_ring)
    if total <= 0:
        return 1.0
    inside = polygon_area(clip_polygon(quad_ring, 0.0, 0.0, k.width, k.height))
    return 1.0 - inside / total


def exit_view_pose(world: BoxWorld, distance: float, dy: float = 0.0, dz: float = 0.0,
                   dyaw: float = 0.0) -> Pose:
    """In-box camera facing the exit window from ``distance`` metres, offset laterally/vertically."""
    c = world.window_center()
    return Pose.at(c[0] + distance, c[1] + dy, c[2] + dz, yaw=math.pi + dyaw)


def sample_partial_views(world: BoxWorld, k: CameraIntrinsics, n: int, seed: int = 0,
                         lo: float = 0.3, hi: float = 0.6, distance=(0.6, 0.95),
                         max_tries: int = 100_000) -> list[tuple[Pose, float]]:
    """``n`` in-box poses whose exit window is ``lo``..``hi`` outside the frame (rejection sampled)."""
    rng = np.random.default_rng(seed)
    half_w = world.width / 2 - 0.1
    half_h = world.height / 2 - 0.05
    out = []
    for _ in range(max_tries):
        d = rng.uniform(*distance)
        pose = exit_view_pose(world, d, rng.uniform(-half_w, half_w), rng.uniform(-half_h, half_h),
                              math.radians(rng.uniform(-20, 20)))
        quad = world.true_window_quad_px(pose, k)
        if quad is None:
            continue
        lt, lb, rt, rb = quad
        f = outside_fraction(np.array([lt, lb, rb, rt]), k)
        if lo <= f <= hi:
            out.append((pose, f))
            if len(out) == n:
                return out
    raise RuntimeError("could not sample enough partial views")
