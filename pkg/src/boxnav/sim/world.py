"""Box geometry, collision clearance and the proximity disturbance model."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..geometry import CameraIntrinsics, Pose, project_points
from ..vision import polygon_centroid


@dataclass
class BoxWorld:
    # entrance plane and box axis in world coordinates (x forward, z down)
    entrance_x: float = 5.5
    center_y: float = 0.2
    center_z: float = -0.55
    length: float = 1.20
    width: float = 0.75
    height: float = 0.75
    window_width: float = 0.48
    window_height: float = 0.28
    wall_thickness: float = 0.01
    texture_seed: int = 7

    def __post_init__(self):
        if not (0 < self.window_width < self.width and 0 < self.window_height < self.height):
            raise ValueError("entrance window must lie strictly inside the front face")

    # --- handy coordinates -------------------------------------------------
    @property
    def back_x(self) -> float:
        return self.entrance_x + self.length

    @property
    def y_min(self) -> float:
        return self.center_y - self.width / 2

    @property
    def y_max(self) -> float:
        return self.center_y + self.width / 2

    @property
    def z_top(self) -> float:  # ceiling (z is down)
        return self.center_z - self.height / 2

    @property
    def z_bottom(self) -> float:
        return self.center_z + self.height / 2

    def window_center(self) -> np.ndarray:
        return np.array([self.entrance_x, self.center_y, self.center_z])

    def window_corners(self) -> np.ndarray:
        """(4, 3) window corners; LT, LB, RT, RB as seen from outside."""
        x = self.entrance_x
        y0, y1 = self.center_y - self.window_width / 2, self.center_y + self.window_width / 2
        z0, z1 = self.center_z - self.window_height / 2, self.center_z + self.window_height / 2
        return np.array([[x, y0, z0], [x, y0, z1], [x, y1, z0], [x, y1, z1]])

    def box_center(self) -> np.ndarray:
        return np.array([self.entrance_x + self.length / 2, self.center_y, self.center_z])

    def inside(self, p) -> bool:
        x, y, z = p
        return (self.entrance_x < x < self.back_x and self.y_min < y < self.y_max
                and self.z_top < z < self.z_bottom)

    def wall_slabs(self) -> np.ndarray:
        """(K, 2, 3) axis-aligned slabs [lo, hi] making up the walls."""
        t = self.wall_thickness
        xf, xb = self.entrance_x, self.back_x
        y0, y1, z0, z1 = self.y_min, self.y_max, self.z_top, self.z_bottom
        wy0 = self.center_y - self.window_width / 2
        wy1 = self.center_y + self.window_width / 2
        wz0 = self.center_z - self.window_height / 2
        wz1 = self.center_z + self.window_height / 2
        slabs = [
            # front face around the window
            [[xf - t, y0 - t, z0 - t], [xf, wy0, z1 + t]],
            [[xf - t, wy1, z0 - t], [xf, y1 + t, z1 + t]],
            [[xf - t, wy0, z0 - t], [xf, wy1, wz0]],
            [[xf - t, wy0, wz1], [xf, wy1, z1 + t]],
            # back, sides, ceiling, floor
            [[xb, y0 - t, z0 - t], [xb + t, y1 + t, z1 + t]],
            [[xf - t, y0 - t, z0 - t], [xb + t, y0, z1 + t]],
            [[xf - t, y1, z0 - t], [xb + t, y1 + t, z1 + t]],
            [[xf - t, y0 - t, z0 - t], [xb + t, y1 + t, z0]],
            [[xf - t, y0 - t, z1], [xb + t, y1 + t, z1 + t]],
        ]
        return np.asarray(slabs, dtype=float)

    def true_window_center_px(self, pose: Pose, k: CameraIntrinsics):
        """Moment centroid of the projected window quad (the quantity perception estimates)."""
        uv, ok = project_points(self.window_corners(), pose, k)
        if not ok.all():
            return None
        lt, lb, rt, rb = uv
        return polygon_centroid(np.array([lt, lb, rb, rt]))

    def true_window_quad_px(self, pose: Pose, k: CameraIntrinsics):
        uv, ok = project_points(self.window_corners(), pose, k)
        return uv if ok.all() else None


# ------------------------------------------------------------- collision

@dataclass
class UavBody:
    length: float = 0.17
    width: float = 0.17
    height: float = 0.05

    def half_extents(self, yaw: float) -> np.ndarray:
        c, s = abs(math.cos(yaw)), abs(math.sin(yaw))
        hx = 0.5 * (self.length * c + self.width * s)
        hy = 0.5 * (self.length * s + self.width * c)
        return np.array([hx, hy, 0.5 * self.height])


def aabb_signed_distance(lo_a, hi_a, lo_b, hi_b) -> float:
    """Separation between two boxes; negative penetration depth when they overlap."""
    gaps = np.maximum(np.asarray(lo_b) - hi_a, np.asarray(lo_a) - hi_b)
    pos = gaps[gaps > 0]
    if pos.size:
        return float(np.sqrt(np.sum(pos * pos)))
    return float(gaps.max())


def clearances(position, yaw: float, world: BoxWorld, body: UavBody | None = None) -> np.ndarray:
    """Signed clearance to every wall slab, in ``BoxWorld.wall_slabs`` order."""
    body = body or UavBody()
    he = body.half_extents(yaw)
    p = np.asarray(position, dtype=float)
    lo, hi = p - he, p + he
    return np.array([aabb_signed_distance(lo, hi, s[0], s[1]) for s in world.wall_slabs()])


def collision_check(position, yaw: float, world: BoxWorld, body: UavBody | None = None) -> float:
    """Minimum signed clearance (m) between the UAV bounding box and the walls."""
    return float(clearances(position, yaw, world, body).min())


# ----------------------------------------------------------- disturbance

@dataclass
class DisturbanceConfig:
    ceiling_gain: float = 0.15  # m/s^2 at contact
    sidewall_gain: float = 0.15
    decay_length: float = 0.12  # m
    noise_sigma: float = 0.05  # m/s^2, per component, clipped at 3 sigma

    def __post_init__(self):
        if self.ceiling_gain < 0 or self.sidewall_gain < 0:
            raise ValueError("disturbance gains must be non-negative")
        if self.decay_length <= 0 or self.noise_sigma < 0:
            raise ValueError("decay_length must be positive and noise_sigma non-negative")

    @property
    def bound(self) -> float:
        return self.ceiling_gain + self.sidewall_gain + 3.0 * self.noise_sigma * math.sqrt(3.0)


def proximity_bias(position, world: BoxWorld, cfg: DisturbanceConfig) -> np.ndarray:
    """Deterministic suction toward ceiling and side walls (zero outside the box)."""
    p = np.asarray(position, dtype=float)
    if not world.inside(p):
        return np.zeros(3)
    lam = cfg.decay_length
    d_ceiling = p[2] - world.z_top
    d_left = p[1] - world.y_min
    d_right = world.y_max - p[1]
    bias = np.zeros(3)
    bias[2] = -cfg.ceiling_gain * math.exp(-d_ceiling / lam)
    # the two side walls pull in opposite directions; the nearer one wins
    bias[1] = cfg.sidewall_gain * (math.exp(-d_right / lam) - math.exp(-d_left / lam))
    return bias


def disturbance(position, world: BoxWorld, cfg: DisturbanceConfig, rng: np.random.Generator) -> np.ndarray:
    """Acceleration disturbance (m/s^2): proximity bias plus clipped white noise inside the box."""
    p = np.asarray(position, dtype=float)
    if not world.inside(p):
        return np.zeros(3)
    noise = np.clip(rng.normal(0.0, cfg.noise_sigma, 3), -3 * cfg.noise_sigma, 3 * cfg.noise_sigma)
    return proximity_bias(p, world, cfg) + noise
