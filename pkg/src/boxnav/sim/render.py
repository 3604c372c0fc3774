"""Ray-cast renderer for the textured box seen through the UAV camera."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import ndimage

from ..geometry import CameraIntrinsics, Pose, camera_to_world_rotation
from .world import BoxWorld


@dataclass(frozen=True)
class Appearance:
    background: float = 110.0
    exterior: tuple = (200.0, 175.0, 175.0, 190.0, 150.0, 160.0)  # front, left, right, top, bottom, back
    interior_mean: float = 70.0
    texture_amplitude: float = 18.0
    texel: float = 0.0025  # m
    feature_scale: float = 0.02  # m, coarse octave of the value noise


@dataclass(frozen=True)
class _Face:
    name: str
    axis: int  # normal axis
    c: float  # plane coordinate
    a_axis: int
    a_lo: float
    a_hi: float
    b_axis: int
    b_lo: float
    b_hi: float
    interior_sign: float  # +1 when the box interior lies at larger coordinate
    exterior_shade: float
    hole: tuple | None = None  # (a_lo, a_hi, b_lo, b_hi)


def _faces(world: BoxWorld, app: Appearance) -> list[_Face]:
    xf, xb = world.entrance_x, world.back_x
    y0, y1, z0, z1 = world.y_min, world.y_max, world.z_top, world.z_bottom
    hole = (world.center_y - world.window_width / 2, world.center_y + world.window_width / 2,
            world.center_z - world.window_height / 2, world.center_z + world.window_height / 2)
    ext = app.exterior
    return [
        _Face("front", 0, xf, 1, y0, y1, 2, z0, z1, +1.0, ext[0], hole),
        _Face("left", 1, y0, 0, xf, xb, 2, z0, z1, +1.0, ext[1]),
        _Face("right", 1, y1, 0, xf, xb, 2, z0, z1, -1.0, ext[2]),
        _Face("top", 2, z0, 0, xf, xb, 1, y0, y1, +1.0, ext[3]),
        _Face("bottom", 2, z1, 0, xf, xb, 1, y0, y1, -1.0, ext[4]),
        _Face("back", 0, xb, 1, y0, y1, 2, z0, z1, -1.0, ext[5]),
    ]


def value_noise(shape, cell: float, rng: np.random.Generator) -> np.ndarray:
    """Smooth random field with features about ``cell`` texels across."""
    factor = max(int(round(cell)), 1)
    gh = shape[0] // factor + 4
    gw = shape[1] // factor + 4
    grid = rng.standard_normal((gh, gw))
    up = ndimage.zoom(grid, factor, order=3, mode="nearest")
    return up[factor : factor + shape[0], factor : factor + shape[1]]


@lru_cache(maxsize=16)
def _textures(world_key, app: Appearance):
    world = BoxWorld(*world_key)
    rng = np.random.default_rng(world.texture_seed)
    tex = {}
    for face in _faces(world, app):
        na = int(np.ceil((face.a_hi - face.a_lo) / app.texel)) + 2
        nb = int(np.ceil((face.b_hi - face.b_lo) / app.texel)) + 2
        cell = app.feature_scale / app.texel
        n = value_noise((nb, na), cell, rng) + 0.5 * value_noise((nb, na), cell / 2, rng)
        n = (n - n.mean()) / (n.std() + 1e-12)
        t = app.interior_mean + app.texture_amplitude * np.clip(n, -2.0, 2.0)
        tex[face.name] = t.astype(np.float32)
    return tex


def _world_key(world: BoxWorld) -> tuple:
    return (world.entrance_x, world.center_y, world.center_z, world.length, world.width,
            world.height, world.window_width, world.window_height, world.wall_thickness,
            world.texture_seed)


def render_radiance(world: BoxWorld, pose: Pose, k: CameraIntrinsics, supersample: int = 1,
                    app: Appearance = Appearance()) -> np.ndarray:
    """Noise-free float intensity image (height, width)."""
    s = int(supersample)
    h, w = k.height * s, k.width * s
    u = (np.arange(w) + 0.5) / s - 0.5
    v = (np.arange(h) + 0.5) / s - 0.5
    xs = (u - k.cx) / k.fx
    ys = (v - k.cy) / k.fy
    R = camera_to_world_rotation(pose.attitude)
    # world ray direction = R @ [x, y, 1]
    d = (R[:, 0][None, None, :] * xs[None, :, None]
         + R[:, 1][None, None, :] * ys[:, None, None]
         + R[:, 2][None, None, :])
    d = d.reshape(-1, 3)
    o = pose.position
    tbuf = np.full(d.shape[0], np.inf)
    img = np.full(d.shape[0], float(app.background))
    tex = _textures(_world_key(world), app)

    for face in _faces(world, app):
        dn = d[:, face.axis]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (face.c - o[face.axis]) / dn
        hit = np.isfinite(t) & (t > 1e-6) & (t < tbuf)
        if not hit.any():
            continue
        idx = np.flatnonzero(hit)
        th = t[idx]
        pa = o[face.a_axis] + th * d[idx, face.a_axis]
        pb = o[face.b_axis] + th * d[idx, face.b_axis]
        ok = (pa >= face.a_lo) & (pa <= face.a_hi) & (pb >= face.b_lo) & (pb <= face.b_hi)
        if face.hole is not None:
            ha0, ha1, hb0, hb1 = face.hole
            ok &= ~((pa > ha0) & (pa < ha1) & (pb > hb0) & (pb < hb1))
        if not ok.any():
            continue
        idx, th, pa, pb = idx[ok], th[ok], pa[ok], pb[ok]
        tbuf[idx] = th
        interior = face.interior_sign * (o[face.axis] - face.c) > 0
        if interior:
            coords = np.vstack([(pb - face.b_lo) / app.texel, (pa - face.a_lo) / app.texel])
            img[idx] = ndimage.map_coordinates(tex[face.name], coords, order=1, mode="nearest")
        else:
            img[idx] = face.exterior_shade

    img = img.reshape(h, w)
    if s > 1:
        img = img.reshape(k.height, s, k.width, s).mean(axis=(1, 3))
    return img


def render_camera(world: BoxWorld, pose: Pose, k: CameraIntrinsics, noise_sigma: float = 2.0,
                  rng: np.random.Generator | None = None, supersample: int = 1,
                  app: Appearance = Appearance()) -> np.ndarray:
    """Render an 8-bit grayscale frame; additive Gaussian noise needs an ``rng``."""
    img = render_radiance(world, pose, k, supersample, app)
    if rng is not None and noise_sigma > 0:
        img = img + rng.normal(0.0, noise_sigma, img.shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)
