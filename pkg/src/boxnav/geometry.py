"""Frames, pinhole projection and the camera -> UAV error rotation chain.

Conventions used throughout the package:

* camera frame: x right, y down, z forward (optical axis)
* body / uav frame: x forward, y right, z down
* world frame: x toward the box entrance, z down, origin at takeoff

Pixel coordinates are (u, v) = (column, row).  The pinhole relations work on
principal-point-centred offsets ``u - cx`` and ``v - cy``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

FRAMES = ("camera", "world", "uav")

# Front-facing mount: camera (right, down, forward) -> body (forward, right, down).
# Columns are the body-frame images of the camera axes.
R_CAM_TO_BODY = np.array(
    [
        [0.0, 0.0, 1.0],
        [1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
    ]
)

BEHIND_CAMERA_EPS = 1e-6


class FrameError(ValueError):
    """A vector tagged with one frame was handed to an operation expecting another."""


class DomainError(ValueError):
    """Argument outside the mathematical domain of an operation (e.g. depth <= 0)."""


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise DomainError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise DomainError("principal point must lie inside the image")

    @property
    def K(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    @property
    def midpoint(self) -> "PixelPoint":
        return PixelPoint(self.width / 2.0, self.height / 2.0)


# Calibrated Tello camera, 480x360 frames.
TELLO_CAMERA = CameraIntrinsics(fx=466.0, fy=467.0, cx=247.0, cy=174.0, width=480, height=360)


def wrap_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    w = math.remainder(a, 2.0 * math.pi)
    if w == -math.pi:
        w = math.pi
    return w


@dataclass(frozen=True)
class Attitude:
    roll_phi: float = 0.0
    pitch_theta: float = 0.0
    yaw_psi: float = 0.0

    def __post_init__(self):
        vals = (self.roll_phi, self.pitch_theta, self.yaw_psi)
        if not all(math.isfinite(v) for v in vals):
            raise DomainError("attitude components must be finite")
        object.__setattr__(self, "roll_phi", wrap_angle(self.roll_phi))
        object.__setattr__(self, "pitch_theta", wrap_angle(self.pitch_theta))
        object.__setattr__(self, "yaw_psi", wrap_angle(self.yaw_psi))


@dataclass(frozen=True)
class Pose:
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    attitude: Attitude = field(default_factory=Attitude)

    def __post_init__(self):
        p = np.asarray(self.position, dtype=float).reshape(3)
        if not np.all(np.isfinite(p)):
            raise DomainError("pose position must be finite")
        object.__setattr__(self, "position", p)

    @classmethod
    def at(cls, x, y, z, roll=0.0, pitch=0.0, yaw=0.0) -> "Pose":
        return cls(np.array([x, y, z], dtype=float), Attitude(roll, pitch, yaw))


class PixelPoint(NamedTuple):
    u: float
    v: float


@dataclass(frozen=True)
class Vec3:
    x: float
    y: float
    z: float
    frame: str

    def __post_init__(self):
        if self.frame not in FRAMES:
            raise FrameError(f"unknown frame {self.frame!r}")

    @classmethod
    def of(cls, arr, frame: str) -> "Vec3":
        a = np.asarray(arr, dtype=float).reshape(3)
        return cls(float(a[0]), float(a[1]), float(a[2]), frame)

    @property
    def array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    def norm(self) -> float:
        return float(np.linalg.norm(self.array))


def _require_frame(v: Vec3, frame: str):
    if v.frame != frame:
        raise FrameError(f"expected a {frame}-frame vector, got {v.frame}")


def rot_x(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def is_rotation(R: np.ndarray, tol: float = 1e-9) -> bool:
    R = np.asarray(R, dtype=float)
    return (
        R.shape == (3, 3)
        and np.allclose(R.T @ R, np.eye(3), atol=tol, rtol=0)
        and abs(np.linalg.det(R) - 1.0) <= tol
    )


def camera_to_uav_rotation(att: Attitude) -> np.ndarray:
    """R(theta) R(phi) R_cam->body: camera frame into the level, yaw-aligned uav frame."""
    return rot_y(att.pitch_theta) @ rot_x(att.roll_phi) @ R_CAM_TO_BODY


def body_to_world_rotation(att: Attitude) -> np.ndarray:
    """Z-Y-X Euler body -> world rotation."""
    return rot_z(att.yaw_psi) @ rot_y(att.pitch_theta) @ rot_x(att.roll_phi)


def camera_to_world_rotation(att: Attitude) -> np.ndarray:
    return body_to_world_rotation(att) @ R_CAM_TO_BODY


def pixel_to_camera(p, depth: float, k: CameraIntrinsics) -> Vec3:
    """Back-project pixel ``p`` to the camera-frame point at distance ``depth``."""
    if not depth > 0:
        raise DomainError(f"depth must be positive, got {depth}")
    u, v = p
    x_i = u - k.cx
    y_i = v - k.cy
    return Vec3(depth * x_i / k.fx, depth * y_i / k.fy, float(depth), "camera")


def camera_to_uav(v: Vec3, att: Attitude) -> Vec3:
    _require_frame(v, "camera")
    a = v.array
    if not np.all(np.isfinite(a)):
        raise DomainError("non-finite vector")
    return Vec3.of(camera_to_uav_rotation(att) @ a, "uav")


def camera_to_world(v: Vec3, pose: Pose) -> Vec3:
    _require_frame(v, "camera")
    return Vec3.of(camera_to_world_rotation(pose.attitude) @ v.array + pose.position, "world")


def image_error(center, reference) -> tuple[float, float]:
    return (center[0] - reference[0], center[1] - reference[1])


def error_to_uav(e, depth: float, k: CameraIntrinsics, att: Attitude, mode: str = "literal") -> Vec3:
    """Pixel error -> metric error in the uav frame.

    ``mode="literal"`` rotates ``[X_ec, Y_ec, 1]``; ``mode="zeroed"`` rotates
    ``[X_ec, Y_ec, 0]`` so the map is linear in the pixel error.
    """
    if not depth > 0:
        raise DomainError(f"depth must be positive, got {depth}")
    if mode == "literal":
        third = 1.0
    elif mode == "zeroed":
        third = 0.0
    else:
        raise ValueError(f"unknown error_to_uav mode {mode!r}")
    x_ec = depth * e[0] / k.fx
    y_ec = depth * e[1] / k.fy
    return Vec3.of(camera_to_uav_rotation(att) @ np.array([x_ec, y_ec, third]), "uav")


def world_to_camera(points: np.ndarray, pose: Pose) -> np.ndarray:
    """(N, 3) world points -> (N, 3) camera-frame points."""
    R = camera_to_world_rotation(pose.attitude)
    return (np.atleast_2d(points) - pose.position) @ R


def project_points(points: np.ndarray, pose: Pose, k: CameraIntrinsics):
    """Vectorised projection.  Returns ``(uv, in_front)`` with uv (N, 2)."""
    pc = world_to_camera(points, pose)
    z = pc[:, 2]
    in_front = z > BEHIND_CAMERA_EPS
    zs = np.where(in_front, z, np.nan)
    uv = np.column_stack([k.fx * pc[:, 0] / zs + k.cx, k.fy * pc[:, 1] / zs + k.cy])
    return uv, in_front


def project_world_point(p: Vec3, camera_pose: Pose, k: CameraIntrinsics) -> PixelPoint | None:
    """Project a world point; ``None`` when it lies behind the camera."""
    _require_frame(p, "world")
    uv, ok = project_points(p.array[None, :], camera_pose, k)
    if not ok[0]:
        return None
    return PixelPoint(float(uv[0, 0]), float(uv[0, 1]))
