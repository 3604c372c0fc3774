"""Quadrotor kinematics with a first-order velocity loop, and dead-reckoned odometry."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..control import OdometryEstimate, VelocityCommand
from ..geometry import Attitude, Pose, rot_z, wrap_angle

GRAVITY = 9.81
MAX_TILT = 0.35  # rad


@dataclass
class UavState:
    position: np.ndarray
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))  # world frame
    attitude: Attitude = field(default_factory=Attitude)

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).reshape(3)
        self.velocity = np.asarray(self.velocity, dtype=float).reshape(3)

    @property
    def pose(self) -> Pose:
        return Pose(self.position.copy(), self.attitude)


def command_to_world(cmd: VelocityCommand, yaw: float) -> np.ndarray:
    return rot_z(yaw) @ np.array([cmd.vx, cmd.vy, cmd.vz])


def step_dynamics(s: UavState, cmd: VelocityCommand, dist, dt: float, tau: float = 0.25) -> UavState:
    """Advance one control tick.

    Velocity tracks the (heading-frame) command with time constant ``tau``
    under a constant acceleration disturbance; the affine ODE is integrated
    exactly over the tick.  Yaw integrates the commanded rate; roll and pitch
    follow the commanded acceleration quasi-statically.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    yaw = s.attitude.yaw_psi
    v_cmd = command_to_world(cmd, yaw)
    d = np.asarray(dist, dtype=float).reshape(3)
    v_ss = v_cmd + tau * d
    decay = math.exp(-dt / tau)
    v0 = s.velocity
    v1 = v_ss + (v0 - v_ss) * decay
    p1 = s.position + v_ss * dt + (v0 - v_ss) * tau * (1.0 - decay)

    new_yaw = yaw + cmd.wz * dt
    acc_body = rot_z(-new_yaw) @ ((v_cmd - v1) / tau)
    pitch = float(np.clip(-acc_body[0] / GRAVITY, -MAX_TILT, MAX_TILT))
    roll = float(np.clip(acc_body[1] / GRAVITY, -MAX_TILT, MAX_TILT))
    return UavState(p1, v1, Attitude(roll, pitch, new_yaw))


@dataclass
class OdometryNoise:
    position_sigma: float = 0.002  # m per tick, per axis
    yaw_sigma: float = 0.001  # rad per tick


class Odometer:
    """Dead reckoning: integrates commanded velocity with random-walk noise."""

    def __init__(self, position, yaw: float, noise: OdometryNoise | None = None):
        self.position = np.asarray(position, dtype=float).reshape(3).copy()
        self.yaw = float(yaw)
        self.noise = noise or OdometryNoise()

    def update(self, cmd: VelocityCommand, dt: float, rng: np.random.Generator | None = None):
        self.position = self.position + command_to_world(cmd, self.yaw) * dt
        self.yaw = self.yaw + cmd.wz * dt
        if rng is not None:
            if self.noise.position_sigma > 0:
                self.position = self.position + rng.normal(0.0, self.noise.position_sigma, 3)
            if self.noise.yaw_sigma > 0:
                self.yaw += rng.normal(0.0, self.noise.yaw_sigma)
        self.yaw = wrap_angle(self.yaw)

    def estimate(self, imu_attitude: Attitude | None = None) -> OdometryEstimate:
        att = imu_attitude or Attitude()
        return OdometryEstimate(self.position.copy(), self.yaw, att.roll_phi, att.pitch_theta)


def read_odometry(odometer: Odometer, s: UavState) -> OdometryEstimate:
    """Current estimate, with roll/pitch taken from the (ideal) IMU."""
    return odometer.estimate(s.attitude)
