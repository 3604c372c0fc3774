"""Two-phase mission controller: PID velocity laws, threshold gates, phase machine.

PID outputs are in the UAV's remote-control stick units (+-100); the gains
below are expressed in those units.  ``MissionConfig.linear_scale`` and
``yaw_scale`` convert stick units to m/s and rad/s.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .geometry import (
    TELLO_CAMERA,
    Attitude,
    CameraIntrinsics,
    error_to_uav,
    image_error,
    rot_z,
    wrap_angle,
)
from .vision import TargetObservation


class Phase(IntEnum):
    ALIGN_ENTRY = 0
    TRAVERSE_IN = 1
    ROTATE_AT_WAYPOINT = 2
    ALIGN_EXIT = 3
    TRAVERSE_OUT = 4
    DONE = 5
    ABORTED = 6


@dataclass(frozen=True)
class AxisGains:
    kp: float
    ki: float = 0.0
    kd: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(g) for g in (self.kp, self.ki, self.kd)):
            raise ValueError("gains must be finite")
        if self.kp < 0:
            raise ValueError("kp must be non-negative")


@dataclass(frozen=True)
class PidGains:
    y: AxisGains = AxisGains(68.0, 0.73, 4.9)
    z: AxisGains = AxisGains(106.0, 0.5, 6.1)
    yaw: AxisGains = AxisGains(0.8, 8e-4, 5e-3)


@dataclass(frozen=True)
class Thresholds:
    d_t1: float = 1.55
    d_t2: float = 1.65
    d_t3: float = 0.70
    d_t4: float = 0.95
    y_t: float = 0.015
    z_t: float = 0.015
    psi_t: float = 6.0

    def __post_init__(self):
        if not self.d_t1 < self.d_t2:
            raise ValueError("d_t1 must be < d_t2")
        if not self.d_t3 < self.d_t4:
            raise ValueError("d_t3 must be < d_t4")
        if not (self.y_t > 0 and self.z_t > 0 and self.psi_t > 0):
            raise ValueError("y_t, z_t and psi_t must be positive")


@dataclass(frozen=True)
class VelocityCommand:
    vx: float = 0.0  # m/s, heading frame (x forward, y right, z down)
    vy: float = 0.0
    vz: float = 0.0
    wz: float = 0.0  # rad/s

    def as_array(self) -> np.ndarray:
        return np.array([self.vx, self.vy, self.vz, self.wz])


@dataclass
class PidMemory:
    integral: float = 0.0
    prev_error: float | None = None


@dataclass
class OdometryEstimate:
    position: np.ndarray
    yaw: float
    roll: float = 0.0  # attitude from the IMU
    pitch: float = 0.0


def _clip(x: float, lim: float) -> float:
    return max(-lim, min(lim, x))


def pid_step(gains: AxisGains, error: float, memory: PidMemory, dt: float,
             output_limit: float = math.inf, integral_limit: float | None = None):
    """One PID update; returns ``(command, new_memory)``.

    Rectangular integration, backward-difference derivative (zero on the
    first call after a reset).  ``integral_limit`` bounds ``ki * integral``.
    The integral is frozen while the output saturates in the direction of
    the error (conditional-integration anti-windup).
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    deriv = 0.0 if memory.prev_error is None else (error - memory.prev_error) / dt
    integral = memory.integral + error * dt
    if integral_limit is not None and gains.ki > 0:
        cap = integral_limit / gains.ki
        integral = max(-cap, min(cap, integral))
    out = gains.kp * error + gains.ki * integral + gains.kd * deriv
    if abs(out) > output_limit and out * error > 0:
        integral = memory.integral
        out = gains.kp * error + gains.ki * integral + gains.kd * deriv
    return _clip(out, output_limit), PidMemory(integral, error)


def threshold_check_entry(depth: float, y_e: float, z_e: float, psi_e: float, th: Thresholds) -> bool:
    return (th.d_t1 < depth < th.d_t2 and abs(y_e) < th.y_t and abs(z_e) < th.z_t
            and abs(psi_e) < th.psi_t)


def threshold_check_exit(depth: float, y_e: float, z_e: float, th: Thresholds) -> bool:
    return th.d_t3 < depth < th.d_t4 and abs(y_e) < th.y_t and abs(z_e) < th.z_t


@dataclass
class MissionConfig:
    C: float = 0.2  # m/s constant forward speed while approaching
    gains: PidGains = field(default_factory=PidGains)
    thresholds: Thresholds = field(default_factory=Thresholds)
    camera: CameraIntrinsics = TELLO_CAMERA
    eq6_mode: str = "literal"
    linear_scale: float = 0.01  # m/s per stick unit
    yaw_scale: float = math.radians(1.0)  # rad/s per stick unit
    linear_stick_limit: float = 50.0
    yaw_stick_limit: float = 30.0
    traverse_gain: float = 1.0  # 1/s
    traverse_speed: float = 0.3  # m/s
    arrival_tolerance: float = 0.05  # m
    inside_depth: float = 0.6  # waypoint beyond the entrance plane, m
    outside_distance: float = 1.5  # waypoint beyond the exit plane, m
    rotate_gain: float = 1.5  # 1/s
    rotate_rate: float = math.radians(45.0)
    yaw_tolerance: float = math.radians(3.0)
    perception_timeout: float = 10.0  # s of consecutive perception failure
    phase_timeout: float = 90.0  # s

    def __post_init__(self):
        if self.C <= 0:
            raise ValueError("C must be positive")
        if self.eq6_mode not in ("literal", "zeroed"):
            raise ValueError("eq6_mode must be 'literal' or 'zeroed'")

    @property
    def max_speed(self) -> float:
        return max(self.C, self.traverse_speed, self.linear_stick_limit * self.linear_scale)

    @property
    def max_yaw_rate(self) -> float:
        return max(self.rotate_rate, self.yaw_stick_limit * self.yaw_scale)

    @property
    def reference_point(self):
        return self.camera.midpoint


@dataclass
class MissionState:
    phase: Phase = Phase.ALIGN_ENTRY
    memory: dict = field(default_factory=lambda: {"y": PidMemory(), "z": PidMemory(), "yaw": PidMemory()})
    waypoint_in: np.ndarray | None = None
    waypoint_out: np.ndarray | None = None
    desired_exit_yaw: float | None = None
    time: float = 0.0
    phase_time: float = 0.0
    failure_time: float = 0.0
    transitions: list = field(default_factory=list)  # (time, new phase)
    # latest measured errors (Y_e, Z_e, psi_e, D); NaN when not measured
    errors: tuple = (math.nan, math.nan, math.nan, math.nan)
    abort_reason: str = ""

    def enter(self, phase: Phase):
        if phase < self.phase:
            raise RuntimeError(f"backward transition {self.phase.name} -> {phase.name}")
        self.phase = phase
        self.memory = {"y": PidMemory(), "z": PidMemory(), "yaw": PidMemory()}
        self.phase_time = 0.0
        self.failure_time = 0.0
        self.transitions.append((self.time, phase))


def metric_errors(obs: TargetObservation, att: Attitude, cfg: MissionConfig):
    """(Y_e, Z_e) in metres from an observation."""
    e = image_error(obs.center, cfg.reference_point)
    v = error_to_uav(e, obs.depth, cfg.camera, att, cfg.eq6_mode)
    return v.y, v.z


def _depth_speed(depth: float, lo: float, hi: float, C: float) -> float:
    if depth > hi:
        return C
    if depth < lo:
        return -C
    return 0.0


def _toward(target: np.ndarray, odom: OdometryEstimate, cfg: MissionConfig) -> tuple[np.ndarray, float]:
    """Heading-frame velocity toward a world waypoint (P law, norm-clamped) and the distance."""
    err = np.asarray(target) - odom.position
    dist = float(np.linalg.norm(err))
    v = rot_z(-odom.yaw) @ (cfg.traverse_gain * err)
    n = np.linalg.norm(v)
    if n > cfg.traverse_speed:
        v *= cfg.traverse_speed / n
    return v, dist


def _clamp_command(cmd: VelocityCommand, cfg: MissionConfig) -> VelocityCommand:
    s, w = cfg.max_speed, cfg.max_yaw_rate
    return VelocityCommand(_clip(cmd.vx, s), _clip(cmd.vy, s), _clip(cmd.vz, s), _clip(cmd.wz, w))


def _align(state: MissionState, obs, odom, cfg, dt, entry: bool):
    th = cfg.thresholds
    att = Attitude(odom.roll, odom.pitch, 0.0)
    y_e, z_e = metric_errors(obs, att, cfg)
    psi_e = obs.yaw_error if entry else 0
    state.errors = (y_e, z_e, float(psi_e), obs.depth)
    if entry:
        passed = threshold_check_entry(obs.depth, y_e, z_e, psi_e, th)
    else:
        passed = threshold_check_exit(obs.depth, y_e, z_e, th)
    if passed:
        return None
    lim = cfg.linear_stick_limit
    ilim = 10.0 * lim
    sy, state.memory["y"] = pid_step(cfg.gains.y, y_e, state.memory["y"], dt, lim, ilim)
    sz, state.memory["z"] = pid_step(cfg.gains.z, z_e, state.memory["z"], dt, lim, ilim)
    lo, hi = (th.d_t1, th.d_t2) if entry else (th.d_t3, th.d_t4)
    vx = _depth_speed(obs.depth, lo, hi, cfg.C)
    wz = 0.0
    if entry:
        ylim = cfg.yaw_stick_limit
        sw, state.memory["yaw"] = pid_step(cfg.gains.yaw, float(psi_e), state.memory["yaw"], dt, ylim, 10.0 * ylim)
        wz = sw * cfg.yaw_scale
    return VelocityCommand(vx, sy * cfg.linear_scale, sz * cfg.linear_scale, wz)


def mission_step(state: MissionState, perception: TargetObservation | None, odom: OdometryEstimate,
                 cfg: MissionConfig, dt: float):
    """Advance the mission by one control tick; returns ``(command, state)``.

    ``perception`` is the entry-window observation in ALIGN_ENTRY and the
    homography estimate in ALIGN_EXIT; ``None`` signals a perception failure.
    The state is updated in place.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    state.errors = (math.nan, math.nan, 0.0 if state.phase > Phase.ALIGN_ENTRY else math.nan, math.nan)
    cmd = VelocityCommand()
    # at most one pass per phase; a transition hands the tick to the next phase
    for _ in range(len(Phase)):
        phase = state.phase
        if phase in (Phase.DONE, Phase.ABORTED):
            cmd = VelocityCommand()
            break
        if state.phase_time > cfg.phase_timeout:
            state.abort_reason = f"{phase.name} timed out"
            state.enter(Phase.ABORTED)
            continue

        if phase in (Phase.ALIGN_ENTRY, Phase.ALIGN_EXIT):
            entry = phase == Phase.ALIGN_ENTRY
            obs = perception
            if obs is None:
                state.failure_time += dt
                if state.failure_time > cfg.perception_timeout:
                    state.abort_reason = "perception lost"
                    state.enter(Phase.ABORTED)
                    continue
                cmd = VelocityCommand()
                break
            state.failure_time = 0.0
            out = _align(state, obs, odom, cfg, dt, entry)
            if out is not None:
                cmd = out
                break
            heading = rot_z(odom.yaw) @ np.array([1.0, 0.0, 0.0])
            if entry:
                state.waypoint_in = odom.position + heading * (obs.depth + cfg.inside_depth)
                state.desired_exit_yaw = wrap_angle(odom.yaw + math.pi)
                state.enter(Phase.TRAVERSE_IN)
            else:
                state.waypoint_out = odom.position + heading * (obs.depth + cfg.outside_distance)
                state.enter(Phase.TRAVERSE_OUT)
            continue

        if phase == Phase.TRAVERSE_IN:
            v, dist = _toward(state.waypoint_in, odom, cfg)
            if dist < cfg.arrival_tolerance:
                state.enter(Phase.ROTATE_AT_WAYPOINT)
                continue
            cmd = VelocityCommand(*v, 0.0)
            break

        if phase == Phase.ROTATE_AT_WAYPOINT:
            yaw_err = wrap_angle(state.desired_exit_yaw - odom.yaw)
            if abs(yaw_err) < cfg.yaw_tolerance:
                state.enter(Phase.ALIGN_EXIT)
                continue
            v, _ = _toward(state.waypoint_in, odom, cfg)
            wz = _clip(cfg.rotate_gain * yaw_err, cfg.rotate_rate)
            cmd = VelocityCommand(*v, wz)
            break

        if phase == Phase.TRAVERSE_OUT:
            v, dist = _toward(state.waypoint_out, odom, cfg)
            if dist < cfg.arrival_tolerance:
                state.enter(Phase.DONE)
                continue
            cmd = VelocityCommand(*v, 0.0)
            break

    state.time += dt
    state.phase_time += dt
    return _clamp_command(cmd, cfg), state
