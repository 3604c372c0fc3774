"""Trial runner: config loading, the closed perception/control/dynamics loop, CSV logs, suites."""
from __future__ import annotations

import configparser
import csv
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, is_dataclass, replace
from pathlib import Path

import numpy as np

from .control import (
    AxisGains,
    MissionConfig,
    MissionState,
    Phase,
    PidGains,
    Thresholds,
    mission_step,
)
from .geometry import TELLO_CAMERA, CameraIntrinsics, Pose
from .homography import HomographyConfig, ReferenceTemplate, estimate_center_partial, make_template
from .pgm import write_pgm
from .sim.dynamics import Odometer, OdometryNoise, UavState, read_odometry, step_dynamics
from .sim.render import render_camera
from .sim.world import BoxWorld, DisturbanceConfig, UavBody, collision_check, disturbance
from .vision import VisionConfig, order_corners, polygon_centroid, observe_target

SCHEMA = 1
VERDICTS = ("success", "collision", "aborted")


class ConfigError(ValueError):
    """Invalid trial configuration; ``path`` names the offending ``section.key``."""

    def __init__(self, path: str, msg: str):
        super().__init__(f"{path}: {msg}")
        self.path = path


@dataclass
class TrialConfig:
    name: str = "trial"
    position: tuple = (0.0, 0.0, -0.4)
    yaw: float = 0.0  # rad
    seed: int = 0
    timeout: float = 120.0  # simulated seconds
    dt: float = 0.15
    mission: MissionConfig = field(default_factory=MissionConfig)
    disturbance: DisturbanceConfig = field(default_factory=DisturbanceConfig)
    world: BoxWorld = field(default_factory=BoxWorld)
    body: UavBody = field(default_factory=UavBody)
    vision: VisionConfig = field(default_factory=VisionConfig)
    homography: HomographyConfig = field(default_factory=HomographyConfig)
    odometry: OdometryNoise = field(default_factory=OdometryNoise)
    image_noise: float = 2.0
    tau: float = 0.25
    reference_mode: str = "premission"  # or "waypoint"
    reference_distance: float = 0.8  # m from the window, premission capture only

    def __post_init__(self):
        self.position = tuple(float(v) for v in self.position)
        if len(self.position) != 3 or not all(math.isfinite(v) for v in self.position):
            raise ConfigError("trial.position", "needs three finite coordinates")
        if not self.dt > 0:
            raise ConfigError("trial.dt", "must be positive")
        if not self.timeout > 0:
            raise ConfigError("trial.timeout", "must be positive")
        if self.reference_mode not in ("premission", "waypoint"):
            raise ConfigError("trial.reference_mode", "must be 'premission' or 'waypoint'")
        if self.image_noise < 0:
            raise ConfigError("trial.image_noise", "must be non-negative")

    # shorthands for the mission sub-config
    @property
    def thresholds(self) -> Thresholds:
        return self.mission.thresholds

    @property
    def gains(self) -> PidGains:
        return self.mission.gains

    @property
    def camera(self) -> CameraIntrinsics:
        return self.mission.camera

    @property
    def C(self) -> float:
        return self.mission.C

    @property
    def eq6_mode(self) -> str:
        return self.mission.eq6_mode


# ----------------------------------------------------------------- config

def _convert(raw: str, like, path: str):
    try:
        if isinstance(like, bool):
            return raw.strip().lower() in ("1", "true", "yes", "on")
        if isinstance(like, int):
            return int(raw)
        if isinstance(like, float):
            return float(raw)
        return raw.strip()
    except ValueError:
        raise ConfigError(path, f"cannot parse {raw!r} as {type(like).__name__}") from None


def _update(obj, items, section: str):
    names = {f.name for f in fields(obj)}
    changes = {}
    for key, raw in items:
        path = f"{section}.{key}"
        if key not in names:
            raise ConfigError(path, "unknown key")
        cur = getattr(obj, key)
        if is_dataclass(cur):
            raise ConfigError(path, "is a section, not a value")
        changes[key] = _convert(raw, cur, path)
    try:
        return replace(obj, **changes)
    except ConfigError:
        raise
    except (ValueError, TypeError) as e:
        key = next(iter(changes), "?")
        raise ConfigError(f"{section}.{key}", str(e)) from None


_TRIAL_KEYS = {"name", "x", "y", "z", "yaw_deg", "seed", "timeout", "dt", "image_noise", "tau",
               "reference_mode", "reference_distance"}


def parse_config(text: str, source: str = "<string>") -> TrialConfig:
    """Parse an INI-style trial file (sections like ``[trial]``, ``[gains.y]``, ``[world]``)."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as e:
        raise ConfigError(source, str(e).splitlines()[0]) from None

    base = TrialConfig()
    kw = {}
    pos = list(base.position)
    if cp.has_section("trial"):
        for key, raw in cp.items("trial"):
            path = f"trial.{key}"
            if key not in _TRIAL_KEYS:
                raise ConfigError(path, "unknown key")
            if key in ("x", "y", "z"):
                pos["xyz".index(key)] = _convert(raw, 0.0, path)
            elif key == "yaw_deg":
                kw["yaw"] = math.radians(_convert(raw, 0.0, path))
            else:
                kw[key] = _convert(raw, getattr(base, key), path)
    kw["position"] = tuple(pos)

    gains = {}
    for axis in ("y", "z", "yaw"):
        sec = f"gains.{axis}"
        g = getattr(base.gains, axis)
        if cp.has_section(sec):
            g = _update(g, cp.items(sec), sec)
        gains[axis] = g
    mission = base.mission
    thresholds = base.thresholds
    if cp.has_section("thresholds"):
        thresholds = _update(thresholds, cp.items("thresholds"), "thresholds")
    camera = base.camera
    if cp.has_section("camera"):
        camera = _update(camera, cp.items("camera"), "camera")
    if cp.has_section("mission"):
        mission = _update(mission, cp.items("mission"), "mission")
    try:
        mission = replace(mission, gains=PidGains(**gains), thresholds=thresholds, camera=camera)
    except ValueError as e:
        raise ConfigError("mission", str(e)) from None

    simple = {"disturbance": base.disturbance, "world": base.world, "body": base.body,
              "vision": base.vision, "homography": base.homography, "odometry": base.odometry}
    for sec, obj in simple.items():
        kw[sec] = _update(obj, cp.items(sec), sec) if cp.has_section(sec) else obj

    known = {"trial", "mission", "thresholds", "camera", "gains.y", "gains.z", "gains.yaw", *simple}
    for sec in cp.sections():
        if sec not in known:
            raise ConfigError(sec, "unknown section")
    return TrialConfig(mission=mission, **kw)


def load_config(path) -> TrialConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(str(path), e.strerror or str(e)) from None
    cfg = parse_config(text, str(path))
    if not any(k.strip().startswith("name") for k in text.splitlines()):
        cfg = replace(cfg, name=path.stem)
    return cfg


# ---------------------------------------------------------------- template

def reference_pose(world: BoxWorld, distance: float) -> Pose:
    """Ideal in-box pose facing the exit window from ``distance`` metres."""
    c = world.window_center()
    return Pose.at(c[0] + distance, c[1], c[2], yaw=math.pi)


def template_from_pose(world: BoxWorld, pose: Pose, k: CameraIntrinsics, image: np.ndarray,
                       hcfg: HomographyConfig | None = None) -> ReferenceTemplate:
    quad = world.true_window_quad_px(pose, k)
    if quad is None:
        raise ValueError("exit window is behind the camera")
    corners = order_corners(quad)
    lt, lb, rt, rb = corners
    center = polygon_centroid(np.array([lt, lb, rb, rt]))
    return make_template(image, corners, center, hcfg)


def build_reference_template(cfg: TrialConfig) -> ReferenceTemplate:
    """Noise-free pre-mission reference image of the exit window."""
    pose = reference_pose(cfg.world, cfg.reference_distance)
    img = render_camera(cfg.world, pose, cfg.camera, noise_sigma=0.0)
    return template_from_pose(cfg.world, pose, cfg.camera, img, cfg.homography)


# ------------------------------------------------------------------- log

COLUMNS = ("t", "phase", "phase_out", "y_e", "z_e", "psi_e", "depth",
           "x", "y", "z", "roll", "pitch", "yaw",
           "odom_x", "odom_y", "odom_z", "odom_yaw",
           "vx", "vy", "vz", "wz", "clearance")


@dataclass
class TrialLog:
    name: str
    seed: int
    rows: list  # tuples in COLUMNS order; phases as Phase
    verdict: str = "aborted"
    reason: str = ""
    transitions: list = field(default_factory=list)  # (t, Phase)

    @property
    def min_clearance(self) -> float:
        return min((r[-1] for r in self.rows), default=math.inf)

    def column(self, name: str) -> np.ndarray:
        i = COLUMNS.index(name)
        if name in ("phase", "phase_out"):
            return np.array([int(r[i]) for r in self.rows])
        return np.array([r[i] for r in self.rows], dtype=float)

    def transition_rows(self, src: Phase, dst: Phase) -> list:
        """Rows whose tick began in ``src`` and ended in ``dst``."""
        return [r for r in self.rows if r[1] == src and r[2] == dst]

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# schema={SCHEMA}\n")
        buf.write(f"# name={self.name}\n# seed={self.seed}\n# verdict={self.verdict}\n")
        buf.write(f"# reason={self.reason}\n")
        buf.write("# transitions=" + ";".join(f"{t:.4f}:{p.name}" for t, p in self.transitions) + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COLUMNS)
        for r in self.rows:
            w.writerow([f"{r[0]:.4f}", r[1].name, r[2].name] + [repr(float(v)) for v in r[3:]])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "TrialLog":
        lines = text.splitlines()
        meta = {}
        body_start = 0
        for i, line in enumerate(lines):
            if not line.startswith("#"):
                body_start = i
                break
            key, _, val = line[1:].strip().partition("=")
            meta[key] = val
        if meta.get("schema") != str(SCHEMA):
            raise ValueError(f"unsupported schema {meta.get('schema')!r}")
        reader = csv.reader(lines[body_start:])
        header = next(reader)
        if tuple(header) != COLUMNS:
            raise ValueError("unexpected CSV header")
        rows = []
        for rec in reader:
            rows.append((round(float(rec[0]), 4), Phase[rec[1]], Phase[rec[2]],
                         *(float(v) for v in rec[3:])))
        trans = []
        if meta.get("transitions"):
            for item in meta["transitions"].split(";"):
                t, _, p = item.partition(":")
                trans.append((round(float(t), 4), Phase[p]))
        return cls(meta["name"], int(meta["seed"]), rows, meta["verdict"], meta.get("reason", ""), trans)


# ------------------------------------------------------------------- loop

def _streams(seed: int):
    ss = np.random.SeedSequence(seed)
    return [np.random.default_rng(s) for s in ss.spawn(3)]


def run_trial(cfg: TrialConfig, template: ReferenceTemplate | None = None,
              dump_frames: str | os.PathLike | None = None) -> TrialLog:
    """Fly one trial to Done, Aborted, collision or timeout."""
    img_rng, dist_rng, odom_rng = _streams(cfg.seed)
    k = cfg.camera
    mcfg = cfg.mission
    dt = cfg.dt
    if template is None and cfg.reference_mode == "premission":
        template = build_reference_template(cfg)
    dump = Path(dump_frames) if dump_frames is not None else None
    if dump is not None:
        dump.mkdir(parents=True, exist_ok=True)

    s = UavState(np.array(cfg.position), attitude=Pose.at(*cfg.position, yaw=cfg.yaw).attitude)
    odo = Odometer(cfg.position, cfg.yaw, cfg.odometry)
    ms = MissionState()
    log = TrialLog(cfg.name, cfg.seed, [])
    tick = 0
    while True:
        t = round(tick * dt, 4)
        ms.time = t
        phase0 = ms.phase
        obs = None
        if phase0 in (Phase.ALIGN_ENTRY, Phase.ALIGN_EXIT):
            frame = render_camera(cfg.world, s.pose, k, cfg.image_noise, img_rng)
            if dump is not None:
                write_pgm(dump / f"frame_{tick:05d}.pgm", frame)
            if phase0 == Phase.ALIGN_ENTRY:
                obs = observe_target(frame, k.fx, cfg.vision)
            else:
                if template is None:  # waypoint capture: first exit-phase frame becomes the reference
                    template = template_from_pose(cfg.world, s.pose, k, frame, cfg.homography)
                obs = estimate_center_partial(template, frame, k.fx, cfg.homography)
        odom = read_odometry(odo, s)
        cmd, ms = mission_step(ms, obs, odom, mcfg, dt)
        clearance = collision_check(s.position, s.attitude.yaw_psi, cfg.world, cfg.body)
        a = s.attitude
        log.rows.append((t, phase0, ms.phase, *map(float, ms.errors),
                         *map(float, s.position), a.roll_phi, a.pitch_theta, a.yaw_psi,
                         *map(float, odom.position), float(odom.yaw),
                         cmd.vx, cmd.vy, cmd.vz, cmd.wz, clearance))
        if clearance < 0:
            log.verdict, log.reason = "collision", f"clearance {clearance:.4f} m"
            break
        if ms.phase == Phase.DONE:
            if cfg.world.inside(s.position):
                log.verdict, log.reason = "aborted", "finished inside the box"
            else:
                log.verdict = "success"
            break
        if ms.phase == Phase.ABORTED:
            log.verdict, log.reason = "aborted", ms.abort_reason
            break
        if round((tick + 1) * dt, 4) > cfg.timeout:
            log.verdict, log.reason = "aborted", f"timeout at {t:.4f} s in {ms.phase.name}"
            break
        d = disturbance(s.position, cfg.world, cfg.disturbance, dist_rng)
        s = step_dynamics(s, cmd, d, dt, cfg.tau)
        odo.update(cmd, dt, odom_rng)
        tick += 1
    log.transitions = [(round(t, 4), p) for t, p in ms.transitions]
    return log


# ------------------------------------------------------------------ suite

@dataclass
class SuiteResult:
    names: list
    verdicts: list
    reasons: list
    min_clearances: list
    paths: list

    @property
    def all_success(self) -> bool:
        return all(v == "success" for v in self.verdicts)

    @property
    def exit_code(self) -> int:
        return 0 if self.all_success else 1


def _run_and_write(args):
    cfg, outdir = args
    log = run_trial(cfg)
    path = Path(outdir) / f"{cfg.name}_seed{cfg.seed}.csv"
    path.write_text(log.to_csv())
    return log.name, log.verdict, log.reason, log.min_clearance, str(path)


def run_suite(configs, outdir, jobs: int = 1) -> SuiteResult:
    """Run trials (optionally in worker processes); writes one CSV per trial plus summary.csv."""
    configs = list(configs)
    if not configs:
        raise ValueError("suite needs at least one trial")
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    work = [(c, str(outdir)) for c in configs]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_run_and_write, work))
    else:
        results = [_run_and_write(w) for w in work]
    res = SuiteResult(*map(list, zip(*results)))
    with open(outdir / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("trial", "seed", "verdict", "min_clearance", "reason", "csv"))
        for c, (name, verdict, reason, mc, path) in zip(configs, results):
            w.writerow((name, c.seed, verdict, f"{mc:.4f}", reason, Path(path).name))
    return res


def load_suite(directory) -> list[TrialConfig]:
    paths = sorted(Path(directory).glob("*.cfg"))
    return [load_config(p) for p in paths]


# ------------------------------------------------------------------ plots

_PLOT_SCRIPT = '''"""Four-panel error/depth plot for trial {name!r} (generated)."""
import csv
from pathlib import Path

import matplotlib.pyplot as plt

here = Path(__file__).resolve().parent


def series(name):
    with open(here / f"{{name}}.csv") as fh:
        rows = list(csv.reader(fh))[1:]
    return [float(r[0]) for r in rows], [float(r[1]) for r in rows]


with open(here / "events.csv") as fh:
    events = [(float(r[0]), r[1]) for r in list(csv.reader(fh))[1:]]

panels = [("y_e", "Y error (m)"), ("z_e", "Z error (m)"), ("psi_e", "yaw error (px)"), ("depth", "depth (m)")]
fig, axes = plt.subplots(2, 2, figsize=(10, 7), sharex=True)
for ax, (key, label) in zip(axes.flat, panels):
    t, v = series(key)
    ax.plot(t, v, lw=1.2)
    ax.set_ylabel(label)
    ax.grid(alpha=0.3)
    for te, phase in events:
        style = "-." if phase == "TRAVERSE_IN" else ":" if phase == "TRAVERSE_OUT" else "--"
        ax.axvline(te, color="k", ls=style, lw=0.8)
for ax in axes[1]:
    ax.set_xlabel("time (s)")
fig.suptitle({name!r})
fig.tight_layout()
fig.savefig(here / "errors.png", dpi=120)
'''


def emit_plots(log: TrialLog, outdir) -> dict:
    """Write per-quantity CSV series, phase events and a matplotlib script; returns the paths."""
    if not log.rows:
        raise ValueError("empty trial log")
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    t = log.column("t")
    paths = {}
    for key in ("y_e", "z_e", "psi_e", "depth"):
        p = outdir / f"{key}.csv"
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("t", key))
            for ti, v in zip(t, log.column(key)):
                w.writerow((f"{ti:.4f}", repr(float(v))))
        paths[key] = p
    p = outdir / "events.csv"
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("t", "phase"))
        for te, phase in log.transitions:
            w.writerow((f"{te:.4f}", phase.name))
    paths["events"] = p
    p = outdir / "plot_errors.py"
    p.write_text(_PLOT_SCRIPT.format(name=log.name))
    paths["script"] = p
    return paths


__all__ = [
    "AxisGains", "ConfigError", "SuiteResult", "TrialConfig", "TrialLog", "build_reference_template",
    "emit_plots", "load_config", "load_suite", "parse_config", "run_suite", "run_trial",
    "TELLO_CAMERA",
]
