"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``PASS``/``FAIL criterion N`` line (visible in
``pytest -v`` output) before asserting.
"""
import math
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
import shapely

from boxnav.control import Phase, Thresholds
from boxnav.geometry import TELLO_CAMERA as K
from boxnav.geometry import (
    Attitude,
    Pose,
    camera_to_world,
    camera_to_world_rotation,
    pixel_to_camera,
    project_points,
)
from boxnav.harness import COLUMNS, TrialConfig, build_reference_template, load_suite, run_trial
from boxnav.homography import (
    estimate_center_partial,
    estimate_homography_ransac,
    normalize_h,
    symmetric_transfer_error,
)
from boxnav.sim.render import render_camera
from boxnav.sim.scenarios import sample_partial_views
from boxnav.sim.world import BoxWorld
from boxnav.vision import observe_target
from helpers import correspondences

TRIALS = Path(__file__).resolve().parents[1] / "trials" / "paper"
SEEDS = range(5)
TH = Thresholds()
WORLD = BoxWorld()
col = COLUMNS.index


def report(capsys, n, ok, detail):
    with capsys.disabled():
        print(f"\n{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
    assert ok, detail


@pytest.fixture(scope="module")
def runs():
    """The six checked-in trials, five seeds each."""
    out = {}
    for cfg in load_suite(TRIALS):
        for s in SEEDS:
            out[(cfg.name, s)] = run_trial(replace(cfg, seed=s))
    return out


def test_criterion_1_mission_success(runs, capsys):
    bad = [(k, log.verdict, log.reason) for k, log in runs.items()
           if log.verdict != "success" or not log.min_clearance > 0 or log.rows[-1][0] > 120]
    worst = min(log.min_clearance for log in runs.values())
    longest = max(log.rows[-1][0] for log in runs.values())
    report(capsys, 1, len(runs) == 30 and not bad,
           f"{30 - len(bad)}/30 runs succeed; min clearance {worst:.3f} m; longest {longest:.1f} s; failures {bad}")


def test_criterion_2_threshold_semantics(runs, capsys):
    problems = []
    for k, log in runs.items():
        entry = log.transition_rows(Phase.ALIGN_ENTRY, Phase.TRAVERSE_IN)
        exit_ = log.transition_rows(Phase.ALIGN_EXIT, Phase.TRAVERSE_OUT)
        if len(entry) != 1 or len(exit_) != 1:
            problems.append((k, "missing transition"))
            continue
        r = entry[0]
        d, y, z, psi = r[col("depth")], r[col("y_e")], r[col("z_e")], r[col("psi_e")]
        if not (TH.d_t1 < d < TH.d_t2 and abs(y) < TH.y_t and abs(z) < TH.z_t and abs(psi) < TH.psi_t):
            problems.append((k, "entry", d, y, z, psi))
        r = exit_[0]
        d, y, z = r[col("depth")], r[col("y_e")], r[col("z_e")]
        if not (TH.d_t3 < d < TH.d_t4 and abs(y) < TH.y_t and abs(z) < TH.z_t):
            problems.append((k, "exit", d, y, z))
    report(capsys, 2, not problems, f"entry and exit transition rows satisfy the thresholds; violations {problems}")


def test_criterion_3_error_decrease(runs, capsys):
    problems = []
    worst = 0.0
    for k, log in runs.items():
        start = next(r for r in log.rows if np.isfinite(r[col("y_e")]))
        r = log.transition_rows(Phase.ALIGN_ENTRY, Phase.TRAVERSE_IN)[0]
        for name in ("y_e", "z_e"):
            ratio = abs(r[col(name)]) / abs(start[col(name)])
            worst = max(worst, ratio)
            if ratio > 0.2:
                problems.append((k, name, ratio))
        if not abs(r[col("psi_e")]) < 6:
            problems.append((k, "psi_e", r[col("psi_e")]))
    report(capsys, 3, not problems, f"worst |error| ratio at transition {worst:.3f} (limit 0.20); violations {problems}")


def test_criterion_4_depth_accuracy(capsys):
    rng = np.random.default_rng(2024)
    c = WORLD.window_center()
    errs = []
    while len(errs) < 100:
        d = rng.uniform(0.8, 3.0)
        pose = Pose.at(c[0] - d, c[1] + rng.uniform(-0.05, 0.05) * d, c[2] + rng.uniform(-0.05, 0.05) * d)
        uv, ok = project_points(WORLD.window_corners(), pose, K)
        if not (ok.all() and np.all((uv > 2) & (uv < [K.width - 3, K.height - 3]))):
            continue  # full visibility only
        obs = observe_target(render_camera(WORLD, pose, K, 2.0, rng), K.fx)
        errs.append(math.inf if obs is None else abs(obs.depth - d) / d)
    p95 = float(np.percentile(errs, 95))
    report(capsys, 4, p95 <= 0.05,
           f"95th percentile relative depth error {100 * p95:.2f}% over 100 frames (limit 5%), "
           f"{sum(math.isinf(e) for e in errs)} without detection")


def test_criterion_5_homography_robustness(capsys):
    good = 0
    for seed in range(100):
        src, dst, _, inl = correspondences(np.random.default_rng(seed), 100, 0.3, 1.0)
        try:
            H, _ = estimate_homography_ransac(src, dst, 3.0, 2000, seed=seed)
        except ValueError:
            continue
        good += symmetric_transfer_error(H, src[inl], dst[inl]).mean() <= 2.0
    src, dst, Hm, _ = correspondences(np.random.default_rng(12345), 100, 0.0, 0.0)
    H, _ = estimate_homography_ransac(src, dst, 3.0, 2000, seed=0)
    exact = float(np.abs(H - normalize_h(Hm)).max())
    report(capsys, 5, good >= 95 and exact <= 1e-6,
           f"{good}/100 noisy runs with mean inlier transfer error <= 2 px; clean-data max |dH| {exact:.1e}")


def test_criterion_6_partial_view_center(capsys):
    tpl = build_reference_template(TrialConfig())
    views = sample_partial_views(WORLD, K, 50, seed=6)
    rng = np.random.default_rng(6)
    errs, fractions_ok = [], True
    for pose, frac in views:
        lt, lb, rt, rb = WORLD.true_window_quad_px(pose, K)
        quad = shapely.Polygon([lt, lb, rb, rt])
        f_shapely = 1 - quad.intersection(shapely.box(0, 0, K.width, K.height)).area / quad.area
        fractions_ok &= abs(f_shapely - frac) < 1e-9 and 0.3 <= f_shapely <= 0.6
        obs = estimate_center_partial(tpl, render_camera(WORLD, pose, K, 2.0, rng), K.fx)
        truth = WORLD.true_window_center_px(pose, K)
        errs.append(None if obs is None else math.dist(obs.center, truth))
    accepted = [e for e in errs if e is not None]
    within = sum(e <= 5.0 for e in accepted)
    worst = max(accepted) if accepted else math.nan
    report(capsys, 6, fractions_ok and within >= 45 and all(e <= 10.0 for e in accepted),
           f"{within}/50 frames within 5 px, {50 - len(accepted)} rejected, worst accepted error {worst:.2f} px")


def test_criterion_7_exit_yaw_contract(runs, capsys):
    n, bad = 0, []
    exit_phases = (Phase.ALIGN_EXIT, Phase.TRAVERSE_OUT)
    for k, log in runs.items():
        for r in log.rows:
            if r[1] in exit_phases or r[2] in exit_phases:
                n += 1
                if r[col("wz")] != 0.0 or r[col("psi_e")] != 0.0:
                    bad.append((k, r[0]))
    report(capsys, 7, n > 0 and not bad, f"{n} exit-phase ticks with wz = 0 and psi_e = 0; violations {bad[:5]}")


def test_criterion_8_geometry_oracles(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(8)
    px = rng.uniform([0, 0], [K.width, K.height], (10_000, 2))
    depth = rng.uniform(0.05, 50.0, 10_000)
    cam = Pose.at(*rng.uniform(-5, 5, 3), *rng.uniform(-0.5, 0.5, 2), yaw=rng.uniform(-math.pi, math.pi))
    world = np.array([camera_to_world(pixel_to_camera(p, d, K), cam).array for p, d in zip(px, depth)])
    uv, ok = project_points(world, cam, K)
    trip = float(np.abs(uv - px).max())

    ortho = norm = 0.0
    for roll, pitch, yaw in rng.uniform(-math.pi, math.pi, (10_000, 3)):
        R = camera_to_world_rotation(Attitude(roll / 2, pitch / 2, yaw))
        ortho = max(ortho, float(np.abs(R.T @ R - np.eye(3)).max()))
        v = rng.normal(size=3)
        norm = max(norm, abs(np.linalg.norm(R @ v) - np.linalg.norm(v)))
    elapsed = time.perf_counter() - t0
    report(capsys, 8, ok.all() and trip <= 1e-9 and ortho <= 1e-12 and norm <= 1e-12 and elapsed < 5.0,
           f"round trip max {trip:.1e} px, orthonormality {ortho:.1e}, norm change {norm:.1e}, {elapsed:.2f} s")


def test_criterion_9_determinism(runs, capsys):
    cfg = next(c for c in load_suite(TRIALS) if c.name == "o1_yaw_neg20")
    again = run_trial(replace(cfg, seed=3)).to_csv()
    same = again == runs[("o1_yaw_neg20", 3)].to_csv()
    report(capsys, 9, same, "re-run of o1_yaw_neg20 seed 3 gives a byte-identical CSV" if same
           else "re-run CSV differs")
