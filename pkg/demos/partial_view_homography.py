"""Find the exit window's centre when much of it is outside the frame.

Inside the box the camera is too close to see the whole exit. A reference
image taken from a comfortable distance is matched against the current
frame; the homography fitted by RANSAC carries the known window outline
across, so the centre is recovered even when it is off-screen.

    python demos/partial_view_homography.py
"""
import math

import numpy as np

from boxnav.geometry import TELLO_CAMERA as K
from boxnav.harness import TrialConfig, build_reference_template
from boxnav.homography import estimate_center_partial
from boxnav.sim.render import render_camera
from boxnav.sim.scenarios import sample_partial_views
from boxnav.sim.world import BoxWorld

world = BoxWorld()
tpl = build_reference_template(TrialConfig())
print(f"reference: {len(tpl.keypoints)} keypoints, window centre at "
      f"({tpl.window_center[0]:.1f}, {tpl.window_center[1]:.1f}) px")

rng = np.random.default_rng(1)
print(f"{'outside':>8} {'matches':>8} {'inliers':>8} {'error px':>9}")
for pose, frac in sample_partial_views(world, K, 8, seed=1):
    img = render_camera(world, pose, K, 2.0, rng)
    est = estimate_center_partial(tpl, img, K.fx, details=True)
    truth = world.true_window_center_px(pose, K)
    if est is None:
        print(f"{frac:8.0%} {'-':>8} {'-':>8} {'rejected':>9}")
        continue
    err = math.dist(est.observation.center, truth)
    print(f"{frac:8.0%} {est.n_matches:8d} {est.n_inliers:8d} {err:9.2f}")
