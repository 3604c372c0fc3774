"""Walk one rendered frame through the entry-side perception chain.

A camera 2 m in front of the box looks at the entrance window. We render the
frame, run edge detection and contour tracing, pick the window contour, and
turn its pixel offset into a metric error in the UAV frame.

    python demos/perception_walkthrough.py
"""
import numpy as np

from boxnav.geometry import TELLO_CAMERA as K
from boxnav.geometry import Pose, error_to_uav, image_error
from boxnav.sim.render import render_camera
from boxnav.sim.world import BoxWorld
from boxnav.vision import canny_edges, extract_contours, observe_target

world = BoxWorld()
c = world.window_center()
pose = Pose.at(c[0] - 2.0, c[1] - 0.10, c[2] + 0.05)
print("camera 2.00 m from the window, 0.10 m left of and 0.05 m below its centre")

img = render_camera(world, pose, K, noise_sigma=2.0, rng=np.random.default_rng(0))
edges = canny_edges(img)
contours = extract_contours(edges)
print(f"edge pixels: {int(edges.sum())}, closed contours: {len(contours)}")

obs = observe_target(img, K.fx)
if obs is None:
    raise SystemExit("window not found")
truth = world.true_window_center_px(pose, K)
print(f"window centre   ({obs.center.u:7.2f}, {obs.center.v:7.2f}) px, "
      f"renderer truth ({truth.u:7.2f}, {truth.v:7.2f}) px")
print(f"apparent width  {obs.apparent_width:.1f} px  ->  depth {obs.depth:.3f} m (true 2.000 m)")
print(f"yaw error       {obs.yaw_error} px (left minus right edge height)")

ref = (K.width / 2, K.height / 2)
e = image_error(obs.center, ref)
m = error_to_uav(e, obs.depth, K, pose.attitude, mode="zeroed")
print(f"pixel error     ({e[0]:+.1f}, {e[1]:+.1f}) px")
print(f"metric error    y {m.y:+.3f} m (right positive), z {m.z:+.3f} m (down positive)")
