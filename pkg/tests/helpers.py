"""Shared synthetic data for the test suite."""
import numpy as np
from scipy import ndimage

W, H = 480, 360


def random_homography(rng):
    a, b, c, d = rng.uniform(-0.15, 0.15, 4)
    tx, ty = rng.uniform(-30, 30, 2)
    g, h = rng.uniform(-3e-4, 3e-4, 2)
    return np.array([[1 + a, b, tx], [c, 1 + d, ty], [g, h, 1.0]])


def map_points(Hm, pts):
    q = np.column_stack([pts, np.ones(len(pts))]) @ Hm.T
    return q[:, :2] / q[:, 2:3]


def correspondences(rng, n=100, outlier_frac=0.3, noise=1.0, Hm=None):
    """Pairs under a random H; returns (src, dst, H, inlier_mask)."""
    Hm = random_homography(rng) if Hm is None else Hm
    src = rng.uniform([20, 20], [W - 20, H - 20], size=(n, 2))
    dst = map_points(Hm, src)
    n_out = int(round(outlier_frac * n))
    inl = np.ones(n, bool)
    inl[rng.choice(n, n_out, replace=False)] = False
    dst = dst + rng.normal(0, noise, dst.shape) * inl[:, None]
    # outliers land anywhere in the frame but far from their true image
    for i in np.flatnonzero(~inl):
        true = dst[i].copy()
        while np.hypot(*(dst[i] - true)) < 20:
            dst[i] = rng.uniform([0, 0], [W, H])
    return src, dst, Hm, inl


def warp_image(img, Hm):
    """Resample ``img`` so that pixel p of the result shows ``img`` at H^-1 p."""
    Hi = np.linalg.inv(Hm)
    vv, uu = np.mgrid[0 : img.shape[0], 0 : img.shape[1]]
    src = map_points(Hi, np.column_stack([uu.ravel(), vv.ravel()]).astype(float))
    out = ndimage.map_coordinates(img.astype(float), [src[:, 1], src[:, 0]], order=1, mode="nearest")
    return np.clip(np.rint(out), 0, 255).astype(np.uint8).reshape(img.shape)
