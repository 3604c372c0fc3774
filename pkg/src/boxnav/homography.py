"""Exit-phase perception: window center from a partial view.

Corners are detected in a stored reference image and in the current frame,
described by small normalised intensity patches, matched with a ratio test,
and related by a RANSAC homography.  The reference window outline is then
carried into the current frame, so the center is available even when most of
the window is off-screen.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .geometry import PixelPoint
from .pgm import read_pgm, write_pgm
from .vision import (
    WINDOW_WIDTH_M,
    TargetObservation,
    apparent_width,
    estimate_depth,
    min_eigen_response,
    pick_peaks,
    polygon_centroid,
    quad_is_convex,
)


class HomographyError(ValueError):
    """Degenerate input or a failed robust fit."""


@dataclass
class Keypoints:
    positions: np.ndarray  # (N, 2) (u, v)
    responses: np.ndarray  # (N,)
    descriptors: np.ndarray  # (N, D), unit norm

    def __len__(self):
        return len(self.positions)

    @classmethod
    def empty(cls, dim: int = 64) -> "Keypoints":
        return cls(np.zeros((0, 2)), np.zeros(0), np.zeros((0, dim)))


@dataclass
class Matches:
    ref_points: np.ndarray  # (M, 2)
    cur_points: np.ndarray  # (M, 2)
    distance: np.ndarray  # (M,)
    ratio: np.ndarray  # (M,) best / second-best distance
    ref_index: np.ndarray
    cur_index: np.ndarray

    def __len__(self):
        return len(self.ref_points)


@dataclass
class ReferenceTemplate:
    image: np.ndarray
    window_corners: np.ndarray  # (4, 2) LT, LB, RT, RB
    window_center: PixelPoint
    keypoints: Keypoints | None = None

    def save(self, pgm_path) -> tuple[Path, Path]:
        pgm_path = Path(pgm_path)
        write_pgm(pgm_path, self.image)
        side = pgm_path.with_suffix(".txt")
        pts = list(np.asarray(self.window_corners)) + [np.asarray(self.window_center)]
        side.write_text("".join(f"{int(round(u))} {int(round(v))}\n" for u, v in pts))
        return pgm_path, side

    @classmethod
    def load(cls, pgm_path, cfg: "HomographyConfig | None" = None) -> "ReferenceTemplate":
        pgm_path = Path(pgm_path)
        img = read_pgm(pgm_path)
        rows = [line.split() for line in pgm_path.with_suffix(".txt").read_text().splitlines() if line.strip()]
        if len(rows) != 5:
            raise ValueError("template sidecar needs 4 corner lines and 1 center line")
        pts = np.array([[int(a), int(b)] for a, b in rows], dtype=float)
        return make_template(img, pts[:4], PixelPoint(*pts[4]), cfg)


@dataclass
class HomographyConfig:
    max_features: int = 400
    min_distance: float = 6.0
    quality_level: float = 0.01
    min_response: float = 1e-5
    window_sigma: float = 1.5
    patch_size: int = 8
    patch_spacing: float = 1.5
    descriptor_sigma: float = 1.0
    ratio: float = 0.75
    inlier_threshold: float = 3.0
    max_iterations: int = 2000
    confidence: float = 0.995
    min_inliers: int = 8
    min_inlier_fraction: float = 0.2
    real_width: float = WINDOW_WIDTH_M
    seed: int = 0


def make_template(image, window_corners, window_center, cfg: HomographyConfig | None = None) -> ReferenceTemplate:
    cfg = cfg or HomographyConfig()
    return ReferenceTemplate(
        image=np.asarray(image, dtype=np.uint8),
        window_corners=np.asarray(window_corners, dtype=float).reshape(4, 2),
        window_center=PixelPoint(*map(float, window_center)),
        keypoints=detect_features(image, cfg.max_features, cfg),
    )


# ------------------------------------------------------------- features

def describe(img, positions, size: int = 8, spacing: float = 1.5, sigma: float = 1.0):
    """Mean-subtracted, unit-norm ``size`` x ``size`` patches sampled bilinearly.

    Returns ``(descriptors, keep)`` where ``keep`` flags positions whose patch
    lies inside the image and has some contrast.
    """
    g = ndimage.gaussian_filter(np.asarray(img, dtype=np.float64), sigma)
    p = np.asarray(positions, dtype=float).reshape(-1, 2)
    offs = (np.arange(size) - (size - 1) / 2.0) * spacing
    ox, oy = np.meshgrid(offs, offs)
    us = p[:, 0:1] + ox.ravel()[None, :]
    vs = p[:, 1:2] + oy.ravel()[None, :]
    h, w = g.shape
    reach = offs[-1] + 1.0
    keep = (p[:, 0] >= reach) & (p[:, 0] <= w - 1 - reach) & (p[:, 1] >= reach) & (p[:, 1] <= h - 1 - reach)
    if len(p) == 0:
        return np.zeros((0, size * size)), keep
    d = ndimage.map_coordinates(g, [vs.ravel(), us.ravel()], order=1, mode="nearest").reshape(len(p), -1)
    d -= d.mean(axis=1, keepdims=True)
    n = np.linalg.norm(d, axis=1)
    keep &= n > 1e-6
    d /= np.where(n > 1e-6, n, 1.0)[:, None]
    return d, keep


def detect_features(img, max_count: int = 400, cfg: HomographyConfig | None = None) -> Keypoints:
    """Min-eigenvalue corners with patch descriptors; empty for textureless images."""
    cfg = cfg or HomographyConfig()
    if max_count < 8:
        raise ValueError("max_count must be at least 8")
    resp = min_eigen_response(img, cfg.window_sigma)
    top = float(resp.max()) if resp.size else 0.0
    if top <= cfg.min_response:
        return Keypoints.empty(cfg.patch_size ** 2)
    # over-detect, since border keypoints are dropped by the descriptor
    pts = pick_peaks(resp, int(max_count * 1.5), cfg.min_distance, max(cfg.quality_level * top, cfg.min_response))
    desc, keep = describe(img, pts, cfg.patch_size, cfg.patch_spacing, cfg.descriptor_sigma)
    pts, desc = pts[keep][:max_count], desc[keep][:max_count]
    return Keypoints(pts.astype(float), resp[pts[:, 1], pts[:, 0]] if len(pts) else np.zeros(0), desc)


def match_features(ref: Keypoints, cur: Keypoints, ratio_threshold: float = 0.75) -> Matches:
    """Two-nearest-neighbour descriptor matching with Lowe's ratio test."""
    if not 0 < ratio_threshold < 1:
        raise ValueError("ratio_threshold must be in (0, 1)")
    empty = Matches(np.zeros((0, 2)), np.zeros((0, 2)), np.zeros(0), np.zeros(0),
                    np.zeros(0, dtype=int), np.zeros(0, dtype=int))
    if len(ref) == 0 or len(cur) < 2:
        return empty
    sq = (np.sum(ref.descriptors ** 2, axis=1)[:, None] + np.sum(cur.descriptors ** 2, axis=1)[None, :]
          - 2.0 * ref.descriptors @ cur.descriptors.T)
    dist = np.sqrt(np.maximum(sq, 0.0))
    nn = np.argpartition(dist, 1, axis=1)[:, :2]
    rows = np.arange(len(ref))
    d_a, d_b = dist[rows, nn[:, 0]], dist[rows, nn[:, 1]]
    first = np.where(d_a <= d_b, nn[:, 0], nn[:, 1])
    d1, d2 = np.minimum(d_a, d_b), np.maximum(d_a, d_b)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(d2 > 0, d1 / d2, 1.0)
    ok = ratio < ratio_threshold
    return Matches(ref.positions[ok], cur.positions[first[ok]], d1[ok], ratio[ok],
                   rows[ok], first[ok])


# ------------------------------------------------------------ estimation

def normalize_points(pts):
    """Hartley normalisation: centroid to origin, mean distance sqrt(2)."""
    p = np.asarray(pts, dtype=float)
    c = p.mean(axis=0)
    d = np.sqrt(((p - c) ** 2).sum(axis=1)).mean()
    if d < 1e-12:
        raise HomographyError("coincident points")
    s = math.sqrt(2.0) / d
    T = np.array([[s, 0.0, -s * c[0]], [0.0, s, -s * c[1]], [0.0, 0.0, 1.0]])
    return (p - c) * s, T


def normalize_h(H) -> np.ndarray:
    H = np.asarray(H, dtype=float)
    if abs(H[2, 2]) > 1e-10:
        return H / H[2, 2]
    return H / np.linalg.norm(H)


def dlt_homography(src, dst) -> np.ndarray:
    """Normalised DLT homography mapping ``src`` (N, 2) onto ``dst`` (N, 2), N >= 4."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    n = len(src)
    if n < 4 or len(dst) != n:
        raise HomographyError("need at least 4 point pairs")
    a, Ta = normalize_points(src)
    b, Tb = normalize_points(dst)
    x, y = a[:, 0], a[:, 1]
    u, v = b[:, 0], b[:, 1]
    z, o = np.zeros(n), np.ones(n)
    A = np.zeros((2 * n, 9))
    A[0::2] = np.column_stack([-x, -y, -o, z, z, z, u * x, u * y, u])
    A[1::2] = np.column_stack([z, z, z, -x, -y, -o, v * x, v * y, v])
    _, s, vt = np.linalg.svd(A)
    # rank 8 is required; an exact 4-point fit has s[8] == 0 and s[7] > 0
    if s[7] < 1e-8 * s[0]:
        raise HomographyError("rank-deficient system (collinear or repeated points)")
    Hn = vt[-1].reshape(3, 3)
    H = np.linalg.solve(Tb, Hn @ Ta)
    H = normalize_h(H)
    if abs(np.linalg.det(H)) < 1e-10:
        raise HomographyError("singular homography")
    return H


def apply_h(H, pts) -> np.ndarray:
    p = np.asarray(pts, dtype=float).reshape(-1, 2)
    q = np.column_stack([p, np.ones(len(p))]) @ np.asarray(H).T
    w = q[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        return q[:, :2] / w[:, None]


def symmetric_transfer_error(H, src, dst) -> np.ndarray:
    """Per-pair mean of forward and backward reprojection distances (pixels)."""
    fwd = apply_h(H, src) - dst
    back = apply_h(np.linalg.inv(H), dst) - src
    e = 0.5 * (np.hypot(fwd[:, 0], fwd[:, 1]) + np.hypot(back[:, 0], back[:, 1]))
    return np.where(np.isfinite(e), e, np.inf)


def _collinear(p, tol: float = 1e-6) -> bool:
    for i, j, k in ((0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)):
        ab, ac = p[j] - p[i], p[k] - p[i]
        scale = max(np.dot(ab, ab), np.dot(ac, ac), 1e-12)
        if abs(ab[0] * ac[1] - ab[1] * ac[0]) < tol * scale:
            return True
    return False


def estimate_homography_ransac(src, dst, inlier_threshold: float = 3.0, max_iterations: int = 2000,
                               seed: int | np.random.Generator = 0, confidence: float = 0.995,
                               min_inliers: int = 8):
    """Robust homography from 4-point samples, refit by DLT on the consensus set.

    Returns ``(H, inlier_mask)``; raises :class:`HomographyError` when fewer
    than 4 pairs are given or the consensus is smaller than ``min_inliers``.
    """
    src = np.asarray(src, dtype=float).reshape(-1, 2)
    dst = np.asarray(dst, dtype=float).reshape(-1, 2)
    n = len(src)
    if n < 4:
        raise HomographyError("need at least 4 pairs")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    best_mask, best_count, best_err = None, 0, math.inf
    needed = max_iterations
    it = 0
    while it < min(needed, max_iterations):
        it += 1
        idx = rng.choice(n, 4, replace=False)
        if _collinear(src[idx]) or _collinear(dst[idx]):
            continue
        try:
            H = dlt_homography(src[idx], dst[idx])
        except HomographyError:
            continue
        err = symmetric_transfer_error(H, src, dst)
        mask = err < inlier_threshold
        count = int(mask.sum())
        if count > best_count or (count == best_count and count and err[mask].sum() < best_err):
            best_mask, best_count, best_err = mask, count, float(err[mask].sum())
            frac = count / n
            if frac >= 1.0:
                needed = it
            else:
                denom = math.log(max(1.0 - frac ** 4, 1e-12))
                needed = min(max_iterations, int(math.ceil(math.log(1.0 - confidence) / denom)))
    if best_mask is None or best_count < max(4, min_inliers):
        raise HomographyError(f"consensus too small ({best_count} inliers)")

    mask = best_mask
    H = dlt_homography(src[mask], dst[mask])
    for _ in range(3):
        new_mask = symmetric_transfer_error(H, src, dst) < inlier_threshold
        if new_mask.sum() < max(4, min_inliers) or np.array_equal(new_mask, mask):
            break
        mask = new_mask
        H = dlt_homography(src[mask], dst[mask])
    if mask.sum() < max(4, min_inliers):
        raise HomographyError(f"consensus too small ({int(mask.sum())} inliers)")
    return H, mask


def transfer_contour(H, template: ReferenceTemplate, fx: float, real_width: float = WINDOW_WIDTH_M) -> TargetObservation:
    """Carry the template's window outline into the current frame."""
    H = np.asarray(H, dtype=float)
    if abs(np.linalg.det(H)) < 1e-10:
        raise HomographyError("homography is not invertible")
    p = np.column_stack([template.window_corners, np.ones(4)]) @ H.T
    if np.any(np.abs(p[:, 2]) < 1e-9):
        raise HomographyError("window corner mapped to infinity")
    corners = p[:, :2] / p[:, 2:3]
    lt, lb, rt, rb = corners
    center = polygon_centroid(np.array([lt, lb, rb, rt]))
    wi = apparent_width(corners)
    if wi <= 0:
        raise HomographyError("transferred window has non-positive width")
    return TargetObservation(
        corners=corners,
        center=center,
        apparent_width=wi,
        depth=estimate_depth(wi, real_width, fx),
        yaw_error=0,
    )


@dataclass
class PartialEstimate:
    observation: TargetObservation
    H: np.ndarray
    n_matches: int
    n_inliers: int
    matches: Matches = field(repr=False, default=None)


def estimate_center_partial(template: ReferenceTemplate, current, fx: float,
                            cfg: HomographyConfig | None = None, details: bool = False):
    """Exit-window observation from a possibly partial view; ``None`` on any stage failure."""
    cfg = cfg or HomographyConfig()
    ref_kp = template.keypoints
    if ref_kp is None:
        ref_kp = detect_features(template.image, cfg.max_features, cfg)
    cur_kp = detect_features(current, cfg.max_features, cfg)
    if len(cur_kp) < 4:
        return None
    m = match_features(ref_kp, cur_kp, cfg.ratio)
    if len(m) < max(4, cfg.min_inliers):
        return None
    try:
        H, mask = estimate_homography_ransac(m.ref_points, m.cur_points, cfg.inlier_threshold,
                                             cfg.max_iterations, cfg.seed, cfg.confidence, cfg.min_inliers)
        if mask.sum() < cfg.min_inlier_fraction * len(m):
            return None
        obs = transfer_contour(H, template, fx, cfg.real_width)
    except (HomographyError, ValueError, np.linalg.LinAlgError):
        return None
    if not quad_is_convex(obs.corners):
        return None
    if details:
        return PartialEstimate(obs, H, len(m), int(mask.sum()), m)
    return obs
