"""Entry-phase perception: grayscale frame -> window observation.

Pipeline: Canny edges -> border following (Suzuki-Abe) -> pick the contour
shaped like the entrance window -> moment centroid -> min-eigenvalue corners
-> depth from apparent width -> trapezoid yaw error.

Images are plain 2-D ``uint8`` arrays indexed ``[row, col]``; points are
``(u, v) = (col, row)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .geometry import DomainError, PixelPoint

WINDOW_WIDTH_M = 0.48
WINDOW_HEIGHT_M = 0.28


class DegenerateContourError(ValueError):
    pass


@dataclass
class VisionConfig:
    canny_low: float = 50.0
    canny_high: float = 150.0
    canny_sigma: float = 1.4
    expected_aspect: float = WINDOW_WIDTH_M / WINDOW_HEIGHT_M
    # px^2; the window spans roughly 8e2 px^2 at 6 m and 6e4 px^2 at 0.7 m
    min_area: float = 400.0
    max_area: float = 120000.0
    max_aspect_deviation: float = 0.35
    real_width: float = WINDOW_WIDTH_M
    corner_margin: int = 6
    corner_window_sigma: float = 1.2
    corner_min_response: float = 2e-4


@dataclass
class Contour:
    points: np.ndarray  # (N, 2) pixel (u, v), traversal order
    is_outer: bool = True
    parent: int = -1

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 2)

    def __len__(self):
        return len(self.points)

    @property
    def perimeter(self) -> float:
        d = np.diff(np.vstack([self.points, self.points[:1]]), axis=0)
        return float(np.hypot(d[:, 0], d[:, 1]).sum())

    @property
    def signed_polygon_area(self) -> float:
        x, y = self.points[:, 0], self.points[:, 1]
        return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))

    @property
    def polygon_area(self) -> float:
        return abs(self.signed_polygon_area)

    @property
    def area(self) -> float:
        """Pixel area of the enclosed region, border pixels included (Pick's theorem)."""
        return self.polygon_area + len(self.points) / 2.0 + 1.0

    @property
    def bbox(self) -> tuple[float, float, float, float]:
        lo = self.points.min(axis=0)
        hi = self.points.max(axis=0)
        return float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1])

    @property
    def aspect(self) -> float:
        u0, v0, u1, v1 = self.bbox
        h = v1 - v0
        return (u1 - u0) / h if h > 0 else math.inf


@dataclass
class TargetObservation:
    corners: np.ndarray  # (4, 2): left-top, left-bottom, right-top, right-bottom
    center: PixelPoint
    apparent_width: float
    depth: float
    yaw_error: int
    contour: Contour | None = field(default=None, repr=False)


# ---------------------------------------------------------------- edges

def canny_edges(img, low_thresh: float = 50.0, high_thresh: float = 150.0, sigma: float = 1.4) -> np.ndarray:
    """Canny edge map as a boolean array the size of ``img``.

    Gradient magnitudes use the unnormalised 3x3 Sobel kernel, so thresholds
    are on the usual 0-255-image scale.
    """
    if not 0 <= low_thresh <= high_thresh:
        raise ValueError("need 0 <= low_thresh <= high_thresh")
    g = ndimage.gaussian_filter(np.asarray(img, dtype=np.float64), sigma)
    gx = ndimage.sobel(g, axis=1)
    gy = ndimage.sobel(g, axis=0)
    mag = np.hypot(gx, gy)

    # direction bins: 0 horizontal gradient, 1 diagonal (/), 2 vertical, 3 anti-diagonal (\)
    ang = np.rad2deg(np.arctan2(gy, gx)) % 180.0
    bins = np.zeros(mag.shape, dtype=np.int8)
    bins[(ang >= 22.5) & (ang < 67.5)] = 1
    bins[(ang >= 67.5) & (ang < 112.5)] = 2
    bins[(ang >= 112.5) & (ang < 157.5)] = 3

    p = np.pad(mag, 1)
    c = p[1:-1, 1:-1]
    nbr = {
        0: (p[1:-1, 2:], p[1:-1, :-2]),
        1: (p[2:, 2:], p[:-2, :-2]),
        2: (p[2:, 1:-1], p[:-2, 1:-1]),
        3: (p[2:, :-2], p[:-2, 2:]),
    }
    keep = np.zeros(mag.shape, dtype=bool)
    for b, (fwd, back) in nbr.items():
        # strict on one side so plateaus of equal magnitude stay one pixel wide
        keep |= (bins == b) & (c > fwd) & (c >= back)
    nms = np.where(keep, mag, 0.0)

    weak = nms >= max(low_thresh, 1e-9)
    strong = nms >= max(high_thresh, 1e-9)
    labels, n = ndimage.label(weak, structure=np.ones((3, 3)))
    if n == 0:
        return np.zeros(mag.shape, dtype=bool)
    has_strong = np.zeros(n + 1, dtype=bool)
    has_strong[labels[strong]] = True
    has_strong[0] = False
    edges = has_strong[labels]
    return _break_blocks(edges, mag)


def _break_blocks(edges: np.ndarray, mag: np.ndarray) -> np.ndarray:
    """Drop the weakest pixel of every fully-set 2x2 block."""
    e = edges.copy()
    for _ in range(4):
        blk = e[:-1, :-1] & e[1:, :-1] & e[:-1, 1:] & e[1:, 1:]
        if not blk.any():
            break
        for r, c in zip(*np.nonzero(blk)):
            if not (e[r, c] and e[r + 1, c] and e[r, c + 1] and e[r + 1, c + 1]):
                continue
            quad = [(r, c), (r + 1, c), (r, c + 1), (r + 1, c + 1)]
            rr, cc = min(quad, key=lambda q: mag[q])
            e[rr, cc] = False
    return e


# ------------------------------------------------------------- contours

# 8-neighbourhood in counterclockwise screen order (rows grow downward):
# E, NE, N, NW, W, SW, S, SE
_DI = (0, -1, -1, -1, 0, 1, 1, 1)
_DJ = (1, 1, 0, -1, -1, -1, 0, 1)


def extract_contours(edges, min_points: int = 4) -> list[Contour]:
    """Suzuki-Abe topological border following on a binary image.

    Returns outer borders and hole borders; ``parent`` indexes the enclosing
    border in the returned list (-1 for the image frame or a dropped border).
    Borders with fewer than ``min_points`` pixels are dropped.
    """
    b = np.asarray(edges) != 0
    h, w = b.shape
    w2 = w + 2
    pad = np.zeros((h + 2, w2), dtype=np.int8)
    pad[1:-1, 1:-1] = b
    f = pad.ravel().tolist()
    offs = [di * w2 + dj for di, dj in zip(_DI, _DJ)]
    dir_of = {o: d for d, o in enumerate(offs)}

    nbd = 1
    is_outer = {1: False}  # the frame counts as a hole border
    parent = {1: 0}
    traced = []  # (nbd, outer, [flat indices])
    row = -1
    lnbd = 1
    for k in np.flatnonzero(pad).tolist():
        r = k // w2
        if r != row:
            row, lnbd = r, 1
        fk = f[k]
        if fk == 1 and f[k - 1] == 0:
            outer, start = True, k - 1
        elif fk >= 1 and f[k + 1] == 0:
            outer, start = False, k + 1
            if fk > 1:
                lnbd = fk
        else:
            if fk != 1:
                lnbd = abs(fk)
            continue

        nbd += 1
        if outer:
            par = parent[lnbd] if is_outer[lnbd] else lnbd
        else:
            par = lnbd if is_outer[lnbd] else parent[lnbd]
        is_outer[nbd] = outer
        parent[nbd] = par

        d0 = dir_of[start - k]
        k1 = -1
        for s in range(8):
            kk = k + offs[(d0 - s) % 8]
            if f[kk] != 0:
                k1 = kk
                break
        if k1 < 0:
            f[k] = -nbd
            pts = [k]
        else:
            pts = []
            k2, k3 = k1, k
            while True:
                d2 = dir_of[k2 - k3]
                east_zero = False
                for s in range(1, 9):
                    d = (d2 + s) % 8
                    kk = k3 + offs[d]
                    if f[kk] != 0:
                        k4 = kk
                        break
                    if d == 0:
                        east_zero = True
                if east_zero:
                    f[k3] = -nbd
                elif f[k3] == 1:
                    f[k3] = nbd
                pts.append(k3)
                if k4 == k and k3 == k1:
                    break
                k2, k3 = k3, k4
        traced.append((nbd, outer, pts))
        if f[k] != 1:
            lnbd = abs(f[k])

    out: list[Contour] = []
    index_of = {}
    for tag, outer, pts in traced:
        if len(pts) < min_points:
            continue
        idx = np.asarray(pts)
        uv = np.column_stack([idx % w2 - 1, idx // w2 - 1])
        index_of[tag] = len(out)
        out.append(Contour(uv, is_outer=outer, parent=parent[tag]))
    for c in out:
        c.parent = index_of.get(c.parent, -1)
    return out


def select_target_contour(contours, expected_aspect: float, min_area: float, max_area: float,
                          max_aspect_deviation: float | None = None) -> Contour | None:
    """Contour with bounding-box aspect closest to ``expected_aspect`` within the area band."""
    if not expected_aspect > 0:
        raise ValueError("expected_aspect must be positive")
    best, best_score = None, math.inf
    for c in contours:
        if not (min_area <= c.area <= max_area):
            continue
        a = c.aspect
        if not (0 < a < math.inf):
            continue
        score = abs(math.log(a / expected_aspect))
        if max_aspect_deviation is not None and score > max_aspect_deviation:
            continue
        if score < best_score:
            best, best_score = c, score
    return best


def polygon_centroid(points) -> PixelPoint:
    """First-moment centroid (M10/M00, M01/M00) of a filled simple polygon."""
    p = np.asarray(points, dtype=float)
    x, y = p[:, 0], p[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    a = cross.sum() / 2.0
    if abs(a) < 1e-12:
        raise DegenerateContourError("zero-area contour has no centroid")
    cx = ((x + xn) * cross).sum() / (6.0 * a)
    cy = ((y + yn) * cross).sum() / (6.0 * a)
    return PixelPoint(float(cx), float(cy))


def contour_center(c: Contour) -> PixelPoint:
    return polygon_centroid(c.points)


# -------------------------------------------------------------- corners

def min_eigen_response(img, window_sigma: float = 1.2) -> np.ndarray:
    """Shi-Tomasi response: smaller eigenvalue of the smoothed gradient structure tensor."""
    g = np.asarray(img, dtype=np.float64) / 255.0
    ix = ndimage.sobel(g, axis=1) / 8.0
    iy = ndimage.sobel(g, axis=0) / 8.0
    a = ndimage.gaussian_filter(ix * ix, window_sigma)
    b = ndimage.gaussian_filter(ix * iy, window_sigma)
    c = ndimage.gaussian_filter(iy * iy, window_sigma)
    return 0.5 * ((a + c) - np.sqrt((a - c) ** 2 + 4.0 * b * b))


def pick_peaks(response: np.ndarray, max_count: int, min_distance: float,
               threshold: float) -> np.ndarray:
    """Greedy strongest-first local maxima at least ``min_distance`` apart.

    Returns (K, 2) integer (u, v) positions, strongest first.
    """
    local_max = response == ndimage.maximum_filter(response, size=3)
    cand = local_max & (response > threshold)
    vs, us = np.nonzero(cand)
    if len(vs) == 0:
        return np.zeros((0, 2), dtype=int)
    order = np.argsort(-response[vs, us], kind="stable")
    r = int(math.ceil(min_distance))
    h, w = response.shape
    blocked = np.zeros((h, w), dtype=bool)
    yy, xx = np.mgrid[-r : r + 1, -r : r + 1]
    disk = xx * xx + yy * yy < min_distance * min_distance
    picked = []
    for i in order:
        u, v = us[i], vs[i]
        if blocked[v, u]:
            continue
        picked.append((u, v))
        if len(picked) >= max_count:
            break
        v0, v1 = max(v - r, 0), min(v + r + 1, h)
        u0, u1 = max(u - r, 0), min(u + r + 1, w)
        blocked[v0:v1, u0:u1] |= disk[v0 - v + r : v1 - v + r, u0 - u + r : u1 - u + r]
    return np.asarray(picked, dtype=int).reshape(-1, 2)


def refine_corners(img, corners, half_window: int = 4, iterations: int = 6) -> np.ndarray:
    """Sub-pixel refinement: the point where surrounding gradients are orthogonal to the offset."""
    g = ndimage.gaussian_filter(np.asarray(img, dtype=np.float64), 0.8)
    gx = ndimage.sobel(g, axis=1)
    gy = ndimage.sobel(g, axis=0)
    h, w = g.shape
    out = np.asarray(corners, dtype=float).copy()
    yy, xx = np.mgrid[-half_window : half_window + 1, -half_window : half_window + 1]
    wts = np.exp(-(xx * xx + yy * yy) / (2.0 * (half_window / 1.5) ** 2)).ravel()
    for n, (u, v) in enumerate(out):
        p = np.array([u, v])
        for _ in range(iterations):
            cu, cv = int(round(p[0])), int(round(p[1]))
            if not (half_window <= cu < w - half_window and half_window <= cv < h - half_window):
                break
            sl = (slice(cv - half_window, cv + half_window + 1), slice(cu - half_window, cu + half_window + 1))
            ax = gx[sl].ravel()
            ay = gy[sl].ravel()
            qx = (xx + cu).ravel()
            qy = (yy + cv).ravel()
            a, b, c = (wts * ax * ax).sum(), (wts * ax * ay).sum(), (wts * ay * ay).sum()
            bx = (wts * (ax * ax * qx + ax * ay * qy)).sum()
            by = (wts * (ax * ay * qx + ay * ay * qy)).sum()
            det = a * c - b * b
            if det <= 1e-9 * max(a * c, 1e-12):
                break
            new = np.array([(c * bx - b * by) / det, (a * by - b * bx) / det])
            if np.hypot(*(new - p)) > half_window:
                break
            done = np.hypot(*(new - p)) < 0.01
            p = new
            if done:
                break
        out[n] = p
    return out


def order_corners(pts) -> np.ndarray:
    """Order four points as left-top, left-bottom, right-top, right-bottom."""
    p = np.asarray(pts, dtype=float).reshape(4, 2)
    by_u = p[np.argsort(p[:, 0], kind="stable")]
    left = by_u[:2][np.argsort(by_u[:2, 1], kind="stable")]
    right = by_u[2:][np.argsort(by_u[2:, 1], kind="stable")]
    return np.vstack([left, right])


def quad_is_convex(corners) -> bool:
    """Convexity of an LT, LB, RT, RB ordered quad."""
    lt, lb, rt, rb = np.asarray(corners, dtype=float)
    ring = [lt, lb, rb, rt]
    signs = []
    for i in range(4):
        a, b, c = ring[i], ring[(i + 1) % 4], ring[(i + 2) % 4]
        (x1, y1), (x2, y2) = b - a, c - b
        signs.append(x1 * y2 - y1 * x2)
    signs = np.asarray(signs)
    return bool(np.all(signs > 0) or np.all(signs < 0))


def detect_corners(img, region: Contour, margin: int = 6, window_sigma: float = 1.2,
                   min_response: float = 2e-4) -> np.ndarray | None:
    """Four strongest min-eigenvalue corners in the region's bounding box.

    Returns (4, 2) corners ordered LT, LB, RT, RB, or ``None`` when fewer than
    four usable corners exist.
    """
    img = np.asarray(img)
    h, w = img.shape
    u0, v0, u1, v1 = region.bbox
    cu0, cv0 = max(int(u0) - margin, 0), max(int(v0) - margin, 0)
    cu1, cv1 = min(int(math.ceil(u1)) + margin + 1, w), min(int(math.ceil(v1)) + margin + 1, h)
    if cu1 - cu0 < 3 or cv1 - cv0 < 3:
        return None
    # pad the crop so the response is not distorted by the crop border
    pad = 4
    pu0, pv0 = max(cu0 - pad, 0), max(cv0 - pad, 0)
    pu1, pv1 = min(cu1 + pad, w), min(cv1 + pad, h)
    resp = min_eigen_response(img[pv0:pv1, pu0:pu1], window_sigma)
    resp = resp[cv0 - pv0 : cv1 - pv0, cu0 - pu0 : cu1 - pu0]
    min_dist = max(3.0, min(u1 - u0, v1 - v0) / 3.0)
    peaks = pick_peaks(resp, 4, min_dist, min_response)
    if len(peaks) < 4:
        return None
    pts = peaks.astype(float) + [cu0, cv0]
    pts = refine_corners(img, pts)
    corners = order_corners(pts)
    if not quad_is_convex(corners):
        return None
    return corners


# ---------------------------------------------------- depth / yaw error

def estimate_depth(apparent_width: float, real_width: float, fx: float) -> float:
    """Distance to a planar target of known width: fx * Wr / Wi."""
    if not apparent_width > 0:
        raise DomainError("apparent width must be positive")
    if not real_width > 0:
        raise DomainError("real width must be positive")
    return fx * real_width / apparent_width


def apparent_width(corners) -> float:
    """Mean of the top and bottom horizontal extents of an ordered quad."""
    lt, lb, rt, rb = np.asarray(corners, dtype=float)
    return 0.5 * ((rt[0] - lt[0]) + (rb[0] - lb[0]))


def _round_half_away(x: float) -> int:
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


def yaw_error(corners) -> int:
    """Right-edge minus left-edge vertical extent, in whole pixels."""
    (_, y1), (_, y2), (_, y3), (_, y4) = np.asarray(corners, dtype=float)
    return _round_half_away((y4 - y3) - (y2 - y1))


# -------------------------------------------------------------- pipeline

def observe_target(img, fx: float, cfg: VisionConfig | None = None) -> TargetObservation | None:
    """Full entry-phase perception on one frame; ``None`` means nothing usable was seen."""
    cfg = cfg or VisionConfig()
    edges = canny_edges(img, cfg.canny_low, cfg.canny_high, cfg.canny_sigma)
    outer = [c for c in extract_contours(edges) if c.is_outer]
    target = select_target_contour(outer, cfg.expected_aspect, cfg.min_area, cfg.max_area,
                                   cfg.max_aspect_deviation)
    if target is None:
        return None
    try:
        center = contour_center(target)
    except DegenerateContourError:
        return None
    corners = detect_corners(img, target, cfg.corner_margin, cfg.corner_window_sigma,
                             cfg.corner_min_response)
    if corners is None:
        return None
    wi = apparent_width(corners)
    if wi <= 0:
        return None
    return TargetObservation(
        corners=corners,
        center=center,
        apparent_width=wi,
        depth=estimate_depth(wi, cfg.real_width, fx),
        yaw_error=yaw_error(corners),
        contour=target,
    )
